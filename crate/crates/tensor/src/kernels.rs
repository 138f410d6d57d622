//! Slice-level forward and backward kernels. Shapes are validated by the
//! caller in `tape.rs`.

pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `gx += Wᵀ g`
pub fn matvec_t_acc(w: &[f64], g: &[f64], rows: usize, cols: usize, gx: &mut [f64]) {
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (dst, wv) in gx.iter_mut().zip(row) {
            *dst += gr * wv;
        }
    }
}

/// `gw += g xᵀ`
pub fn outer_acc(g: &[f64], x: &[f64], cols: usize, gw: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (dst, xv) in row.iter_mut().zip(x) {
            *dst += gr * xv;
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output.
pub fn elu_grad(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LSTM cell forward. Gate rows are ordered input, forget, candidate, output.
/// Returns `(h', c')` and stores activated gates and `tanh(c')` in `cache`.
pub struct LstmCache {
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn lstm_forward(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b: &[f64],
    hidden: usize,
) -> (Vec<f64>, LstmCache) {
    let n_in = x.len();
    let mut z = b.to_vec();
    matvec(w_ih, x, 4 * hidden, n_in, &mut z);
    matvec(w_hh, h, 4 * hidden, hidden, &mut z);
    for k in 0..hidden {
        z[k] = sigmoid(z[k]);
        z[hidden + k] = sigmoid(z[hidden + k]);
        z[2 * hidden + k] = z[2 * hidden + k].tanh();
        z[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
    }
    let mut out = vec![0.0; 2 * hidden];
    let mut tanh_c = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (z[k], z[hidden + k], z[2 * hidden + k], z[3 * hidden + k]);
        let c_new = f * c[k] + i * g;
        tanh_c[k] = c_new.tanh();
        out[k] = o * tanh_c[k];
        out[hidden + k] = c_new;
    }
    (out, LstmCache { gates: z, tanh_c })
}

/// Gradient of the pre-activation gate vector given upstream `dh'`, `dc'`.
/// Also returns `dc_prev`.
pub fn lstm_backward_gates(
    cache: &LstmCache,
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
    hidden: usize,
) -> (Vec<f64>, Vec<f64>) {
    let z = &cache.gates;
    let mut dz = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (z[k], z[hidden + k], z[2 * hidden + k], z[3 * hidden + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let d_i = dct * g;
        let d_g = dct * i;
        let d_f = dct * c_prev[k];
        dc_prev[k] = dct * f;
        dz[k] = d_i * i * (1.0 - i);
        dz[hidden + k] = d_f * f * (1.0 - f);
        dz[2 * hidden + k] = d_g * (1.0 - g * g);
        dz[3 * hidden + k] = d_o * o * (1.0 - o);
    }
    (dz, dc_prev)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output position receiving input row/col `i` through kernel offset `k`.
    #[inline]
    fn out_index(&self, i: usize, k: usize, extent: usize) -> Option<usize> {
        let num = i + self.pad;
        if num < k {
            return None;
        }
        let d = num - k;
        if !d.is_multiple_of(self.stride) {
            return None;
        }
        let o = d / self.stride;
        (o < extent).then_some(o)
    }
}

/// Cross-correlation, scattered from non-zero inputs (the interaction maps
/// are mostly empty).
pub fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.c_out * plane];
    for (o, b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(*b);
    }
    for c in 0..g.c_in {
        for iy in 0..g.h {
            for ix in 0..g.w {
                let v = input[(c * g.h + iy) * g.w + ix];
                if v == 0.0 {
                    continue;
                }
                for ky in 0..g.kh {
                    let Some(oy) = g.out_index(iy, ky, g.oh) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ox) = g.out_index(ix, kx, g.ow) else {
                            continue;
                        };
                        for o in 0..g.c_out {
                            let k = kernel[((o * g.c_in + c) * g.kh + ky) * g.kw + kx];
                            out[o * plane + oy * g.ow + ox] += k * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates kernel, bias and input gradients.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    g_input: &mut [f64],
    g_kernel: &mut [f64],
    g_bias: &mut [f64],
) {
    let plane = g.oh * g.ow;
    for (o, gb) in g_bias.iter_mut().enumerate() {
        *gb += grad_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    for c in 0..g.c_in {
        for iy in 0..g.h {
            for ix in 0..g.w {
                let idx = (c * g.h + iy) * g.w + ix;
                let v = input[idx];
                let mut acc = 0.0;
                for ky in 0..g.kh {
                    let Some(oy) = g.out_index(iy, ky, g.oh) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ox) = g.out_index(ix, kx, g.ow) else {
                            continue;
                        };
                        for o in 0..g.c_out {
                            let go = grad_out[o * plane + oy * g.ow + ox];
                            let kidx = ((o * g.c_in + c) * g.kh + ky) * g.kw + kx;
                            acc += go * kernel[kidx];
                            if v != 0.0 {
                                g_kernel[kidx] += go * v;
                            }
                        }
                    }
                }
                g_input[idx] += acc;
            }
        }
    }
}

/// Max over each window; ties resolve to the first element in row-major order.
pub fn maxpool_forward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if best_idx == usize::MAX || input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

/// ln(2π)
pub const LN_TWO_PI: f64 = 1.837_877_066_409_345_5;

/// Negative log of the bivariate normal density at `target` for
/// `p = [mu_x, mu_y, sigma_x, sigma_y, rho]`.
pub fn bivariate_nll(p: &[f64], target: [f64; 2]) -> f64 {
    let (_, _, q, z) = bivariate_terms(p, target);
    LN_TWO_PI + p[2].ln() + p[3].ln() + 0.5 * q.ln() + z / (2.0 * q)
}

fn bivariate_terms(p: &[f64], target: [f64; 2]) -> (f64, f64, f64, f64) {
    let dx = (target[0] - p[0]) / p[2];
    let dy = (target[1] - p[1]) / p[3];
    let rho = p[4];
    let q = 1.0 - rho * rho;
    let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
    (dx, dy, q, z)
}

/// Gradient of [`bivariate_nll`] with respect to the five parameters.
pub fn bivariate_nll_grad(p: &[f64], target: [f64; 2]) -> [f64; 5] {
    let (dx, dy, q, z) = bivariate_terms(p, target);
    let (sx, sy, rho) = (p[2], p[3], p[4]);
    let ax = dx - rho * dy;
    let ay = dy - rho * dx;
    [
        -ax / (q * sx),
        -ay / (q * sy),
        1.0 / sx - dx * ax / (q * sx),
        1.0 / sy - dy * ay / (q * sy),
        -rho / q - dx * dy / q + rho * z / (q * q),
    ]
}
