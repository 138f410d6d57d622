use crate::kernels::{self, ConvGeom, LstmCache};
use crate::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Lstm {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: LstmCache,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    Scatter {
        parts: Vec<(Var, usize)>,
        cells: usize,
    },
    BivariateNll {
        params: Var,
        target: [f64; 2],
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Record of executed operations for one forward pass.
///
/// Nodes are appended in execution order, which is a topological order, so
/// the backward pass simply walks the node list in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// A constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Brings a parameter onto the tape. Repeated requests for the same
    /// parameter return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return Ok(*v);
        }
        let v = self.push("param", store.get(id).value.clone(), Op::Param(id))?;
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        Ok(v)
    }

    /// `W x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        if ws.len() != 2 || xv.shape() != [ws[1]] {
            return Err(mismatch("linear", wv, xv));
        }
        if bv.shape() != [ws[0]] {
            return Err(mismatch("linear", wv, bv));
        }
        let mut out = bv.data().to_vec();
        kernels::matvec(wv.data(), xv.data(), ws[0], ws[1], &mut out);
        self.push("linear", Tensor::vector(out), Op::Linear { x, w, b })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, t, op)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary("elu", a, kernels::elu, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// One LSTM step. Returns `(h', c')`.
    ///
    /// `w_ih` is `[4H, I]`, `w_hh` is `[4H, H]`, `b` is `[4H]`; gate blocks are
    /// ordered input, forget, candidate, output.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<(Var, Var)> {
        let hidden = self.value(h).len();
        let n_in = self.value(x).len();
        let checks = [
            (self.value(c).shape() == [hidden], c, h),
            (self.value(h).shape() == [hidden], h, c),
            (self.value(x).shape() == [n_in], x, w_ih),
            (self.value(w_ih).shape() == [4 * hidden, n_in], w_ih, x),
            (self.value(w_hh).shape() == [4 * hidden, hidden], w_hh, h),
            (self.value(b).shape() == [4 * hidden], b, h),
        ];
        if let Some((_, l, r)) = checks.iter().find(|(ok, _, _)| !ok) {
            return Err(mismatch("lstm_cell", self.value(*l), self.value(*r)));
        }
        let (out, cache) = kernels::lstm_forward(
            self.value(x).data(),
            self.value(h).data(),
            self.value(c).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b).data(),
            hidden,
        );
        let joint = self.push(
            "lstm_cell",
            Tensor::vector(out),
            Op::Lstm {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                cache,
            },
        )?;
        let h_new = self.slice(joint, 0, hidden)?;
        let c_new = self.slice(joint, hidden, hidden)?;
        Ok((h_new, c_new))
    }

    /// 2-D cross-correlation of a `[C, H, W]` input with `[O, C, kh, kw]`
    /// kernels. Output extent per axis is `(n + 2p - k) / s + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (iv, kv, bv) = (self.value(input), self.value(kernel), self.value(bias));
        let (is, ks) = (iv.shape(), kv.shape());
        if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] {
            return Err(mismatch("conv2d", iv, kv));
        }
        if bv.shape() != [ks[0]] {
            return Err(mismatch("conv2d", kv, bv));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        let (ph, pw) = (is[1] + 2 * padding, is[2] + 2 * padding);
        if ks[2] > ph || ks[3] > pw {
            return Err(TensorError::WindowTooLarge {
                op: "conv2d",
                input: is.to_vec(),
                window: ks[2].max(ks[3]),
            });
        }
        let geom = ConvGeom {
            c_in: is[0],
            h: is[1],
            w: is[2],
            c_out: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad: padding,
            oh: (ph - ks[2]) / stride + 1,
            ow: (pw - ks[3]) / stride + 1,
        };
        let out = kernels::conv2d_forward(iv.data(), kv.data(), bv.data(), &geom);
        let t = Tensor::new(vec![geom.c_out, geom.oh, geom.ow], out)?;
        self.push(
            "conv2d",
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        )
    }

    /// Max-pool over square windows of a `[C, H, W]` input.
    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let iv = self.value(input);
        let s = iv.shape();
        if s.len() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2d",
                reason: format!("expected [C, H, W], got {s:?}"),
            });
        }
        if window == 0 || stride == 0 || window > s[1] || window > s[2] {
            return Err(TensorError::WindowTooLarge {
                op: "maxpool2d",
                input: s.to_vec(),
                window,
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (out, argmax) = kernels::maxpool_forward(iv.data(), c, h, w, window, stride);
        let t = Tensor::new(
            vec![c, (h - window) / stride + 1, (w - window) / stride + 1],
            out,
        )?;
        self.push("maxpool2d", t, Op::MaxPool { input, argmax })
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no parts".into(),
        })?;
        let first_v = self.value(*first);
        let tail: Vec<usize> = first_v.shape().iter().skip(1).copied().collect();
        let rank = first_v.shape().len().max(1);
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let pv = self.value(*p);
            let ps = pv.shape();
            let (plead, ptail) = match ps.split_first() {
                Some((l, t)) => (*l, t),
                None => (1, &[][..]),
            };
            if ps.len().max(1) != rank || ptail != tail.as_slice() {
                return Err(mismatch("concat", first_v, pv));
            }
            lead += plead;
            data.extend_from_slice(pv.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        self.push("concat", t, Op::Concat(parts.to_vec()))
    }

    /// Contiguous 1-D view `[start, start + len)` of the flattened input.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let iv = self.value(input);
        if len == 0 || start + len > iv.len() {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("[{start}, {}) out of {} elements", start + len, iv.len()),
            });
        }
        let t = Tensor::vector(iv.data()[start..start + len].to_vec());
        self.push("slice", t, Op::Slice { input, start })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(input))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    /// Writes each `(vector, cell)` pair into a zero `[C, rows, cols]` grid:
    /// `grid[ch, cell] = vector[ch]`. Cells must be distinct.
    pub fn scatter_grid(
        &mut self,
        parts: &[(Var, usize)],
        channels: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        let cells = rows * cols;
        let mut grid = Tensor::zeros(&[channels, rows, cols]);
        let mut used = vec![false; cells];
        for &(v, cell) in parts {
            let pv = self.value(v);
            if pv.shape() != [channels] {
                return Err(TensorError::ShapeMismatch {
                    op: "scatter_grid",
                    left: pv.shape().to_vec(),
                    right: vec![channels],
                });
            }
            if cell >= cells || used[cell] {
                return Err(TensorError::InvalidArgument {
                    op: "scatter_grid",
                    reason: format!("cell {cell} out of range or occupied"),
                });
            }
            used[cell] = true;
            let data = grid.data_mut();
            for (ch, x) in pv.data().iter().enumerate() {
                data[ch * cells + cell] = *x;
            }
        }
        self.push(
            "scatter_grid",
            grid,
            Op::Scatter {
                parts: parts.to_vec(),
                cells,
            },
        )
    }

    /// Negative log-density of `target` under the bivariate normal given by
    /// `params = [mu_x, mu_y, sigma_x, sigma_y, rho]`.
    pub fn bivariate_nll(&mut self, params: Var, target: [f64; 2]) -> Result<Var> {
        let p = self.value(params);
        if p.shape() != [5] {
            return Err(TensorError::ShapeMismatch {
                op: "bivariate_nll",
                left: p.shape().to_vec(),
                right: vec![5],
            });
        }
        let d = p.data();
        if !(d[2] > 0.0 && d[3] > 0.0 && d[4].abs() < 1.0) {
            return Err(TensorError::InvalidArgument {
                op: "bivariate_nll",
                reason: format!("need sigma > 0 and |rho| < 1, got {:?}", &d[2..]),
            });
        }
        let v = kernels::bivariate_nll(d, target);
        self.push(
            "bivariate_nll",
            Tensor::scalar(v),
            Op::BivariateNll { params, target },
        )
    }

    /// Reverse pass from a scalar `loss`, accumulating into `store` grads.
    /// The tape can be replayed only once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| self.nodes[v.0].value.data();
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = self.nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (dst, s) in p.grad.data_mut().iter_mut().zip(&g) {
                        *dst += s;
                    }
                }
                Op::Linear { x, w, b } => {
                    let ws = self.nodes[w.0].value.shape();
                    let (rows, cols) = (ws[0], ws[1]);
                    acc(*x, &mut |gx| {
                        kernels::matvec_t_acc(val(*w), &g, rows, cols, gx)
                    });
                    acc(*w, &mut |gw| kernels::outer_acc(&g, val(*x), cols, gw));
                    acc(*b, &mut |gb| add_into(gb, &g));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*b, &mut |gb| {
                        gb.iter_mut().zip(&g).for_each(|(d, s)| *d -= s)
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |ga| {
                        for ((d, s), y) in ga.iter_mut().zip(&g).zip(bv) {
                            *d += s * y;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for ((d, s), x) in gb.iter_mut().zip(&g).zip(av) {
                            *d += s * x;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc(*a, &mut |ga| {
                        ga.iter_mut().zip(&g).for_each(|(d, s)| *d += s * k)
                    });
                }
                Op::Elu(a) => {
                    let (xv, yv) = (val(*a), node.value.data());
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * kernels::elu_grad(xv[i], yv[i]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
                        }
                    });
                }
                Op::Exp(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g[i] * yv[i];
                        }
                    });
                }
                Op::Sum(a) => {
                    acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::Lstm {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    b,
                    cache,
                } => {
                    let hidden = g.len() / 2;
                    let (dz, dc_prev) = kernels::lstm_backward_gates(
                        cache,
                        val(*c),
                        &g[..hidden],
                        &g[hidden..],
                        hidden,
                    );
                    let n_in = self.nodes[x.0].value.len();
                    acc(*x, &mut |gx| {
                        kernels::matvec_t_acc(val(*w_ih), &dz, 4 * hidden, n_in, gx)
                    });
                    acc(*h, &mut |gh| {
                        kernels::matvec_t_acc(val(*w_hh), &dz, 4 * hidden, hidden, gh)
                    });
                    acc(*c, &mut |gc| add_into(gc, &dc_prev));
                    acc(*w_ih, &mut |gw| kernels::outer_acc(&dz, val(*x), n_in, gw));
                    acc(*w_hh, &mut |gw| {
                        kernels::outer_acc(&dz, val(*h), hidden, gw)
                    });
                    acc(*b, &mut |gb| add_into(gb, &dz));
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let mut gi = vec![0.0; self.nodes[input.0].value.len()];
                    let mut gk = vec![0.0; self.nodes[kernel.0].value.len()];
                    let mut gb = vec![0.0; geom.c_out];
                    kernels::conv2d_backward(
                        val(*input),
                        val(*kernel),
                        &g,
                        geom,
                        &mut gi,
                        &mut gk,
                        &mut gb,
                    );
                    acc(*input, &mut |d| add_into(d, &gi));
                    acc(*kernel, &mut |d| add_into(d, &gk));
                    acc(*bias, &mut |d| add_into(d, &gb));
                }
                Op::MaxPool { input, argmax } => {
                    acc(*input, &mut |gi| {
                        for (s, &i) in g.iter().zip(argmax) {
                            gi[i] += s;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(*p, &mut |gp| add_into(gp, &g[off..off + n]));
                        off += n;
                    }
                }
                Op::Slice { input, start } => {
                    acc(*input, &mut |gi| {
                        add_into(&mut gi[*start..*start + g.len()], &g)
                    });
                }
                Op::Reshape(a) => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                }
                Op::Scatter { parts, cells } => {
                    for (v, cell) in parts {
                        acc(*v, &mut |gv| {
                            for (ch, d) in gv.iter_mut().enumerate() {
                                *d += g[ch * cells + cell];
                            }
                        });
                    }
                }
                Op::BivariateNll { params, target } => {
                    let d = kernels::bivariate_nll_grad(val(*params), *target);
                    acc(*params, &mut |gp| {
                        for i in 0..5 {
                            gp[i] += g[0] * d[i];
                        }
                    });
                }
            }
        }
        if store.iter().any(|p| !p.grad.all_finite()) {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
