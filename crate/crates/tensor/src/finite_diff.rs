//! Central finite-difference checks against the tape gradients.

use rand::Rng;

use crate::rng::{self, Prng};
use crate::{ParamStore, Result, Tape, Tensor, Var};

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to rounding do not register as failures.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the gradients already accumulated in `store` against central
/// differences of `loss` with step `h` for every scalar parameter.
///
/// `loss` must evaluate the same function the analytic gradients came from
/// using the current values in the store it is handed.
pub fn check_store<F>(store: &ParamStore, h: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for pi in 0..store.len() {
        let id = crate::ParamId(pi);
        let n = store.get(id).value.len();
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + h;
            let up = loss(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - h;
            let down = loss(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric);
            out.checked += 1;
            if err > out.max_rel_error || out.worst_param.is_empty() {
                out.max_rel_error = err.max(out.max_rel_error);
                if err >= out.max_rel_error {
                    out.worst_param = store.get(id).name.clone();
                    out.worst_index = i;
                }
            }
        }
    }
    Ok(out)
}

/// Finite-difference step used by the checks.
pub const STEP: f64 = 1e-5;

/// Worst relative error observed for one operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub configs: usize,
    pub max_rel_error: f64,
}

/// Gradient of `Σ r ⊙ build(params)` for a fixed random `r`, checked against
/// central differences. Returns the worst relative error.
pub fn check_op<B>(store: &ParamStore, rng: &mut Prng, build: B) -> Result<f64>
where
    B: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let out = build(&mut tape, &analytic)?;
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let weights = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let project = |tape: &mut Tape, out: Var| -> Result<Var> {
        let r = tape.constant(weights.clone())?;
        let prod = tape.mul(out, r)?;
        tape.sum(prod)
    };
    let loss = project(&mut tape, out)?;
    tape.backward(loss, &mut analytic)?;
    let report = check_store(&analytic, STEP, |s| {
        let mut t = Tape::new();
        let o = build(&mut t, s)?;
        let l = project(&mut t, o)?;
        Ok(t.value(l).data()[0])
    })?;
    Ok(report.max_rel_error)
}

fn uniform(rng: &mut Prng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values with magnitude in `[1e-2, hi)` and random sign, keeping clear of
/// kinks at the origin.
fn away_from_zero(rng: &mut Prng, n: usize, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(1e-2..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn store_of(entries: Vec<(&str, Vec<usize>, Vec<f64>)>) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    for (name, shape, data) in entries {
        s.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(s)
}

/// Runs `configs` random shape/value configurations through every
/// differentiable operation.
pub fn op_suite(seed: u64, configs: usize) -> Result<Vec<OpReport>> {
    let mut rng = rng::seeded(seed);
    let mut reports = Vec::new();
    let mut run = |op: &'static str,
                   rng: &mut Prng,
                   case: &mut dyn FnMut(&mut Prng) -> Result<f64>|
     -> Result<()> {
        let mut worst: f64 = 0.0;
        for _ in 0..configs {
            worst = worst.max(case(rng)?);
        }
        reports.push(OpReport {
            op,
            configs,
            max_rel_error: worst,
        });
        Ok(())
    };

    run("linear", &mut rng, &mut |rng| {
        let (o, i) = (rng.random_range(1..6), rng.random_range(1..6));
        let s = store_of(vec![
            ("x", vec![i], uniform(rng, i, -2.0, 2.0)),
            ("w", vec![o, i], uniform(rng, o * i, -2.0, 2.0)),
            ("b", vec![o], uniform(rng, o, -2.0, 2.0)),
        ])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            let w = t.param(s, s.id("w")?)?;
            let b = t.param(s, s.id("b")?)?;
            t.linear(x, w, b)
        })
    })?;

    type UnaryFn = fn(&mut Tape, Var) -> Result<Var>;
    let unaries: [(&'static str, UnaryFn, f64); 5] = [
        ("elu", |t, v| t.elu(v), 3.0),
        ("tanh", |t, v| t.tanh(v), 3.0),
        ("sigmoid", |t, v| t.sigmoid(v), 4.0),
        ("exp", |t, v| t.exp(v), 2.0),
        ("scale", |t, v| t.scale(v, -1.75), 3.0),
    ];
    for (name, f, range) in unaries {
        run(name, &mut rng, &mut |rng| {
            let n = rng.random_range(1..8);
            let s = store_of(vec![("x", vec![n], away_from_zero(rng, n, range))])?;
            check_op(&s, rng, |t, s| {
                let x = t.param(s, s.id("x")?)?;
                f(t, x)
            })
        })?;
    }

    type BinaryFn = fn(&mut Tape, Var, Var) -> Result<Var>;
    let binaries: [(&'static str, BinaryFn); 3] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ];
    for (name, f) in binaries {
        run(name, &mut rng, &mut |rng| {
            let shape = vec![rng.random_range(1..4), rng.random_range(1..4)];
            let n = shape[0] * shape[1];
            let s = store_of(vec![
                ("a", shape.clone(), uniform(rng, n, -2.0, 2.0)),
                ("b", shape, uniform(rng, n, -2.0, 2.0)),
            ])?;
            check_op(&s, rng, |t, s| {
                let a = t.param(s, s.id("a")?)?;
                let b = t.param(s, s.id("b")?)?;
                f(t, a, b)
            })
        })?;
    }

    run("sum", &mut rng, &mut |rng| {
        let n = rng.random_range(1..10);
        let s = store_of(vec![("x", vec![n], uniform(rng, n, -2.0, 2.0))])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            t.sum(x)
        })
    })?;

    run("lstm_cell", &mut rng, &mut |rng| {
        let (i, h) = (rng.random_range(1..5), rng.random_range(1..5));
        let s = store_of(vec![
            ("x", vec![i], uniform(rng, i, -1.5, 1.5)),
            ("h", vec![h], uniform(rng, h, -1.0, 1.0)),
            ("c", vec![h], uniform(rng, h, -1.5, 1.5)),
            ("w_ih", vec![4 * h, i], uniform(rng, 4 * h * i, -1.0, 1.0)),
            ("w_hh", vec![4 * h, h], uniform(rng, 4 * h * h, -1.0, 1.0)),
            ("b", vec![4 * h], uniform(rng, 4 * h, -0.5, 0.5)),
        ])?;
        check_op(&s, rng, |t, s| {
            let vars: Vec<Var> = ["x", "h", "c", "w_ih", "w_hh", "b"]
                .iter()
                .map(|n| t.param(s, s.id(n)?))
                .collect::<Result<_>>()?;
            let (hn, cn) = t.lstm_cell(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
            t.concat(&[hn, cn])
        })
    })?;

    run("conv2d", &mut rng, &mut |rng| {
        let c = rng.random_range(1..4);
        let o = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let h = rng.random_range(k.max(2)..6);
        let w = rng.random_range(k.max(2)..6);
        let mut input = uniform(rng, c * h * w, -2.0, 2.0);
        // sparse inputs exercise the zero-skipping path
        for v in input.iter_mut() {
            if rng.random_bool(0.3) {
                *v = 0.0;
            }
        }
        let s = store_of(vec![
            ("x", vec![c, h, w], input),
            (
                "k",
                vec![o, c, k, k],
                uniform(rng, o * c * k * k, -1.0, 1.0),
            ),
            ("b", vec![o], uniform(rng, o, -1.0, 1.0)),
        ])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            let kv = t.param(s, s.id("k")?)?;
            let b = t.param(s, s.id("b")?)?;
            t.conv2d(x, kv, b, stride, pad)
        })
    })?;

    run("maxpool2d", &mut rng, &mut |rng| {
        let c = rng.random_range(1..3);
        let window = rng.random_range(1..3);
        let stride = rng.random_range(1..3);
        let h = rng.random_range(window..6);
        let w = rng.random_range(window..6);
        // distinct values on a 0.01 lattice: no ties within the FD step
        let n = c * h * w;
        let mut vals: Vec<f64> = (0..n).map(|k| k as f64 * 0.01).collect();
        for k in (1..n).rev() {
            vals.swap(k, rng.random_range(0..=k));
        }
        let s = store_of(vec![("x", vec![c, h, w], vals)])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            t.maxpool2d(x, window, stride)
        })
    })?;

    run("concat", &mut rng, &mut |rng| {
        let parts = rng.random_range(1..4);
        let tail = rng.random_range(1..3);
        let mut entries = Vec::new();
        let names = ["p0", "p1", "p2"];
        for name in names.iter().take(parts) {
            let lead = rng.random_range(1..4);
            entries.push((
                *name,
                vec![lead, tail],
                uniform(rng, lead * tail, -2.0, 2.0),
            ));
        }
        let s = store_of(entries)?;
        check_op(&s, rng, |t, s| {
            let vars: Vec<Var> = names[..parts]
                .iter()
                .map(|n| t.param(s, s.id(n)?))
                .collect::<Result<_>>()?;
            t.concat(&vars)
        })
    })?;

    run("slice", &mut rng, &mut |rng| {
        let n = rng.random_range(1..10);
        let start = rng.random_range(0..n);
        let len = rng.random_range(1..=n - start);
        let s = store_of(vec![("x", vec![n], uniform(rng, n, -2.0, 2.0))])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            t.slice(x, start, len)
        })
    })?;

    run("reshape", &mut rng, &mut |rng| {
        let (a, b) = (rng.random_range(1..4), rng.random_range(1..4));
        let s = store_of(vec![("x", vec![a * b], uniform(rng, a * b, -2.0, 2.0))])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("x")?)?;
            t.reshape(x, &[b, a])
        })
    })?;

    run("scatter_grid", &mut rng, &mut |rng| {
        let ch = rng.random_range(1..4);
        let (rows, cols) = (rng.random_range(1..4), rng.random_range(1..4));
        let count = rng.random_range(1..=(rows * cols).min(3));
        let mut cells: Vec<usize> = (0..rows * cols).collect();
        for k in (1..cells.len()).rev() {
            cells.swap(k, rng.random_range(0..=k));
        }
        cells.truncate(count);
        let names = ["v0", "v1", "v2"];
        let entries = (0..count)
            .map(|k| (names[k], vec![ch], uniform(rng, ch, -2.0, 2.0)))
            .collect();
        let s = store_of(entries)?;
        check_op(&s, rng, |t, s| {
            let parts = (0..count)
                .map(|k| Ok((t.param(s, s.id(names[k])?)?, cells[k])))
                .collect::<Result<Vec<_>>>()?;
            t.scatter_grid(&parts, ch, rows, cols)
        })
    })?;

    run("bivariate_nll", &mut rng, &mut |rng| {
        let p = vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.3..2.0),
            rng.random_range(0.3..2.0),
            rng.random_range(-0.9..0.9),
        ];
        let target = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let s = store_of(vec![("p", vec![5], p)])?;
        check_op(&s, rng, |t, s| {
            let x = t.param(s, s.id("p")?)?;
            t.bivariate_nll(x, target)
        })
    })?;

    Ok(reports)
}
