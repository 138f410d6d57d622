//! Displacement metrics, kinematic baselines and the ablation harness.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, PredictMode, TraphicModel, Variant};
use crate::scene::StateSpace;
use crate::train::{train, Checkpoint, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdeConvention {
    /// Root of the mean squared displacement.
    #[default]
    Rmse,
    /// Mean Euclidean displacement.
    Mean,
}

impl FromStr for AdeConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(AdeConvention::Rmse),
            "mean" => Ok(AdeConvention::Mean),
            other => Err(Error::Config(format!("unknown ADE convention `{other}`"))),
        }
    }
}

fn check_lengths(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DatasetMismatch(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::DatasetMismatch("empty trajectory".into()));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// √(mean over frames of the squared displacement).
pub fn ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| sq_dist(*p, *t)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Displacement at the final frame.
pub fn fde(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(dist(pred[pred.len() - 1], truth[truth.len() - 1]))
}

/// Dataset-level FDE: RMSE (or mean) of per-sample final errors.
pub fn aggregate_fde(final_errors: &[f64], convention: AdeConvention) -> f64 {
    let n = final_errors.len().max(1) as f64;
    match convention {
        AdeConvention::Rmse => (final_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        AdeConvention::Mean => final_errors.iter().sum::<f64>() / n,
    }
}

/// Extrapolates the mean velocity over the last (up to) three history steps.
pub fn constant_velocity(history: &[[f64; 2]], dt: f64, tau: usize) -> Vec<[f64; 2]> {
    let n = history.len();
    let last = history[n - 1];
    let m = 3.min(n - 1);
    let v = if m == 0 {
        [0.0, 0.0]
    } else {
        let first = history[n - 1 - m];
        [
            (last[0] - first[0]) / (m as f64 * dt),
            (last[1] - first[1]) / (m as f64 * dt),
        ]
    };
    (1..=tau)
        .map(|k| {
            let t = k as f64 * dt;
            [last[0] + v[0] * t, last[1] + v[1] * t]
        })
        .collect()
}

/// Per-axis constant-velocity Kalman filter over the history, then
/// extrapolation of the filtered state.
pub fn kalman_cv(
    history: &[[f64; 2]],
    dt: f64,
    tau: usize,
    accel_noise: f64,
    meas_noise: f64,
) -> Vec<[f64; 2]> {
    let mut state = [[0.0; 2]; 2]; // per axis: (position, velocity)
    for axis in 0..2 {
        let mut x = [history[0][axis], 0.0];
        if history.len() > 1 {
            x[1] = (history[1][axis] - history[0][axis]) / dt;
        }
        let r = meas_noise * meas_noise;
        let mut p = [[r, 0.0], [0.0, 4.0 * r / (dt * dt) + 1.0]];
        let q = accel_noise * accel_noise;
        let (q11, q12, q22) = (q * dt.powi(4) / 4.0, q * dt.powi(3) / 2.0, q * dt * dt);
        for z in history.iter().skip(1).map(|h| h[axis]) {
            // predict
            x = [x[0] + dt * x[1], x[1]];
            p = [
                [
                    p[0][0] + dt * (p[1][0] + p[0][1]) + dt * dt * p[1][1] + q11,
                    p[0][1] + dt * p[1][1] + q12,
                ],
                [p[1][0] + dt * p[1][1] + q12, p[1][1] + q22],
            ];
            // update with a position measurement
            let s = p[0][0] + r;
            let k = [p[0][0] / s, p[1][0] / s];
            let innov = z - x[0];
            x = [x[0] + k[0] * innov, x[1] + k[1] * innov];
            p = [
                [(1.0 - k[0]) * p[0][0], (1.0 - k[0]) * p[0][1]],
                [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
            ];
        }
        state[axis] = x;
    }
    (1..=tau)
        .map(|k| {
            let t = k as f64 * dt;
            [state[0][0] + state[0][1] * t, state[1][0] + state[1][1] * t]
        })
        .collect()
}

/// Anything that maps an ego-centric state space to a mean future.
pub trait Predictor {
    fn name(&self) -> String;
    fn predict(&self, state: &StateSpace) -> Result<Vec<[f64; 2]>>;
}

impl Predictor for TraphicModel {
    fn name(&self) -> String {
        self.config().variant.display_name().to_string()
    }

    fn predict(&self, state: &StateSpace) -> Result<Vec<[f64; 2]>> {
        TraphicModel::predict(self, state, PredictMode::Mean)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn name(&self) -> String {
        "constant-velocity".into()
    }

    fn predict(&self, state: &StateSpace) -> Result<Vec<[f64; 2]>> {
        Ok(constant_velocity(
            &state.ego_state().positions,
            state.dt,
            state.future.len(),
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KalmanBaseline {
    /// Acceleration noise (m/s²).
    pub accel_noise: f64,
    /// Position measurement noise (m).
    pub meas_noise: f64,
}

impl Default for KalmanBaseline {
    fn default() -> Self {
        Self {
            accel_noise: 1.0,
            meas_noise: 0.1,
        }
    }
}

impl Predictor for KalmanBaseline {
    fn name(&self) -> String {
        "kalman-cv".into()
    }

    fn predict(&self, state: &StateSpace) -> Result<Vec<[f64; 2]>> {
        Ok(kalman_cv(
            &state.ego_state().positions,
            state.dt,
            state.future.len(),
            self.accel_noise,
            self.meas_noise,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetric {
    pub seconds: f64,
    pub frames: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub samples: usize,
    pub convention: AdeConvention,
    /// Over the full prediction span.
    pub ade: f64,
    pub fde: f64,
    /// At whole seconds 1, 2, … within the span.
    pub horizons: Vec<HorizonMetric>,
}

/// Pools per-frame errors over samples.
#[derive(Debug, Clone, Default)]
pub struct ErrorPool {
    /// Per sample, the displacement at each future frame.
    errors: Vec<Vec<f64>>,
}

impl ErrorPool {
    pub fn add(&mut self, pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<()> {
        check_lengths(pred, truth)?;
        if let Some(first) = self.errors.first() {
            if first.len() != pred.len() {
                return Err(Error::DatasetMismatch(format!(
                    "samples disagree on horizon: {} vs {}",
                    first.len(),
                    pred.len()
                )));
            }
        }
        self.errors
            .push(pred.iter().zip(truth).map(|(p, t)| dist(*p, *t)).collect());
        Ok(())
    }

    fn ade_upto(&self, frames: usize, c: AdeConvention) -> f64 {
        let n = (self.errors.len() * frames).max(1) as f64;
        let pooled = self.errors.iter().flat_map(|e| e[..frames].iter());
        match c {
            AdeConvention::Rmse => (pooled.map(|e| e * e).sum::<f64>() / n).sqrt(),
            AdeConvention::Mean => pooled.sum::<f64>() / n,
        }
    }

    fn fde_at(&self, frames: usize, c: AdeConvention) -> f64 {
        let finals: Vec<f64> = self.errors.iter().map(|e| e[frames - 1]).collect();
        aggregate_fde(&finals, c)
    }

    pub fn report(&self, name: &str, dt: f64, convention: AdeConvention) -> MetricReport {
        let tau = self.errors.first().map_or(0, |e| e.len());
        let mut horizons = Vec::new();
        if tau > 0 {
            let mut sec = 1;
            loop {
                let frames = (sec as f64 / dt).round() as usize;
                if frames == 0 || frames > tau {
                    break;
                }
                horizons.push(HorizonMetric {
                    seconds: sec as f64,
                    frames,
                    ade: self.ade_upto(frames, convention),
                    fde: self.fde_at(frames, convention),
                });
                sec += 1;
            }
        }
        MetricReport {
            name: name.to_string(),
            samples: self.errors.len(),
            convention,
            ade: if tau > 0 {
                self.ade_upto(tau, convention)
            } else {
                0.0
            },
            fde: if tau > 0 {
                self.fde_at(tau, convention)
            } else {
                0.0
            },
            horizons,
        }
    }
}

/// Mean-mode evaluation over a dataset, aggregated in sample order.
pub fn run_eval(
    predictor: &dyn Predictor,
    data: &[StateSpace],
    convention: AdeConvention,
) -> Result<MetricReport> {
    let mut pool = ErrorPool::default();
    let mut dt = None;
    for s in data {
        if dt.is_some_and(|d: f64| (d - s.dt).abs() > 1e-12) {
            return Err(Error::DatasetMismatch(
                "samples use different frame intervals".into(),
            ));
        }
        dt = Some(s.dt);
        pool.add(&predictor.predict(s)?, &s.future)?;
    }
    Ok(pool.report(&predictor.name(), dt.unwrap_or(1.0), convention))
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: Variant,
    pub checkpoint: Checkpoint,
    pub train_report: TrainReport,
    pub metrics: MetricReport,
}

/// Trains and evaluates all four variants from one seed and data split.
pub fn run_ablation(
    train_set: &[StateSpace],
    val_set: &[StateSpace],
    test_set: &[StateSpace],
    base: &ModelConfig,
    cfg: &TrainConfig,
    convention: AdeConvention,
) -> Result<Vec<AblationRun>> {
    if train_set.is_empty() {
        return Err(Error::Config(
            "ablation needs a non-empty training set".into(),
        ));
    }
    Variant::ALL
        .iter()
        .map(|&variant| {
            let model_cfg = ModelConfig {
                variant,
                ..base.clone()
            };
            let (checkpoint, train_report) = train(train_set, val_set, &model_cfg, cfg)?;
            let model = checkpoint.to_model()?;
            let metrics = run_eval(&model, test_set, convention)?;
            Ok(AblationRun {
                variant,
                checkpoint,
                train_report,
                metrics,
            })
        })
        .collect()
}

/// Aligned text table: one row per report, ADE/FDE per horizon second.
pub fn format_table(reports: &[MetricReport]) -> String {
    let secs: Vec<f64> = reports
        .iter()
        .max_by_key(|r| r.horizons.len())
        .map(|r| r.horizons.iter().map(|h| h.seconds).collect())
        .unwrap_or_default();
    let name_w = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(4)
        .max(6);
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<name_w$}  {:>7}  {:>13}",
        "method", "samples", "ADE/FDE"
    );
    for s in &secs {
        let _ = write!(out, "  {:>13}", format!("@{s}s"));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{:<name_w$}  {:>7}  {:>13}",
            r.name,
            r.samples,
            format!("{:.3}/{:.3}", r.ade, r.fde)
        );
        for s in &secs {
            let cell = r
                .horizons
                .iter()
                .find(|h| h.seconds == *s)
                .map_or("-".to_string(), |h| format!("{:.3}/{:.3}", h.ade, h.fde));
            let _ = write!(out, "  {cell:>13}");
        }
        out.push('\n');
    }
    out
}

/// `method,seconds,ade,fde` rows for plotting error against horizon.
pub fn plot_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("method,seconds,ade,fde\n");
    for r in reports {
        for h in &r.horizons {
            let _ = writeln!(out, "{},{},{},{}", r.name, h.seconds, h.ade, h.fde);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ade_fde_fixtures() {
        let t = [[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(ade(&t, &t).unwrap(), 0.0);
        let off: Vec<[f64; 2]> = t.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert_eq!(ade(&off, &t).unwrap(), 5.0);
        assert_eq!(fde(&off, &t).unwrap(), 5.0);
        let z = [[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(ade(&[[0.0, 0.0], [0.0, 2.0]], &z).unwrap(), 2f64.sqrt());
        assert_eq!(aggregate_fde(&[1.0, 7.0], AdeConvention::Rmse), 5.0);
        assert_eq!(aggregate_fde(&[1.0, 7.0], AdeConvention::Mean), 4.0);
        assert!(ade(&t[..1], &t).is_err());
        assert!(fde(&[], &[]).is_err());
    }

    #[test]
    fn constant_velocity_cases() {
        let straight: Vec<[f64; 2]> = (0..5).map(|k| [0.0, k as f64 - 4.0]).collect();
        let p = constant_velocity(&straight, 0.5, 3);
        assert_eq!(p, vec![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]);
        let still = [[0.0, 0.0]; 4];
        assert_eq!(constant_velocity(&still, 0.5, 2), vec![[0.0, 0.0]; 2]);
        let k = kalman_cv(&straight, 0.5, 3, 1.0, 0.1);
        for (a, b) in k.iter().zip(&p) {
            assert!(
                (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-6,
                "{a:?} vs {b:?}"
            );
        }
    }

    #[test]
    fn pooled_report() {
        let mut pool = ErrorPool::default();
        pool.add(&[[0.0, 1.0], [0.0, 1.0]], &[[0.0, 0.0], [0.0, 0.0]])
            .unwrap();
        pool.add(&[[0.0, 0.0], [0.0, 7.0]], &[[0.0, 0.0], [0.0, 0.0]])
            .unwrap();
        let r = pool.report("x", 0.5, AdeConvention::Rmse);
        assert_eq!(r.fde, 5.0);
        assert!((r.ade - (51.0f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.horizons.len(), 1);
        assert_eq!(r.horizons[0].frames, 2);
        let m = pool.report("x", 0.5, AdeConvention::Mean);
        assert_eq!(m.ade, 9.0 / 4.0);
        assert!(pool.add(&[[0.0, 0.0]], &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn table_and_csv_shapes() {
        let r = MetricReport {
            name: "cv".into(),
            samples: 2,
            convention: AdeConvention::Rmse,
            ade: 1.0,
            fde: 2.0,
            horizons: vec![HorizonMetric {
                seconds: 1.0,
                frames: 2,
                ade: 0.5,
                fde: 1.0,
            }],
        };
        let t = format_table(std::slice::from_ref(&r));
        assert_eq!(t.lines().count(), 2);
        assert!(t.contains("1.000/2.000") && t.contains("@1s"));
        assert_eq!(plot_csv(&[r]), "method,seconds,ade,fde\ncv,1,0.5,1\n");
    }
}
