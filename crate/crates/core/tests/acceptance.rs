//! The nine acceptance criteria, each printed as one PASS/FAIL line.
//! Run with `cargo test -p traphic --test acceptance -- --nocapture`.

mod common;

use std::time::{Duration, Instant};

use common::{
    crowded_samples, ids, moment_z_scores, oracle, quadrature, random_gaussian, random_scene,
    small_model,
};
use rand::Rng;
use traphic::dataset::{self, DatasetConfig};
use traphic::eval::{ade, aggregate_fde, fde, run_eval, AdeConvention, ConstantVelocity};
use traphic::gradcheck;
use traphic::model::{GaussianParams, ModelConfig, TraphicModel, Variant};
use traphic::scene::{horizon, neighborhood, ConcentrationGrid, SpatialConfig, StateSpace};
use traphic::synthgen::{generate, write_dataset, SynthConfig};
use traphic::tensor::rng::seeded;
use traphic::train::{nll_loss, train, TrainConfig};

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const GEOMETRY_SCENES: usize = 200;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(10);
const LOSS_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const OVERFIT_ADE: f64 = 0.10;
const OVERFIT_STEPS: usize = 500;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
const BENCH_TRAIN_WINDOWS: usize = 500;
const BENCH_TEST_WINDOWS: usize = 100;
const BENCH_BUDGET: Duration = Duration::from_secs(1800);
const QUADRATURE_TOL: f64 = 1e-3;
const MC_SAMPLES: usize = 100_000;
const MC_SE: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let report = gradcheck::run(0).expect("gradcheck runs");
    let took = t.elapsed();
    let min_configs = report.ops.iter().map(|o| o.configs).min().unwrap_or(0);
    let worst = report.max_rel_error();
    outcome(
        worst < GRADCHECK_TOL && min_configs >= 100 && report.models.len() == 4 && took < GRADCHECK_BUDGET,
        format!(
            "{} ops (≥{min_configs} configs each) + {} networks, max rel err {worst:.2e} < {GRADCHECK_TOL:.0e}, {:.1}s < 60s",
            report.ops.len(),
            report.models.len(),
            took.as_secs_f64()
        ),
    )
}

fn c2_geometry() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded(2024);
    let mut mismatches = 0;
    let mut max_agents = 0;
    for _ in 0..GEOMETRY_SCENES {
        let points = random_scene(&mut rng);
        max_agents = max_agents.max(points.len());
        let ego = rng.random_range(0..points.len());
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let h = [theta.cos(), theta.sin()];
        let (a, b) = (rng.random_range(0.5..10.0), rng.random_range(0.5..10.0));
        let (a_hz, b_hz) = (rng.random_range(0.2..=a), rng.random_range(0.2..=b));
        let (k_nb, k_hz) = (rng.random_range(1..12), rng.random_range(1..8));
        if ids(&neighborhood(&points, ego, h, a, b, k_nb))
            != oracle(&points, ego, h, a, b, k_nb, false)
        {
            mismatches += 1;
        }
        if ids(&horizon(&points, ego, h, a_hz, b_hz, k_hz))
            != oracle(&points, ego, h, a_hz, b_hz, k_hz, true)
        {
            mismatches += 1;
        }
        let cell = rng.random_range(0.5..3.0);
        let pos: Vec<[f64; 2]> = points.iter().map(|p| p.pos).collect();
        let grid = ConcentrationGrid::build(&pos, cell, None);
        let key = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
        for q in &pos {
            let brute = pos.iter().filter(|p| key(**p) == key(*q)).count() as u32;
            if grid.count_at(*q) != brute {
                mismatches += 1;
            }
        }
    }
    let took = t.elapsed();
    outcome(
        mismatches == 0 && took < GEOMETRY_BUDGET,
        format!(
            "{GEOMETRY_SCENES} scenes (≤{max_agents} agents): {mismatches} mismatches vs brute force, {:.2}s < 10s",
            took.as_secs_f64()
        ),
    )
}

fn c3_loss() -> Outcome {
    let unit = GaussianParams {
        mu: [0.4, -1.2],
        sigma: [1.0, 1.0],
        rho: 0.0,
    };
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let at_mean = nll_loss(&[unit], &[unit.mu]).unwrap();
    let offset = nll_loss(&[unit], &[[unit.mu[0] + 1.0, unit.mu[1]]]).unwrap();
    let (e1, e2) = ((at_mean - ln2pi).abs(), (offset - ln2pi - 0.5).abs());
    outcome(
        e1 < LOSS_TOL && e2 < LOSS_TOL,
        format!("at mean {at_mean:.12} (err {e1:.1e}), offset {offset:.12} (err {e2:.1e}), tol {LOSS_TOL:.0e}"),
    )
}

fn c4_metrics() -> Outcome {
    let truth = [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]];
    let shifted: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
    let checks = [
        (ade(&truth, &truth).unwrap(), 0.0),
        (ade(&shifted, &truth).unwrap(), 5.0),
        (fde(&shifted, &truth).unwrap(), 5.0),
        (
            ade(&[[0.0, 0.0], [0.0, 2.0]], &[[0.0, 0.0]; 2]).unwrap(),
            2f64.sqrt(),
        ),
        (fde(&truth, &truth).unwrap(), 0.0),
        (aggregate_fde(&[1.0, 7.0], AdeConvention::Rmse), 5.0),
    ];
    let worst = checks
        .iter()
        .map(|(got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < METRIC_TOL,
        format!(
            "{} fixtures, max abs err {worst:.1e} < {METRIC_TOL:.0e}",
            checks.len()
        ),
    )
}

/// Event-free traffic cut at 2 Hz into 3 s histories and 5 s futures.
fn overfit_data() -> (Vec<StateSpace>, ModelConfig) {
    let spatial = SpatialConfig {
        neighbor_a: 12.0,
        neighbor_b: 4.0,
        horizon_a: 12.0,
        horizon_b: 2.0,
        ..SpatialConfig::default()
    };
    let synth = SynthConfig {
        agents: 20,
        duration: 20.0,
        seed: 3,
        braking_prob: 0.0,
        cut_in_prob: 0.0,
        noise: 0.02,
        ..SynthConfig::default()
    };
    let dcfg = DatasetConfig {
        downsample: 5,
        stride: 4,
        spatial,
        ..DatasetConfig::default()
    };
    let all = dataset::build(&generate(&synth).unwrap(), &dcfg).unwrap();
    let subset: Vec<StateSpace> = all
        .iter()
        .step_by((all.len() / 32).max(1))
        .take(32)
        .cloned()
        .collect();
    (subset, bench_model(Variant::Combined, spatial))
}

fn bench_model(variant: Variant, spatial: SpatialConfig) -> ModelConfig {
    ModelConfig {
        variant,
        history: 6,
        future: 10,
        dt: 0.5,
        embed: 16,
        enc_hidden: 16,
        dec_hidden: 32,
        conv_channels: (8, 8),
        spatial,
        input_scale: 10.0,
        output_scale: 1.0,
        residual: true,
        ..ModelConfig::default()
    }
}

fn c5_overfit() -> Outcome {
    let t = Instant::now();
    let (data, model) = overfit_data();
    let cfg = TrainConfig {
        epochs: OVERFIT_STEPS,
        batch: 32,
        lr: 1e-3,
        seed: 1,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let (ck, report) = train(&data, &[], &model, &cfg).unwrap();
    let steps = ck.adam.step as usize;
    // moving average over 3 epochs of the first 10
    let nll: Vec<f64> = report.epochs.iter().take(10).map(|e| e.train_nll).collect();
    let ma: Vec<f64> = nll
        .windows(3)
        .map(|w| w.iter().sum::<f64>() / 3.0)
        .collect();
    let decreasing = nll.len() == 10 && ma.windows(2).all(|w| w[1] < w[0]);
    let fit = run_eval(&ck.to_model().unwrap(), &data, AdeConvention::Rmse).unwrap();
    let took = t.elapsed();
    outcome(
        data.len() == 32 && steps <= OVERFIT_STEPS && decreasing && fit.ade < OVERFIT_ADE && took < OVERFIT_BUDGET,
        format!(
            "32 windows, {steps} steps: NLL {:.3} → {:.3} (moving avg strictly decreasing: {decreasing}), train ADE {:.4} < {OVERFIT_ADE}, {:.0}s < 300s",
            nll[0],
            nll[nll.len() - 1],
            fit.ade,
            took.as_secs_f64()
        ),
    )
}

/// Braking and cut-in rich traffic: 500 training and 100 test scene windows
/// split by time, every ego candidate of a window one sample.
fn benchmark(seed: u64) -> (Vec<StateSpace>, Vec<StateSpace>, SpatialConfig) {
    let spatial = SpatialConfig {
        neighbor_a: 25.0,
        neighbor_b: 4.0,
        horizon_a: 25.0,
        horizon_b: 2.0,
        ..SpatialConfig::default()
    };
    let synth = SynthConfig {
        agents: 30,
        extent: (100.0, 10.5),
        duration: 20.0,
        scenes: 50,
        braking_prob: 0.2,
        cut_in_prob: 0.2,
        noise: 0.02,
        seed,
        ..SynthConfig::default()
    };
    let dcfg = DatasetConfig {
        downsample: 5,
        stride: 2,
        spatial,
        ..DatasetConfig::default()
    };
    let mut windows = dataset::windows(&generate(&synth).unwrap(), &dcfg).unwrap();
    windows.sort_by_key(|w| w.reference_frame);
    let test = windows.split_off(windows.len() - BENCH_TEST_WINDOWS);
    windows.truncate(BENCH_TRAIN_WINDOWS);
    (
        dataset::samples(&windows, &spatial).unwrap(),
        dataset::samples(&test, &spatial).unwrap(),
        spatial,
    )
}

fn c6_interaction() -> Outcome {
    let t = Instant::now();
    let mut sums = [0.0; 3];
    let mut per_seed = Vec::new();
    for seed in BENCH_SEEDS {
        let (train_set, test_set, spatial) = benchmark(seed);
        let cfg = TrainConfig {
            epochs: 5,
            batch: 32,
            lr: 1e-3,
            seed,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let cv = run_eval(&ConstantVelocity, &test_set, AdeConvention::Rmse)
            .unwrap()
            .ade;
        let mut ades = [cv, 0.0, 0.0];
        for (slot, v) in [(1, Variant::B), (2, Variant::Combined)] {
            let model = ModelConfig {
                detach_spread: true,
                ..bench_model(v, spatial)
            };
            let (ck, _) = train(&train_set, &[], &model, &cfg).unwrap();
            ades[slot] = run_eval(&ck.to_model().unwrap(), &test_set, AdeConvention::Rmse)
                .unwrap()
                .ade;
        }
        for (s, a) in sums.iter_mut().zip(ades) {
            *s += a;
        }
        per_seed.push(format!(
            "s{seed} {:.3}/{:.3}/{:.3}",
            ades[0], ades[1], ades[2]
        ));
    }
    let n = BENCH_SEEDS.len() as f64;
    let [cv, b, combined] = sums.map(|s| s / n);
    let took = t.elapsed();
    outcome(
        combined <= cv && combined <= b && took < BENCH_BUDGET,
        format!(
            "mean ADE combined {combined:.3} ≤ CV {cv:.3}, ≤ B {b:.3} [cv/B/combined: {}], {:.0}s < 1800s",
            per_seed.join(", "),
            took.as_secs_f64()
        ),
    )
}

fn c7_wiring() -> Outcome {
    let samples = crowded_samples(11);
    let mut checked = 0;
    let mut violations = 0;
    for (v, seed) in [(Variant::B, 1), (Variant::He, 2)] {
        let m = TraphicModel::new(small_model(v), seed).unwrap();
        for s in samples.iter().take(25) {
            let base = m.gaussians(&m.prepare(s).unwrap()).unwrap();
            let perturbed = if v == Variant::B {
                let mut p = s.clone();
                for a in &mut p.agents {
                    a.dims = (a.dims.0 * 2.0 + 0.5, a.dims.1 * 0.5);
                    a.concentration.iter_mut().for_each(|c| *c += 3.0);
                }
                m.prepare(&p).unwrap()
            } else {
                let mut input = m.prepare(s).unwrap();
                let cells = input.horizon.rows * input.horizon.cols;
                input
                    .horizon
                    .occupants
                    .iter_mut()
                    .for_each(|o| o.1 = (o.1 + 7) % cells);
                input
            };
            checked += 1;
            if m.gaussians(&perturbed).unwrap() != base {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0 && checked > 0,
        format!("{checked} perturbed samples (B: dims+concentration, He: horizon map), {violations} bit differences"),
    )
}

fn c8_distribution() -> Outcome {
    let mut rng = seeded(8);
    let mut worst_q: f64 = 0.0;
    for _ in 0..20 {
        worst_q = worst_q.max((quadrature(&random_gaussian(&mut rng), 400) - 1.0).abs());
    }
    let g = random_gaussian(&mut rng);
    let worst_z = moment_z_scores(&g, MC_SAMPLES, 9)
        .iter()
        .fold(0.0f64, |m, z| m.max(z.abs()));
    outcome(
        worst_q < QUADRATURE_TOL && worst_z < MC_SE,
        format!("20 (σ, ρ): max |∫p − 1| {worst_q:.1e} < {QUADRATURE_TOL:.0e}; 1e5 draws: max |z| {worst_z:.2} < {MC_SE}"),
    )
}

fn c9_reproducibility() -> Outcome {
    let synth = SynthConfig {
        agents: 20,
        duration: 10.0,
        seed: 17,
        ..SynthConfig::default()
    };
    let csv = || {
        let mut out = Vec::new();
        write_dataset(&mut out, &generate(&synth).unwrap(), synth.frame_rate).unwrap();
        out
    };
    let same_data = csv() == csv();
    let data: Vec<_> = dataset::build(&generate(&synth).unwrap(), &common::small_dataset())
        .unwrap()
        .into_iter()
        .take(48)
        .collect();
    let cfg = TrainConfig {
        epochs: 3,
        batch: 16,
        seed: 4,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let run = || train(&data, &data[..8], &small_model(Variant::Combined), &cfg).unwrap();
    let ((a, ra), (b, rb)) = (run(), run());
    let same_ckpt = a.to_bytes().unwrap() == b.to_bytes().unwrap();
    let same_report =
        ra.without_timing().to_jsonl().unwrap() == rb.without_timing().to_jsonl().unwrap();
    outcome(
        same_data && same_ckpt && same_report,
        format!("synth csv identical: {same_data}, checkpoint bytes identical: {same_ckpt}, reports identical: {same_report}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("1 gradient oracle", c1_gradients),
        ("2 geometry oracle", c2_geometry),
        ("3 loss closed forms", c3_loss),
        ("4 metric oracle", c4_metrics),
        ("5 overfit", c5_overfit),
        ("6 interaction benefit", c6_interaction),
        ("7 ablation wiring", c7_wiring),
        ("8 distribution sanity", c8_distribution),
        ("9 reproducibility", c9_reproducibility),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!(
            "[{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
