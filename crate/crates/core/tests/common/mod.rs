//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use traphic::dataset::{self, DatasetConfig};
use traphic::model::{GaussianParams, ModelConfig, Variant};
use traphic::scene::{Member, Point, SpatialConfig, StateSpace};
use traphic::synthgen::{generate, SynthConfig};
use traphic::tensor::rng::seeded;

pub fn small_spatial() -> SpatialConfig {
    SpatialConfig {
        neighbor_a: 12.0,
        neighbor_b: 4.0,
        horizon_a: 12.0,
        horizon_b: 2.0,
        ..SpatialConfig::default()
    }
}

/// h = 4, τ = 3 at 0.5 s.
pub fn small_dataset() -> DatasetConfig {
    DatasetConfig {
        downsample: 5,
        history_secs: 2.0,
        predict_secs: 1.5,
        stride: 4,
        spatial: small_spatial(),
        ..DatasetConfig::default()
    }
}

pub fn small_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        history: 4,
        future: 3,
        dt: 0.5,
        embed: 6,
        enc_hidden: 6,
        dec_hidden: 8,
        conv_channels: (3, 3),
        spatial: small_spatial(),
        input_scale: 10.0,
        ..ModelConfig::default()
    }
}

/// Busy synthetic traffic cut into samples that fit [`small_model`].
pub fn small_samples(seed: u64) -> Vec<StateSpace> {
    let synth = SynthConfig {
        agents: 20,
        duration: 10.0,
        seed,
        ..SynthConfig::default()
    };
    dataset::build(&generate(&synth).unwrap(), &small_dataset()).unwrap()
}

/// Samples whose ego has a non-empty horizon and at least two neighbors.
pub fn crowded_samples(seed: u64) -> Vec<StateSpace> {
    small_samples(seed)
        .into_iter()
        .filter(|s| !s.horizon.is_empty() && s.neighbors.len() >= 2)
        .collect()
}

pub fn random_gaussian<R: Rng>(rng: &mut R) -> GaussianParams {
    GaussianParams {
        mu: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        sigma: [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)],
        rho: rng.random_range(-0.9..0.9),
    }
}

/// Composite trapezoid rule for the density over μ ± 8σ on an `n × n` grid.
pub fn quadrature(g: &GaussianParams, n: usize) -> f64 {
    let (hx, hy) = (16.0 * g.sigma[0] / n as f64, 16.0 * g.sigma[1] / n as f64);
    let mut total = 0.0;
    for i in 0..=n {
        let x = g.mu[0] - 8.0 * g.sigma[0] + i as f64 * hx;
        let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
        for j in 0..=n {
            let y = g.mu[1] - 8.0 * g.sigma[1] + j as f64 * hy;
            let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
            total += wx * wy * g.density([x, y]);
        }
    }
    total * hx * hy
}

/// Largest deviation, in standard errors, of the sample means, variances
/// and correlation from their targets.
pub fn moment_z_scores(g: &GaussianParams, n: usize, seed: u64) -> [f64; 5] {
    let mut rng = seeded(seed);
    let draws: Vec<[f64; 2]> = (0..n).map(|_| g.sample(&mut rng)).collect();
    let nf = n as f64;
    let mean = |k: usize| draws.iter().map(|d| d[k]).sum::<f64>() / nf;
    let (mx, my) = (mean(0), mean(1));
    let cov = |a: usize, b: usize, ma: f64, mb: f64| {
        draws.iter().map(|d| (d[a] - ma) * (d[b] - mb)).sum::<f64>() / (nf - 1.0)
    };
    let (vx, vy, cxy) = (cov(0, 0, mx, mx), cov(1, 1, my, my), cov(0, 1, mx, my));
    let (sx2, sy2) = (g.sigma[0] * g.sigma[0], g.sigma[1] * g.sigma[1]);
    let r = g.rho;
    // Gaussian sampling variances: var(s²) = 2σ⁴/(n−1), var(r) ≈ (1−ρ²)²/n
    [
        (mx - g.mu[0]) / (g.sigma[0] / nf.sqrt()),
        (my - g.mu[1]) / (g.sigma[1] / nf.sqrt()),
        (vx - sx2) / (sx2 * (2.0 / (nf - 1.0)).sqrt()),
        (vy - sy2) / (sy2 * (2.0 / (nf - 1.0)).sqrt()),
        (cxy / (vx * vy).sqrt() - r) / ((1.0 - r * r) / nf.sqrt()),
    ]
}

/// All-pairs reference: rotate by hand, test the ellipse, sort, truncate.
pub fn oracle(
    points: &[Point],
    ego: usize,
    heading: [f64; 2],
    a: f64,
    b: f64,
    k: usize,
    front: bool,
) -> Vec<(i64, [f64; 2])> {
    let e = points[ego].pos;
    let mut hits: Vec<(f64, i64, [f64; 2])> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if i == ego {
            continue;
        }
        let (dx, dy) = (p.pos[0] - e[0], p.pos[1] - e[1]);
        let along = dx * heading[0] + dy * heading[1];
        let lateral = dx * heading[1] - dy * heading[0];
        let inside = (along / a) * (along / a) + (lateral / b) * (lateral / b) <= 1.0;
        if inside && (!front || along > 0.0) {
            hits.push((dx.hypot(dy), p.agent_id, [lateral, along]));
        }
    }
    hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    hits.truncate(k);
    hits.into_iter().map(|(_, id, l)| (id, l)).collect()
}

pub fn ids(members: &[Member]) -> Vec<(i64, [f64; 2])> {
    members.iter().map(|m| (m.agent_id, m.local)).collect()
}

pub fn random_scene(rng: &mut traphic::tensor::rng::Prng) -> Vec<Point> {
    let n = rng.random_range(1..=50);
    let span = rng.random_range(3.0..30.0);
    let mut ids: Vec<i64> = (0..n as i64).map(|i| i * 7 + 3).collect();
    // shuffle ids so input order and id order differ
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.into_iter()
        .map(|agent_id| {
            // a coarse lattice forces exact distance ties
            let pos = if rng.random_bool(0.3) {
                [
                    rng.random_range(-5..=5) as f64 * 0.5,
                    rng.random_range(-5..=5) as f64 * 0.5,
                ]
            } else {
                [rng.random_range(-span..span), rng.random_range(-span..span)]
            };
            Point { agent_id, pos }
        })
        .collect()
}
