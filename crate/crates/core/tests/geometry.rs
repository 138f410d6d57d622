mod common;

use common::{ids, oracle, random_scene};
use proptest::prelude::*;
use rand::Rng;
use traphic::ingest::{class_dims, AgentClass, SceneWindow, WindowAgent};
use traphic::scene::{build_state_space, horizon, neighborhood, ConcentrationGrid, SpatialConfig};
use traphic::tensor::rng::seeded;

#[test]
fn region_queries_match_all_pairs_oracle() {
    let mut rng = seeded(91);
    for _ in 0..200 {
        let points = random_scene(&mut rng);
        let ego = rng.random_range(0..points.len());
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let h = [theta.cos(), theta.sin()];
        let (a, b) = (rng.random_range(0.5..10.0), rng.random_range(0.5..10.0));
        let (a_hz, b_hz) = (rng.random_range(0.2..=a), rng.random_range(0.2..=b));
        let (k_nb, k_hz) = (rng.random_range(1..12), rng.random_range(1..8));
        assert_eq!(
            ids(&neighborhood(&points, ego, h, a, b, k_nb)),
            oracle(&points, ego, h, a, b, k_nb, false)
        );
        assert_eq!(
            ids(&horizon(&points, ego, h, a_hz, b_hz, k_hz)),
            oracle(&points, ego, h, a_hz, b_hz, k_hz, true)
        );
    }
}

#[test]
fn concentration_matches_brute_force_count() {
    let mut rng = seeded(5);
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let cell = rng.random_range(0.5..3.0);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    // exactly on cell boundaries
                    [
                        rng.random_range(-4..4) as f64 * cell,
                        rng.random_range(-4..4) as f64 * cell,
                    ]
                } else {
                    [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]
                }
            })
            .collect();
        let half = rng.random_bool(0.5).then(|| rng.random_range(1..5));
        let grid = ConcentrationGrid::build(&pts, cell, half);
        let cell_of = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
        let in_bounds = |c: (i64, i64)| half.is_none_or(|e| c.0.abs() <= e && c.1.abs() <= e);
        for q in &pts {
            let cq = cell_of(*q);
            let expected = if in_bounds(cq) {
                pts.iter().filter(|p| cell_of(**p) == cq).count() as u32
            } else {
                0
            };
            assert_eq!(grid.count_at(*q), expected);
        }
        let inside = pts.iter().filter(|p| in_bounds(cell_of(**p))).count() as u32;
        assert_eq!(grid.total(), inside);
    }
}

fn window_from(positions: &[Vec<[f64; 2]>], future: &[[f64; 2]]) -> SceneWindow {
    SceneWindow {
        reference_frame: 9,
        dt: 0.5,
        agents: positions
            .iter()
            .enumerate()
            .map(|(i, h)| WindowAgent {
                agent_id: i as i64 + 1,
                agent_class: AgentClass::ALL[i % 9],
                dims: class_dims(AgentClass::ALL[i % 9]),
                history: h.clone(),
                future: (i == 0).then(|| future.to_vec()),
            })
            .collect(),
    }
}

fn spatial() -> SpatialConfig {
    SpatialConfig {
        neighbor_a: 6.0,
        neighbor_b: 4.0,
        horizon_a: 5.0,
        horizon_b: 3.0,
        ..SpatialConfig::default()
    }
}

/// Quarter-meter lattice coordinates: sums, differences and quarter-turn
/// rotations of these are exact in binary floating point.
fn lattice_scene() -> impl Strategy<Value = (Vec<Vec<[f64; 2]>>, Vec<[f64; 2]>)> {
    let step = (-8i32..=8, -8i32..=8);
    let start = (-40i32..=40, -40i32..=40);
    let track = (start, prop::collection::vec(step, 3));
    (
        prop::collection::vec(track, 1..8),
        prop::collection::vec((-20i32..=20, -20i32..=20), 2),
    )
        .prop_map(|(tracks, fut)| {
            let q = |v: i32| v as f64 * 0.25;
            let hist: Vec<Vec<[f64; 2]>> = tracks
                .into_iter()
                .enumerate()
                .map(|(i, ((x, y), steps))| {
                    // the ego always moves, so its heading is well defined
                    let mut p = [q(x), q(y)];
                    let mut out = vec![p];
                    for (dx, dy) in steps {
                        let (dx, dy) = if i == 0 { (8, dy) } else { (dx, dy) };
                        p = [p[0] + q(dx), p[1] + q(dy)];
                        out.push(p);
                    }
                    out
                })
                .collect();
            let fut = fut.into_iter().map(|(x, y)| [q(x), q(y)]).collect();
            (hist, fut)
        })
}

fn map_scene(
    hist: &[Vec<[f64; 2]>],
    fut: &[[f64; 2]],
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> (Vec<Vec<[f64; 2]>>, Vec<[f64; 2]>) {
    (
        hist.iter()
            .map(|h| h.iter().map(|p| f(*p)).collect())
            .collect(),
        fut.iter().map(|p| f(*p)).collect(),
    )
}

proptest! {
    #[test]
    fn horizon_is_subset_of_neighborhood(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let points = random_scene(&mut rng);
        let ego = rng.random_range(0..points.len());
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let h = [theta.cos(), theta.sin()];
        let (a, b) = (rng.random_range(0.5..8.0), rng.random_range(0.5..8.0));
        let (a_hz, b_hz) = (rng.random_range(0.1..=a), rng.random_range(0.1..=b));
        let k = rng.random_range(1..10);
        let k_hz = rng.random_range(1..=k);
        let nb = neighborhood(&points, ego, h, a, b, points.len());
        let hz = horizon(&points, ego, h, a_hz, b_hz, k_hz);
        for m in &hz {
            prop_assert!(nb.iter().any(|n| n.agent_id == m.agent_id));
            prop_assert!(m.u() > 0.0);
        }
        prop_assert!(hz.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn translation_leaves_state_space_bit_identical((hist, fut) in lattice_scene(), tx in -400i32..400, ty in -400i32..400) {
        let t = [tx as f64 * 0.25, ty as f64 * 0.25];
        let base = build_state_space(&window_from(&hist, &fut), 0, &spatial()).unwrap();
        let (h2, f2) = map_scene(&hist, &fut, |p| [p[0] + t[0], p[1] + t[1]]);
        let moved = build_state_space(&window_from(&h2, &f2), 0, &spatial()).unwrap();
        prop_assert_eq!(&base.agents, &moved.agents);
        prop_assert_eq!(&base.neighbors, &moved.neighbors);
        prop_assert_eq!(&base.horizon, &moved.horizon);
        prop_assert_eq!(&base.future, &moved.future);
    }

    #[test]
    fn quarter_turns_leave_state_space_bit_identical((hist, fut) in lattice_scene(), turns in 1usize..4) {
        let rot = |p: [f64; 2]| (0..turns).fold(p, |q, _| [-q[1], q[0]]);
        let base = build_state_space(&window_from(&hist, &fut), 0, &spatial()).unwrap();
        let (h2, f2) = map_scene(&hist, &fut, rot);
        let turned = build_state_space(&window_from(&h2, &f2), 0, &spatial()).unwrap();
        prop_assert_eq!(&base.agents, &turned.agents);
        prop_assert_eq!(&base.neighbors, &turned.neighbors);
        prop_assert_eq!(&base.horizon, &turned.horizon);
    }

    #[test]
    fn arbitrary_rotation_preserves_state_space_to_rounding(seed in 0u64..1000, theta in 0.0f64..std::f64::consts::TAU) {
        let mut rng = seeded(seed);
        let hist: Vec<Vec<[f64; 2]>> = (0..5)
            .map(|i| {
                let s = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
                let v = if i == 0 { [1.5, 0.3] } else { [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)] };
                (0..4).map(|k| [s[0] + v[0] * k as f64, s[1] + v[1] * k as f64]).collect()
            })
            .collect();
        let fut = vec![[6.0, 1.2], [7.5, 1.5]];
        let (c, s) = (theta.cos(), theta.sin());
        let (h2, f2) = map_scene(&hist, &fut, |p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]);
        let a = build_state_space(&window_from(&hist, &fut), 0, &spatial()).unwrap();
        let b = build_state_space(&window_from(&h2, &f2), 0, &spatial()).unwrap();
        for (x, y) in a.agents.iter().zip(&b.agents) {
            for (p, q) in x.positions.iter().zip(&y.positions).chain(x.velocities.iter().zip(&y.velocities)) {
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }
}
