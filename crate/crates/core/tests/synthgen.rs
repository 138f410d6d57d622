use std::collections::BTreeMap;

use traphic::ingest::AgentTrack;
use traphic::synthgen::{generate, speed_cap, write_dataset, SynthConfig, MIN_SEPARATION};

fn busy(seed: u64) -> SynthConfig {
    SynthConfig {
        agents: 30,
        duration: 20.0,
        scenes: 2,
        braking_prob: 0.4,
        cut_in_prob: 0.4,
        seed,
        ..SynthConfig::default()
    }
}

fn frame_key(t: f64, rate: f64) -> i64 {
    (t * rate).round() as i64
}

#[test]
fn agents_keep_their_distance() {
    for seed in 0..5 {
        let cfg = busy(seed);
        let tracks = generate(&cfg).unwrap();
        let mut by_frame: BTreeMap<i64, Vec<[f64; 2]>> = BTreeMap::new();
        for t in &tracks {
            for s in &t.samples {
                by_frame
                    .entry(frame_key(s.t, cfg.frame_rate))
                    .or_default()
                    .push(s.pos);
            }
        }
        for (frame, pts) in by_frame {
            for i in 0..pts.len() {
                for j in 0..i {
                    let d = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
                    assert!(d >= MIN_SEPARATION, "seed {seed} frame {frame}: {d}");
                }
            }
        }
    }
}

#[test]
fn class_speed_caps_hold() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            noise: 0.0,
            ..busy(seed)
        };
        for t in generate(&cfg).unwrap() {
            let cap = speed_cap(t.agent_class);
            for w in t.samples.windows(2) {
                let v = (w[1].pos[0] - w[0].pos[0]).hypot(w[1].pos[1] - w[0].pos[1])
                    / (w[1].t - w[0].t);
                assert!(v <= cap + 1e-9, "{:?}: {v} > {cap}", t.agent_class);
            }
        }
    }
}

fn csv_bytes(tracks: &[AgentTrack]) -> Vec<u8> {
    let mut out = Vec::new();
    write_dataset(&mut out, tracks, 10.0).unwrap();
    out
}

#[test]
fn same_seed_same_dataset() {
    let a = generate(&busy(7)).unwrap();
    let b = generate(&busy(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
    assert_ne!(csv_bytes(&a), csv_bytes(&generate(&busy(8)).unwrap()));
}

#[test]
fn without_events_tracks_are_constant_velocity_up_to_noise() {
    for seed in 0..10 {
        let calm = SynthConfig {
            braking_prob: 0.0,
            cut_in_prob: 0.0,
            ..busy(seed)
        };
        let clean = generate(&SynthConfig {
            noise: 0.0,
            ..calm.clone()
        })
        .unwrap();
        let noisy: BTreeMap<i64, AgentTrack> = generate(&calm)
            .unwrap()
            .into_iter()
            .map(|t| (t.agent_id, t))
            .collect();
        for t in &clean {
            let s = &t.samples;
            let v = [s[1].pos[0] - s[0].pos[0], s[1].pos[1] - s[0].pos[1]];
            for (k, p) in s.iter().enumerate() {
                let expect = [s[0].pos[0] + v[0] * k as f64, s[0].pos[1] + v[1] * k as f64];
                assert!(
                    (p.pos[0] - expect[0]).abs() < 1e-9 && (p.pos[1] - expect[1]).abs() < 1e-9,
                    "seed {seed} agent {} frame {k}",
                    t.agent_id
                );
            }
            if let Some(n) = noisy.get(&t.agent_id) {
                for (a, b) in s.iter().zip(&n.samples) {
                    assert!((a.pos[0] - b.pos[0]).abs() <= 3.0 * calm.noise + 1e-12);
                    assert!((a.pos[1] - b.pos[1]).abs() <= 3.0 * calm.noise + 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_agents_is_infeasible() {
    assert!(generate(&SynthConfig {
        agents: 0,
        ..SynthConfig::default()
    })
    .is_err());
}
