use proptest::prelude::*;
use traphic::ingest::{
    apply_homography, assemble_tracks, parse_tracks, resample, window_scenes, write_traf_csv,
    AgentClass, AgentTrack, Homography, TrackFormat, TrackPoint, WindowConfig,
};
use traphic::Error;

fn track(len: usize) -> AgentTrack {
    AgentTrack::new(
        4,
        AgentClass::Bus,
        (0..len)
            .map(|k| TrackPoint {
                t: k as f64 * 0.1,
                pos: [k as f64 * 1.5, -(k as f64)],
            })
            .collect(),
    )
}

proptest! {
    #[test]
    fn homography_round_trip(
        noise in prop::array::uniform9(-1.0f64..1.0),
        p in prop::array::uniform2(-20.0f64..20.0),
    ) {
        // identity plus bounded noise; a small perspective row keeps w near 1
        let mut m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (i, n) in noise.iter().enumerate() {
            m[i] += if i >= 6 { 1e-3 * n } else { 0.3 * n };
        }
        let h = Homography::new(m).unwrap();
        let back = apply_homography(&h.inverse().unwrap(), apply_homography(&h, p).unwrap()).unwrap();
        prop_assert!((back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9, "{back:?} vs {p:?}");
    }

    #[test]
    fn resample_composes(a in 1usize..5, b in 1usize..5, len in 0usize..60) {
        let t = track(len);
        prop_assert_eq!(resample(&resample(&t, a), b), resample(&t, a * b));
    }
}

#[test]
fn well_conditioned_homography_round_trips_to_1e9() {
    let h = Homography::new([1.2, 0.1, 3.0, -0.2, 0.9, -4.0, 0.001, 0.002, 1.0]).unwrap();
    let inv = h.inverse().unwrap();
    for p in [[0.0, 0.0], [10.0, -5.0], [-30.0, 42.5], [100.0, 100.0]] {
        let back = apply_homography(&inv, apply_homography(&h, p).unwrap()).unwrap();
        assert!(
            (back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9,
            "{back:?}"
        );
    }
}

#[test]
fn singular_homography_is_rejected() {
    assert!(matches!(
        Homography::new([1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]),
        Err(Error::Homography(_))
    ));
}

#[test]
fn file_round_trip_through_world_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tracks.csv");
    let tracks = vec![track(12), {
        let mut t = track(8);
        t.agent_id = 9;
        t.agent_class = AgentClass::Pedestrian;
        t.dims = (0.5, 0.5);
        t
    }];
    write_traf_csv(std::fs::File::create(&path).unwrap(), &tracks, 10.0).unwrap();
    let parsed = parse_tracks(&path, TrackFormat::TrafCsv).unwrap();
    assert_eq!(parsed.detections.len(), 20);
    let back = assemble_tracks(&parsed.detections, 10.0, None).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in tracks.iter().zip(&back) {
        assert_eq!(a.agent_id, b.agent_id);
        assert_eq!(a.agent_class, b.agent_class);
        for (p, q) in a.samples.iter().zip(&b.samples) {
            assert_eq!(p.pos, q.pos);
            assert!((p.t - q.t).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = parse_tracks(
        std::path::Path::new("/nonexistent/x.csv"),
        TrackFormat::TrafCsv,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn sliding_window_count_formula() {
    // one agent over 20 frames, h = τ = 5, stride 5 → ⌊(20 − 10)/5⌋ + 1 windows
    let t = track(20);
    let cfg = WindowConfig {
        history: 5,
        future: 5,
        stride: 5,
        dt: 0.1,
    };
    let w = window_scenes(&[t], &cfg);
    assert_eq!(w.len(), (20 - 10) / 5 + 1);
    for win in &w {
        assert_eq!(win.ego_candidates().count(), 1);
        assert_eq!(win.history_len(), 5);
        assert_eq!(win.future_len(), Some(5));
    }
}
