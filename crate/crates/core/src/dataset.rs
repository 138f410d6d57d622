//! From tracks to training samples: rate conversion, windowing and one
//! ego-centric state space per ego candidate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{
    assemble_tracks, parse_tracks, window_scenes, AgentTrack, Homography, SceneWindow, TrackFormat,
    WindowConfig,
};
use crate::scene::{build_state_space, SpatialConfig, StateSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Annotation rate (frames/s) before down-sampling.
    pub frame_rate: f64,
    pub downsample: usize,
    pub history_secs: f64,
    pub predict_secs: f64,
    /// Reference-frame spacing, in down-sampled frames.
    pub stride: usize,
    pub spatial: SpatialConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            frame_rate: 10.0,
            downsample: 1,
            history_secs: 3.0,
            predict_secs: 5.0,
            stride: 1,
            spatial: SpatialConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn dt(&self) -> f64 {
        self.downsample as f64 / self.frame_rate
    }

    pub fn history_frames(&self) -> usize {
        (self.history_secs / self.dt()).round() as usize
    }

    pub fn future_frames(&self) -> usize {
        (self.predict_secs / self.dt()).round() as usize
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            history: self.history_frames(),
            future: self.future_frames(),
            stride: self.stride,
            dt: self.dt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0)
            || self.downsample == 0
            || self.stride == 0
        {
            return Err(Error::Config(format!(
                "frame rate, downsample and stride must be positive: {self:?}"
            )));
        }
        if self.history_frames() < 2 || self.future_frames() < 1 {
            return Err(Error::Config(format!(
                "need at least 2 history frames and 1 future frame, got {} and {}",
                self.history_frames(),
                self.future_frames()
            )));
        }
        self.spatial.validate()
    }
}

/// Keeps samples on every `factor`-th frame of the global clock, so all
/// agents stay on a common grid.
pub fn downsample_tracks(tracks: &[AgentTrack], frame_rate: f64, factor: usize) -> Vec<AgentTrack> {
    let factor = factor.max(1) as i64;
    tracks
        .iter()
        .map(|t| AgentTrack {
            samples: t
                .samples
                .iter()
                .filter(|s| ((s.t * frame_rate).round() as i64).rem_euclid(factor) == 0)
                .copied()
                .collect(),
            ..t.clone()
        })
        .filter(|t| !t.samples.is_empty())
        .collect()
}

pub fn windows(tracks: &[AgentTrack], cfg: &DatasetConfig) -> Result<Vec<SceneWindow>> {
    cfg.validate()?;
    let tracks = downsample_tracks(tracks, cfg.frame_rate, cfg.downsample);
    Ok(window_scenes(&tracks, &cfg.window()))
}

/// One state space per ego candidate, in window order then agent order.
pub fn samples(windows: &[SceneWindow], spatial: &SpatialConfig) -> Result<Vec<StateSpace>> {
    let mut out = Vec::new();
    for w in windows {
        for ego in w.ego_candidates() {
            out.push(build_state_space(w, ego, spatial)?);
        }
    }
    Ok(out)
}

pub fn load_tracks(
    path: &Path,
    format: TrackFormat,
    frame_rate: f64,
    homography: Option<&Homography>,
) -> Result<Vec<AgentTrack>> {
    let parsed = parse_tracks(path, format)?;
    assemble_tracks(&parsed.detections, frame_rate, homography)
}

pub fn build(tracks: &[AgentTrack], cfg: &DatasetConfig) -> Result<Vec<StateSpace>> {
    samples(&windows(tracks, cfg)?, &cfg.spatial)
}

/// Temporal split: the last `fraction` of samples by reference frame go to
/// validation. Input order is otherwise preserved.
pub fn split_by_time(samples: &[StateSpace], fraction: f64) -> (Vec<StateSpace>, Vec<StateSpace>) {
    let n_val = ((samples.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    if n_val == 0 {
        return (samples.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| (samples[i].reference_frame, i));
    let cut = samples.len() - n_val;
    let mut is_val = vec![false; samples.len()];
    for &i in &order[cut..] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(cut);
    let mut val = Vec::with_capacity(n_val);
    for (s, v) in samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, val)
}
