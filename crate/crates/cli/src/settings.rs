//! Flat dotted-key settings: built-in defaults, then a JSON file, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use traphic::dataset::DatasetConfig;
use traphic::eval::AdeConvention;
use traphic::ingest::{Homography, TrackFormat};
use traphic::model::{ModelConfig, Variant};
use traphic::scene::SpatialConfig;
use traphic::synthgen::SynthConfig;
use traphic::train::TrainConfig;

use crate::CliError;

fn defaults() -> BTreeMap<String, Value> {
    let model = ModelConfig::default();
    let synth = SynthConfig::default();
    let spatial = SpatialConfig::default();
    let train = TrainConfig::default();
    let pairs = [
        ("seed", json!(0)),
        ("variant", json!("combined")),
        ("format", json!("traf")),
        ("homography", Value::Null),
        ("frame-rate", json!(10.0)),
        ("history-secs", json!(3.0)),
        ("predict-secs", json!(5.0)),
        ("downsample", json!(1)),
        ("stride", json!(1)),
        ("neighbor-radius", json!(spatial.neighbor_a)),
        ("horizon-minor", json!(spatial.horizon_b)),
        // null: follow neighbor-radius
        ("scene.neighbor-minor", Value::Null),
        ("scene.horizon-major", Value::Null),
        ("scene.k-nb", json!(spatial.k_nb)),
        ("scene.k-hz", json!(spatial.k_hz)),
        ("scene.cell", json!(spatial.cell)),
        ("epochs", json!(train.epochs)),
        ("batch", json!(train.batch)),
        ("lr", json!(train.lr)),
        ("workers", json!(train.workers)),
        ("clip", Value::Null),
        ("max-steps", Value::Null),
        ("val-fraction", json!(train.val_fraction)),
        ("test-fraction", json!(0.2)),
        ("ade-convention", json!("rmse")),
        ("model.embed", json!(model.embed)),
        ("model.enc-hidden", json!(model.enc_hidden)),
        ("model.dec-hidden", json!(model.dec_hidden)),
        ("model.horizon-rows", json!(model.horizon_grid.0)),
        ("model.horizon-cols", json!(model.horizon_grid.1)),
        ("model.neighbor-rows", json!(model.neighbor_grid.0)),
        ("model.neighbor-cols", json!(model.neighbor_grid.1)),
        ("model.conv1", json!(model.conv_channels.0)),
        ("model.conv2", json!(model.conv_channels.1)),
        ("model.input-scale", json!(model.input_scale)),
        ("model.output-scale", json!(model.output_scale)),
        ("model.residual", json!(model.residual)),
        ("model.detach-spread", json!(model.detach_spread)),
        ("synth.agents", json!(synth.agents)),
        ("synth.scenes", json!(synth.scenes)),
        ("synth.duration", json!(synth.duration)),
        ("synth.road-length", json!(synth.extent.0)),
        ("synth.road-width", json!(synth.extent.1)),
        ("synth.braking-prob", json!(synth.braking_prob)),
        ("synth.cut-in-prob", json!(synth.cut_in_prob)),
        ("synth.noise", json!(synth.noise)),
        ("synth.scene-gap", json!(synth.scene_gap_frames)),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    /// Defaults overlaid with the file at `path` (if any) and then with
    /// `overrides`, in order. Unknown keys are usage errors.
    pub fn resolve(path: Option<&Path>, overrides: Vec<(String, Value)>) -> Result<Self, CliError> {
        let mut s = Settings { values: defaults() };
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let file: BTreeMap<String, Value> = serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!(
                    "config {} is not a flat JSON object: {e}",
                    path.display()
                ))
            })?;
            for (k, v) in file {
                s.set(k, v)?;
            }
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        Ok(s)
    }

    fn set(&mut self, key: String, value: Value) -> Result<(), CliError> {
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("settings serialize")
    }

    fn raw(&self, key: &str) -> &Value {
        &self.values[key]
    }

    fn bad(key: &str, want: &str, v: &Value) -> CliError {
        CliError::Usage(format!("config key `{key}` must be {want}, got {v}"))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v = self.raw(key);
        v.as_f64().ok_or_else(|| Self::bad(key, "a number", v))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        if self.raw(key).is_null() {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        let v = self.raw(key);
        v.as_u64()
            .ok_or_else(|| Self::bad(key, "a non-negative integer", v))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        if self.raw(key).is_null() {
            Ok(None)
        } else {
            self.u64(key).map(Some)
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        let v = self.raw(key);
        v.as_bool()
            .ok_or_else(|| Self::bad(key, "true or false", v))
    }

    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        let v = self.raw(key);
        v.as_str().ok_or_else(|| Self::bad(key, "a string", v))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.u64("seed")
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.str("variant")?.parse().map_err(CliError::from)
    }

    pub fn convention(&self) -> Result<AdeConvention, CliError> {
        self.str("ade-convention")?.parse().map_err(CliError::from)
    }

    pub fn format(&self) -> Result<TrackFormat, CliError> {
        self.str("format")?.parse().map_err(CliError::from)
    }

    /// Nine row-major numbers, or a path to a file holding them.
    pub fn homography(&self) -> Result<Option<Homography>, CliError> {
        match self.raw("homography") {
            Value::Null => Ok(None),
            Value::String(s) => {
                let h = if Path::new(s).is_file() {
                    Homography::load(Path::new(s))?
                } else {
                    s.replace(',', " ").parse()?
                };
                Ok(Some(h))
            }
            Value::Array(a) => {
                let text: Vec<String> = a.iter().map(|v| v.to_string()).collect();
                Ok(Some(text.join(" ").parse()?))
            }
            v => Err(Self::bad("homography", "nine numbers or a file path", v)),
        }
    }

    pub fn spatial(&self) -> Result<SpatialConfig, CliError> {
        let radius = self.f64("neighbor-radius")?;
        Ok(SpatialConfig {
            neighbor_a: radius,
            neighbor_b: self.opt_f64("scene.neighbor-minor")?.unwrap_or(radius),
            horizon_a: self.opt_f64("scene.horizon-major")?.unwrap_or(radius),
            horizon_b: self.f64("horizon-minor")?,
            k_nb: self.usize("scene.k-nb")?,
            k_hz: self.usize("scene.k-hz")?,
            cell: self.f64("scene.cell")?,
        })
    }

    pub fn dataset(&self) -> Result<DatasetConfig, CliError> {
        let cfg = DatasetConfig {
            frame_rate: self.f64("frame-rate")?,
            downsample: self.usize("downsample")?,
            history_secs: self.f64("history-secs")?,
            predict_secs: self.f64("predict-secs")?,
            stride: self.usize("stride")?,
            spatial: self.spatial()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let data = self.dataset()?;
        let cfg = ModelConfig {
            variant: self.variant()?,
            history: data.history_frames(),
            future: data.future_frames(),
            dt: data.dt(),
            embed: self.usize("model.embed")?,
            enc_hidden: self.usize("model.enc-hidden")?,
            dec_hidden: self.usize("model.dec-hidden")?,
            horizon_grid: (
                self.usize("model.horizon-rows")?,
                self.usize("model.horizon-cols")?,
            ),
            neighbor_grid: (
                self.usize("model.neighbor-rows")?,
                self.usize("model.neighbor-cols")?,
            ),
            conv_channels: (self.usize("model.conv1")?, self.usize("model.conv2")?),
            spatial: data.spatial,
            input_scale: self.f64("model.input-scale")?,
            output_scale: self.f64("model.output-scale")?,
            residual: self.bool("model.residual")?,
            detach_spread: self.bool("model.detach-spread")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.usize("epochs")?,
            batch: self.usize("batch")?,
            lr: self.f64("lr")?,
            seed: self.seed()?,
            clip: self.opt_f64("clip")?,
            val_fraction: self.f64("val-fraction")?,
            workers: self.usize("workers")?,
            max_steps: self.opt_u64("max-steps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let cfg = SynthConfig {
            agents: self.usize("synth.agents")?,
            extent: (
                self.f64("synth.road-length")?,
                self.f64("synth.road-width")?,
            ),
            frame_rate: self.f64("frame-rate")?,
            duration: self.f64("synth.duration")?,
            scenes: self.usize("synth.scenes")?,
            scene_gap_frames: self.u64("synth.scene-gap")?,
            cut_in_prob: self.f64("synth.cut-in-prob")?,
            braking_prob: self.f64("synth.braking-prob")?,
            noise: self.f64("synth.noise")?,
            seed: self.seed()?,
            ..SynthConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `KEY=VALUE` with VALUE read as JSON when it parses, else as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 3, "lr": 0.5, "model.residual": true}"#).unwrap();
        let s = Settings::resolve(Some(&path), vec![("lr".into(), json!(0.25))]).unwrap();
        assert_eq!(s.usize("epochs").unwrap(), 3);
        assert_eq!(s.f64("lr").unwrap(), 0.25);
        assert!(s.model().unwrap().residual);
        assert!(matches!(
            Settings::resolve(None, vec![("nope".into(), json!(1))]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn echo_is_a_valid_config_file() {
        let s = Settings::resolve(None, vec![("variant".into(), json!("he"))]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.json");
        std::fs::write(&path, s.to_json()).unwrap();
        assert_eq!(
            Settings::resolve(Some(&path), vec![]).unwrap().to_json(),
            s.to_json()
        );
    }

    #[test]
    fn radius_drives_both_regions() {
        let s = Settings::resolve(None, vec![("neighbor-radius".into(), json!(5.0))]).unwrap();
        let sp = s.spatial().unwrap();
        assert_eq!(
            (sp.neighbor_a, sp.neighbor_b, sp.horizon_a, sp.horizon_b),
            (5.0, 5.0, 5.0, 1.5)
        );
    }

    #[test]
    fn assignments() {
        assert_eq!(
            parse_assignment("lr=0.1").unwrap(),
            ("lr".into(), json!(0.1))
        );
        assert_eq!(
            parse_assignment("variant=he").unwrap(),
            ("variant".into(), json!("he"))
        );
        assert!(parse_assignment("lr").is_err());
    }
}
