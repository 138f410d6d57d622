//! Finite-difference gradient checks: every tape operation over random
//! configurations, and the whole network on a three-agent micro scene.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use traphic_tensor::finite_diff::{check_store, op_suite, GradCheck, OpReport, STEP};
use traphic_tensor::rng::{seeded, split_seed};
use traphic_tensor::{Tape, TensorError};

use crate::ingest::{class_dims, AgentClass, SceneWindow, WindowAgent};
use crate::model::{ModelConfig, TraphicModel, Variant};
use crate::scene::{build_state_space, SpatialConfig, StateSpace};
use crate::Result;

/// Random configurations per operation.
pub const OP_CONFIGS: usize = 100;
/// Largest acceptable relative error.
pub const TOLERANCE: f64 = 1e-4;

const MICRO_HISTORY: usize = 4;
const MICRO_FUTURE: usize = 3;
const MICRO_DT: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct OpResult {
    pub op: String,
    pub configs: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelResult {
    pub variant: Variant,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub ops: Vec<OpResult>,
    pub models: Vec<ModelResult>,
    pub wall_secs: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.ops
            .iter()
            .map(|o| o.max_rel_error)
            .chain(self.models.iter().map(|m| m.max_rel_error))
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < TOLERANCE
    }
}

/// Tiny sizes so that every scalar parameter can be perturbed.
pub fn micro_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        history: MICRO_HISTORY,
        future: MICRO_FUTURE,
        dt: MICRO_DT,
        embed: 3,
        enc_hidden: 3,
        dec_hidden: 4,
        horizon_grid: (2, 4),
        neighbor_grid: (4, 4),
        conv_channels: (2, 2),
        spatial: micro_spatial(),
        input_scale: 2.0,
        output_scale: 1.0,
        residual: true,
        detach_spread: false,
    }
}

fn micro_spatial() -> SpatialConfig {
    SpatialConfig {
        neighbor_a: 3.0,
        neighbor_b: 2.0,
        horizon_a: 3.0,
        horizon_b: 1.5,
        k_nb: 8,
        k_hz: 4,
        cell: 1.0,
    }
}

/// Ego, a slower agent just ahead and a pedestrian alongside, with seeded
/// jitter so different seeds exercise different values.
pub fn micro_scene(seed: u64) -> Result<StateSpace> {
    let mut rng = seeded(seed);
    let mut jitter = move || rng.random_range(-0.05..0.05);
    let mut agent = |id: i64, class: AgentClass, start: [f64; 2], vel: [f64; 2], ego: bool| {
        let at = |k: i64, j: f64| {
            [
                start[0] + vel[0] * k as f64 * MICRO_DT + j,
                start[1] + vel[1] * k as f64 * MICRO_DT,
            ]
        };
        let history = (0..MICRO_HISTORY as i64).map(|k| at(k, jitter())).collect();
        let future = ego.then(|| {
            (MICRO_HISTORY as i64..(MICRO_HISTORY + MICRO_FUTURE) as i64)
                .map(|k| at(k, jitter()))
                .collect()
        });
        WindowAgent {
            agent_id: id,
            agent_class: class,
            dims: class_dims(class),
            history,
            future,
        }
    };
    let window = SceneWindow {
        reference_frame: MICRO_HISTORY as i64 - 1,
        dt: MICRO_DT,
        agents: vec![
            agent(1, AgentClass::Car, [0.0, 0.0], [1.0, 0.05], true),
            agent(2, AgentClass::Rickshaw, [2.3, 0.2], [0.6, 0.0], false),
            agent(3, AgentClass::Pedestrian, [0.8, -0.9], [0.4, 0.1], false),
        ],
    };
    build_state_space(&window, 0, &micro_spatial())
}

/// Analytic gradients of the micro-scene loss against central differences
/// for every scalar parameter of `variant`.
pub fn check_model(variant: Variant, seed: u64) -> Result<ModelResult> {
    let state = micro_scene(split_seed(seed, 0))?;
    let model = TraphicModel::new(micro_config(variant), split_seed(seed, 1))?;
    let input = model.prepare(&state)?;
    let truth = state.future.clone();

    let mut grads = model.params().clone();
    grads.zero_grad();
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &input, &truth)?;
    tape.backward(loss, &mut grads)?;

    let mut probe_model = model.clone();
    let result: GradCheck = check_store(&grads, STEP, |store| {
        probe_model.params_mut().copy_values_from(store)?;
        let mut t = Tape::new();
        let l =
            probe_model
                .loss(&mut t, &input, &truth)
                .map_err(|e| TensorError::InvalidArgument {
                    op: "model loss",
                    reason: e.to_string(),
                })?;
        Ok(t.value(l).data()[0])
    })?;
    Ok(ModelResult {
        variant,
        scalars: result.checked,
        max_rel_error: result.max_rel_error,
        worst_param: result.worst_param,
        worst_index: result.worst_index,
    })
}

/// The full suite: all operations, then all four variants.
pub fn run(seed: u64) -> Result<GradcheckReport> {
    let started = Instant::now();
    let ops = op_suite(split_seed(seed, 2), OP_CONFIGS)?
        .into_iter()
        .map(|r: OpReport| OpResult {
            op: r.op.to_string(),
            configs: r.configs,
            max_rel_error: r.max_rel_error,
        })
        .collect();
    let models = Variant::ALL
        .iter()
        .map(|&v| check_model(v, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        seed,
        ops,
        models,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_scene_fills_both_maps() {
        let s = micro_scene(3).unwrap();
        assert_eq!(s.agents.len(), 3);
        assert!(!s.horizon.is_empty());
        assert_eq!(s.neighbors.len(), 2);
        let m = TraphicModel::new(micro_config(Variant::Combined), 0).unwrap();
        let input = m.prepare(&s).unwrap();
        assert!(!input.horizon.occupants.is_empty());
        assert_eq!(input.neighbor.occupants.len(), 2);
    }

    #[test]
    fn combined_network_gradients() {
        let r = check_model(Variant::Combined, 7).unwrap();
        assert!(r.max_rel_error < TOLERANCE, "{r:?}");
        assert!(r.scalars > 100);
    }
}
