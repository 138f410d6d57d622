//! The hybrid predictor: per-agent embeddings and LSTM encoders, a weighted
//! horizon map and a neighbor map each read by a small ConvNet, and an LSTM
//! decoder emitting a bivariate Gaussian per future frame.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use traphic_tensor::rng::{seeded, Prng};
use traphic_tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::scene::{FeatureMode, Member, SpatialConfig, StateSpace};
use crate::{Error, Result};

const KERNEL: usize = 3;
const PAD: usize = 1;
const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    B,
    He,
    Ho,
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::B, Variant::He, Variant::Ho, Variant::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Variant::B => "b",
            Variant::He => "he",
            Variant::Ho => "ho",
            Variant::Combined => "combined",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::B => "TraPHic-B",
            Variant::He => "TraPHic-He",
            Variant::Ho => "TraPHic-Ho",
            Variant::Combined => "TraPHic",
        }
    }

    pub fn wiring(self) -> Wiring {
        let (horizon, features) = match self {
            Variant::B => (false, FeatureMode::PositionOnly),
            Variant::He => (false, FeatureMode::Full),
            Variant::Ho => (true, FeatureMode::PositionOnly),
            Variant::Combined => (true, FeatureMode::Full),
        };
        Wiring {
            ego: true,
            neighbor: true,
            horizon,
            features,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b" => Ok(Variant::B),
            "he" => Ok(Variant::He),
            "ho" => Ok(Variant::Ho),
            "combined" | "full" => Ok(Variant::Combined),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Which branches a variant runs and which features it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wiring {
    pub ego: bool,
    pub neighbor: bool,
    pub horizon: bool,
    pub features: FeatureMode,
}

pub fn variant_wiring(variant: Variant) -> Wiring {
    variant.wiring()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// History frames `h`.
    pub history: usize,
    /// Predicted frames `τ`.
    pub future: usize,
    /// Frame interval (s) the model was built for.
    pub dt: f64,
    pub embed: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// (along-heading cells, lateral cells)
    pub horizon_grid: (usize, usize),
    pub neighbor_grid: (usize, usize),
    pub conv_channels: (usize, usize),
    pub spatial: SpatialConfig,
    /// Positions and velocities are divided by this before embedding.
    pub input_scale: f64,
    /// Meters per raw decoder unit for μ and σ.
    pub output_scale: f64,
    /// Predict μ as an offset from constant-velocity extrapolation of the
    /// ego history instead of as an absolute position.
    #[serde(default)]
    pub residual: bool,
    /// Stop the σ/ρ outputs' gradient at the decoder state, so only the
    /// head's spread rows learn from it and the shared layers are shaped by μ
    /// alone. Changes the training signal, not the loss value.
    #[serde(default)]
    pub detach_spread: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Combined,
            history: 30,
            future: 50,
            dt: 0.1,
            embed: 32,
            enc_hidden: 64,
            dec_hidden: 128,
            horizon_grid: (4, 6),
            neighbor_grid: (8, 8),
            conv_channels: (32, 16),
            spatial: SpatialConfig::default(),
            input_scale: 1.0,
            output_scale: 1.0,
            residual: false,
            detach_spread: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.history,
            self.future,
            self.embed,
            self.enc_hidden,
            self.dec_hidden,
            self.conv_channels.0,
            self.conv_channels.1,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!(
                "model sizes must be positive: {sizes:?}"
            )));
        }
        for (name, g) in [
            ("horizon", self.horizon_grid),
            ("neighbor", self.neighbor_grid),
        ] {
            if g.0 < POOL || g.1 < POOL {
                return Err(Error::Config(format!(
                    "{name} grid {g:?} is smaller than the pool window"
                )));
            }
        }
        if !(self.dt > 0.0 && self.input_scale > 0.0 && self.output_scale > 0.0) {
            return Err(Error::Config("dt and scales must be positive".into()));
        }
        self.spatial.validate()
    }

    pub fn features(&self) -> FeatureMode {
        self.variant.wiring().features
    }

    pub fn frame_width(&self) -> usize {
        self.features().frame_width()
    }

    fn pooled(grid: (usize, usize)) -> usize {
        ((grid.0 - POOL) / POOL + 1) * ((grid.1 - POOL) / POOL + 1)
    }

    /// Length of the horizon ConvNet's flattened output.
    pub fn horizon_features(&self) -> usize {
        self.conv_channels.1 * Self::pooled(self.horizon_grid)
    }

    pub fn neighbor_features(&self) -> usize {
        self.conv_channels.1 * Self::pooled(self.neighbor_grid)
    }

    /// Length of the fused encoding `z`.
    pub fn fused(&self) -> usize {
        self.enc_hidden + self.horizon_features() + self.neighbor_features()
    }
}

/// Bivariate Gaussian for one future frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

impl GaussianParams {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            mu: [p[0], p[1]],
            sigma: [p[2], p[3]],
            rho: p[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.mu[0],
            self.mu[1],
            self.sigma[0],
            self.sigma[1],
            self.rho,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.sigma[0] > 0.0 && self.sigma[1] > 0.0 && self.rho.abs() < 1.0
    }

    /// Draw via the Cholesky factor of the 2×2 covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let r = self.rho;
        [
            self.mu[0] + self.sigma[0] * z1,
            self.mu[1] + self.sigma[1] * (r * z1 + (1.0 - r * r).sqrt() * z2),
        ]
    }

    /// Probability density at `p`.
    pub fn density(&self, p: [f64; 2]) -> f64 {
        (-traphic_tensor::kernels::bivariate_nll(&self.to_array(), p)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    Mean,
    Sample(u64),
}

/// Region covered by an interaction grid, in ego-frame `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub rows: usize,
    pub cols: usize,
}

impl GridBounds {
    /// Row-major cell covering `(u, v)`; points on the upper edge fall into
    /// the last cell, points outside yield `None`.
    pub fn cell(&self, u: f64, v: f64) -> Option<usize> {
        let axis = |x: f64, (lo, hi): (f64, f64), n: usize| -> Option<usize> {
            if !(lo..=hi).contains(&x) {
                return None;
            }
            let i = ((x - lo) / (hi - lo) * n as f64).floor() as usize;
            Some(i.min(n - 1))
        };
        Some(axis(u, self.u, self.rows)? * self.cols + axis(v, self.v, self.cols)?)
    }
}

/// Placement of agents on one grid; one agent per cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractionMap {
    pub rows: usize,
    pub cols: usize,
    /// `(agent index in the state space, cell)`, nearest agents first.
    pub occupants: Vec<(usize, usize)>,
}

impl InteractionMap {
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.rows * self.cols];
        for &(_, c) in &self.occupants {
            m[c] = true;
        }
        m
    }
}

pub type HorizonMap = InteractionMap;
pub type NeighborMap = InteractionMap;

/// Places members (sorted nearest first) on a grid; a cell keeps the first,
/// i.e. nearest, agent that lands in it.
pub fn place(members: &[Member], bounds: &GridBounds) -> InteractionMap {
    let mut map = InteractionMap {
        rows: bounds.rows,
        cols: bounds.cols,
        occupants: Vec::new(),
    };
    let mut taken = vec![false; bounds.rows * bounds.cols];
    for m in members {
        if let Some(c) = bounds.cell(m.u(), m.v()) {
            if !taken[c] {
                taken[c] = true;
                map.occupants.push((m.index, c));
            }
        }
    }
    map
}

pub fn build_maps(config: &ModelConfig, state: &StateSpace) -> (HorizonMap, NeighborMap) {
    let s = &config.spatial;
    let hz = GridBounds {
        u: (0.0, s.horizon_a),
        v: (-s.horizon_b, s.horizon_b),
        rows: config.horizon_grid.0,
        cols: config.horizon_grid.1,
    };
    let nb = GridBounds {
        u: (-s.neighbor_a, s.neighbor_a),
        v: (-s.neighbor_b, s.neighbor_b),
        rows: config.neighbor_grid.0,
        cols: config.neighbor_grid.1,
    };
    (place(&state.horizon, &hz), place(&state.neighbors, &nb))
}

/// Network-ready view of one (window, ego) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    /// `h × width` ego features.
    pub ego: Vec<f64>,
    /// Features of every agent referenced by either map, keyed by state index.
    pub context: BTreeMap<usize, Vec<f64>>,
    pub horizon: HorizonMap,
    pub neighbor: NeighborMap,
    /// Offsets added to μ per frame; zero unless the model is residual.
    pub anchor: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct ConvNet {
    conv1: Dense,
    conv2: Dense,
}

#[derive(Debug, Clone)]
struct Ids {
    ego_embed: Dense,
    ego_lstm: Lstm,
    ctx_embed: Dense,
    ctx_lstm: Lstm,
    horizon_weight: Option<Dense>,
    horizon_conv: Option<ConvNet>,
    neighbor_conv: ConvNet,
    dec_init: Dense,
    dec_lstm: Lstm,
    head: Dense,
}

#[derive(Debug, Clone)]
pub struct TraphicModel {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl TraphicModel {
    /// Fresh parameters: uniform ±1/√fan_in weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        build_params(&config, &mut store, &mut Init::Random(&mut rng))?;
        Self::from_params(config, store)
    }

    /// Wraps an existing parameter set, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut expected = ParamStore::new();
        let ids = build_params(&config, &mut expected, &mut Init::Zeros)?;
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "model expects {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(params.iter()) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected `{}` {:?}, found `{}` {:?}",
                    e.name,
                    e.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Checks that a state space has the history/future lengths and frame
    /// interval this model was configured for.
    pub fn check_state(&self, state: &StateSpace) -> Result<()> {
        let c = &self.config;
        let h = state.history_len();
        let tau = state.future.len();
        if h != c.history || tau != c.future || (state.dt - c.dt).abs() > 1e-9 {
            return Err(Error::DatasetMismatch(format!(
                "model expects h={} τ={} dt={}, data has h={h} τ={tau} dt={}",
                c.history, c.future, c.dt, state.dt
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, state: &StateSpace) -> Result<ModelInput> {
        self.check_state(state)?;
        let mode = self.config.features();
        let scale = self.config.input_scale;
        let (horizon, neighbor) = build_maps(&self.config, state);
        let mut context = BTreeMap::new();
        for &(idx, _) in horizon.occupants.iter().chain(&neighbor.occupants) {
            context
                .entry(idx)
                .or_insert_with(|| state.agents[idx].features(mode, scale));
        }
        let anchor = if self.config.residual {
            crate::eval::constant_velocity(
                &state.ego_state().positions,
                state.dt,
                self.config.future,
            )
        } else {
            vec![[0.0; 2]; self.config.future]
        };
        Ok(ModelInput {
            ego: state.ego_state().features(mode, scale),
            context,
            horizon,
            neighbor,
            anchor,
        })
    }

    fn dense(&self, tape: &mut Tape, d: &Dense, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, d.w)?;
        let b = tape.param(&self.params, d.b)?;
        Ok(tape.linear(x, w, b)?)
    }

    /// ELU(W x + b) for one frame of features.
    pub fn embed(&self, tape: &mut Tape, ego: bool, frame: Var) -> Result<Var> {
        let d = if ego {
            &self.ids.ego_embed
        } else {
            &self.ids.ctx_embed
        };
        let y = self.dense(tape, d, frame)?;
        Ok(tape.elu(y)?)
    }

    /// Embeds every history frame and runs the encoder LSTM over them,
    /// returning the final hidden state.
    pub fn encode(&self, tape: &mut Tape, ego: bool, features: &[f64]) -> Result<Var> {
        let width = self.config.frame_width();
        if features.len() != width * self.config.history {
            return Err(Error::DatasetMismatch(format!(
                "expected {}×{width} features, got {}",
                self.config.history,
                features.len()
            )));
        }
        let l = if ego {
            &self.ids.ego_lstm
        } else {
            &self.ids.ctx_lstm
        };
        let hidden = self.config.enc_hidden;
        let mut h = tape.constant(Tensor::zeros(&[hidden]))?;
        let mut c = h;
        for frame in features.chunks(width) {
            let x = tape.constant(Tensor::vector(frame.to_vec()))?;
            let e = self.embed(tape, ego, x)?;
            (h, c) = self.lstm_step(tape, l, e, h, c)?;
        }
        Ok(h)
    }

    fn lstm_step(&self, tape: &mut Tape, l: &Lstm, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = tape.param(&self.params, l.w_ih)?;
        let w_hh = tape.param(&self.params, l.w_hh)?;
        let b = tape.param(&self.params, l.b)?;
        Ok(tape.lstm_cell(x, h, c, w_ih, w_hh, b)?)
    }

    /// The learned horizon weighting ELU(W h + b). Errors for variants
    /// without a horizon branch.
    pub fn horizon_weighting(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let d = self.ids.horizon_weight.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "variant {} has no horizon branch",
                self.config.variant
            ))
        })?;
        let y = self.dense(tape, d, hidden)?;
        Ok(tape.elu(y)?)
    }

    fn convnet(&self, tape: &mut Tape, net: &ConvNet, map: Var) -> Result<Var> {
        let mut x = map;
        for d in [&net.conv1, &net.conv2] {
            let w = tape.param(&self.params, d.w)?;
            let b = tape.param(&self.params, d.b)?;
            let y = tape.conv2d(x, w, b, 1, PAD)?;
            x = tape.elu(y)?;
        }
        let pooled = tape.maxpool2d(x, POOL, POOL)?;
        Ok(tape.flatten(pooled)?)
    }

    /// conv → ELU → conv → ELU → max-pool → flatten over a `[C, rows, cols]` map.
    pub fn conv_features(&self, tape: &mut Tape, horizon: bool, map: Var) -> Result<Var> {
        let net = if horizon {
            self.ids.horizon_conv.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "variant {} has no horizon branch",
                    self.config.variant
                ))
            })?
        } else {
            &self.ids.neighbor_conv
        };
        self.convnet(tape, net, map)
    }

    /// Seeds the decoder from `z = [h_i, f_hz, f_nb]` and unrolls it for τ
    /// steps. Each returned variable holds `[μx, μy, σx, σy, ρ]`.
    pub fn fuse_and_decode(
        &self,
        tape: &mut Tape,
        h_ego: Var,
        f_hz: Var,
        f_nb: Var,
        anchor: &[[f64; 2]],
    ) -> Result<Vec<Var>> {
        if anchor.len() != self.config.future {
            return Err(Error::DatasetMismatch(format!(
                "{} anchor frames for a {}-frame decoder",
                anchor.len(),
                self.config.future
            )));
        }
        let z = tape.concat(&[h_ego, f_hz, f_nb])?;
        let init = self.dense(tape, &self.ids.dec_init, z)?;
        let mut h = tape.tanh(init)?;
        let mut c = tape.constant(Tensor::zeros(&[self.config.dec_hidden]))?;
        let mut input = tape.constant(Tensor::zeros(&[2]))?;
        let scale = self.config.output_scale;
        let mut out = Vec::with_capacity(self.config.future);
        for offset in anchor {
            (h, c) = self.lstm_step(tape, &self.ids.dec_lstm, input, h, c)?;
            let raw = self.dense(tape, &self.ids.head, h)?;
            let mu_raw = tape.slice(raw, 0, 2)?;
            let spread_raw = if self.config.detach_spread {
                let hd = tape.detach(h)?;
                self.dense(tape, &self.ids.head, hd)?
            } else {
                raw
            };
            let sig_raw = tape.slice(spread_raw, 2, 2)?;
            let rho_raw = tape.slice(spread_raw, 4, 1)?;
            let mut mu = tape.scale(mu_raw, scale)?;
            if *offset != [0.0, 0.0] {
                let a = tape.constant(Tensor::vector(offset.to_vec()))?;
                mu = tape.add(mu, a)?;
            }
            let sig = tape.exp(sig_raw)?;
            let sig = tape.scale(sig, scale)?;
            let rho = tape.tanh(rho_raw)?;
            out.push(tape.concat(&[mu, sig, rho])?);
            input = mu_raw;
        }
        Ok(out)
    }

    fn map_tensor(
        &self,
        tape: &mut Tape,
        map: &InteractionMap,
        hidden: &BTreeMap<usize, Var>,
    ) -> Result<Var> {
        let parts: Vec<(Var, usize)> = map
            .occupants
            .iter()
            .map(|&(i, c)| (hidden[&i], c))
            .collect();
        Ok(tape.scatter_grid(&parts, self.config.enc_hidden, map.rows, map.cols)?)
    }

    /// Full forward pass; one `[5]` variable per future frame.
    pub fn forward(&self, tape: &mut Tape, input: &ModelInput) -> Result<Vec<Var>> {
        let wiring = self.config.variant.wiring();
        let h_ego = self.encode(tape, true, &input.ego)?;

        let mut used: Vec<usize> = input.neighbor.occupants.iter().map(|o| o.0).collect();
        if wiring.horizon {
            used.extend(input.horizon.occupants.iter().map(|o| o.0));
        }
        used.sort_unstable();
        used.dedup();
        let mut hidden = BTreeMap::new();
        for idx in used {
            let feats = input.context.get(&idx).ok_or_else(|| {
                Error::DatasetMismatch(format!("no features for agent index {idx}"))
            })?;
            hidden.insert(idx, self.encode(tape, false, feats)?);
        }

        let f_nb = {
            let map = self.map_tensor(tape, &input.neighbor, &hidden)?;
            self.conv_features(tape, false, map)?
        };
        let f_hz = if wiring.horizon {
            let mut weighted = BTreeMap::new();
            for &(idx, _) in &input.horizon.occupants {
                weighted.insert(idx, self.horizon_weighting(tape, hidden[&idx])?);
            }
            let map = self.map_tensor(tape, &input.horizon, &weighted)?;
            self.conv_features(tape, true, map)?
        } else {
            tape.constant(Tensor::zeros(&[self.config.horizon_features()]))?
        };
        self.fuse_and_decode(tape, h_ego, f_hz, f_nb, &input.anchor)
    }

    /// Sum over future frames of the per-frame negative log-likelihood.
    pub fn loss(&self, tape: &mut Tape, input: &ModelInput, truth: &[[f64; 2]]) -> Result<Var> {
        let steps = self.forward(tape, input)?;
        if truth.len() != steps.len() {
            return Err(Error::DatasetMismatch(format!(
                "{} predicted frames vs {} ground-truth frames",
                steps.len(),
                truth.len()
            )));
        }
        let mut terms = Vec::with_capacity(steps.len());
        for (frame, (p, t)) in steps.iter().zip(truth).enumerate() {
            let nll = tape.bivariate_nll(*p, *t).map_err(|e| match e {
                traphic_tensor::TensorError::NonFinite { .. } => Error::NonFiniteDensity { frame },
                other => other.into(),
            })?;
            terms.push(nll);
        }
        let all = tape.concat(&terms)?;
        Ok(tape.sum(all)?)
    }

    pub fn gaussians(&self, input: &ModelInput) -> Result<Vec<GaussianParams>> {
        let mut tape = Tape::new();
        let steps = self.forward(&mut tape, input)?;
        let out: Vec<GaussianParams> = steps
            .iter()
            .map(|v| GaussianParams::from_slice(tape.value(*v).data()))
            .collect();
        if let Some(frame) = out.iter().position(|g| !g.is_valid()) {
            return Err(Error::NonFiniteDensity { frame });
        }
        Ok(out)
    }

    /// Ego-frame trajectory: the per-frame means, or one seeded draw.
    pub fn predict(&self, state: &StateSpace, mode: PredictMode) -> Result<Vec<[f64; 2]>> {
        let input = self.prepare(state)?;
        let g = self.gaussians(&input)?;
        Ok(match mode {
            PredictMode::Mean => g.iter().map(|p| p.mu).collect(),
            PredictMode::Sample(seed) => {
                let mut rng: Prng = seeded(seed);
                g.iter().map(|p| p.sample(&mut rng)).collect()
            }
        })
    }
}

enum Init<'a> {
    Random(&'a mut Prng),
    Zeros,
}

impl Init<'_> {
    fn weight(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        shape: &[usize],
        fan_in: usize,
    ) -> Result<ParamId> {
        Ok(match self {
            Init::Random(rng) => store.insert_uniform(name, shape, fan_in, &mut **rng)?,
            Init::Zeros => store.insert_zeros(name, shape)?,
        })
    }
}

fn dense(
    store: &mut ParamStore,
    init: &mut Init,
    name: &str,
    out: usize,
    inp: usize,
) -> Result<Dense> {
    Ok(Dense {
        w: init.weight(store, &format!("{name}.w"), &[out, inp], inp)?,
        b: store.insert_zeros(format!("{name}.b"), &[out])?,
    })
}

fn lstm(
    store: &mut ParamStore,
    init: &mut Init,
    name: &str,
    inp: usize,
    hidden: usize,
) -> Result<Lstm> {
    Ok(Lstm {
        w_ih: init.weight(store, &format!("{name}.w_ih"), &[4 * hidden, inp], inp)?,
        w_hh: init.weight(
            store,
            &format!("{name}.w_hh"),
            &[4 * hidden, hidden],
            hidden,
        )?,
        b: store.insert_zeros(format!("{name}.b"), &[4 * hidden])?,
    })
}

fn convnet(
    store: &mut ParamStore,
    init: &mut Init,
    name: &str,
    c_in: usize,
    ch: (usize, usize),
) -> Result<ConvNet> {
    let mut layer = |idx: usize, i: usize, o: usize| -> Result<Dense> {
        let fan = i * KERNEL * KERNEL;
        Ok(Dense {
            w: init.weight(
                store,
                &format!("{name}.conv{idx}.w"),
                &[o, i, KERNEL, KERNEL],
                fan,
            )?,
            b: store.insert_zeros(format!("{name}.conv{idx}.b"), &[o])?,
        })
    };
    Ok(ConvNet {
        conv1: layer(1, c_in, ch.0)?,
        conv2: layer(2, ch.0, ch.1)?,
    })
}

fn build_params(c: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<Ids> {
    let wiring = c.variant.wiring();
    let width = wiring.features.frame_width();
    let ego_embed = dense(store, init, "ego.embed", c.embed, width)?;
    let ego_lstm = lstm(store, init, "ego.lstm", c.embed, c.enc_hidden)?;
    let ctx_embed = dense(store, init, "context.embed", c.embed, width)?;
    let ctx_lstm = lstm(store, init, "context.lstm", c.embed, c.enc_hidden)?;
    let (horizon_weight, horizon_conv) = if wiring.horizon {
        (
            Some(dense(
                store,
                init,
                "horizon.weight",
                c.enc_hidden,
                c.enc_hidden,
            )?),
            Some(convnet(
                store,
                init,
                "horizon",
                c.enc_hidden,
                c.conv_channels,
            )?),
        )
    } else {
        (None, None)
    };
    let neighbor_conv = convnet(store, init, "neighbor", c.enc_hidden, c.conv_channels)?;
    let dec_init = dense(store, init, "decoder.init", c.dec_hidden, c.fused())?;
    let dec_lstm = lstm(store, init, "decoder.lstm", 2, c.dec_hidden)?;
    let head = dense(store, init, "decoder.head", 5, c.dec_hidden)?;
    Ok(Ids {
        ego_embed,
        ego_lstm,
        ctx_embed,
        ctx_lstm,
        horizon_weight,
        horizon_conv,
        neighbor_conv,
        dec_init,
        dec_lstm,
        head,
    })
}
