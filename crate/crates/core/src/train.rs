//! Likelihood training with Adam, reports and checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use traphic_tensor::rng::{seeded, split_seed};
use traphic_tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor, TensorError};

use crate::model::{GaussianParams, ModelConfig, ModelInput, TraphicModel};
use crate::scene::StateSpace;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Rescale the batch gradient to at most this norm.
    pub clip: Option<f64>,
    pub val_fraction: f64,
    pub workers: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 16,
            batch: 128,
            lr: 1e-3,
            seed: 0,
            clip: None,
            val_fraction: 0.1,
            workers: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.workers == 0 {
            return Err(Error::Config(
                "epochs, batch and workers must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Sum over frames of the bivariate negative log-density of `truth`.
pub fn nll_loss(params: &[GaussianParams], truth: &[[f64; 2]]) -> Result<f64> {
    if params.len() != truth.len() {
        return Err(Error::DatasetMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            params.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (frame, (p, t)) in params.iter().zip(truth).enumerate() {
        if !p.is_valid() {
            return Err(Error::NonFiniteDensity { frame });
        }
        let v = traphic_tensor::kernels::bivariate_nll(&p.to_array(), *t);
        if !v.is_finite() {
            return Err(Error::NonFiniteDensity { frame });
        }
        total += v;
    }
    Ok(total)
}

/// Mean of [`nll_loss`] over a batch.
pub fn batch_nll(batch: &[(Vec<GaussianParams>, Vec<[f64; 2]>)]) -> Result<f64> {
    let mut sum = 0.0;
    for (p, t) in batch {
        sum += nll_loss(p, t)?;
    }
    Ok(sum / batch.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    /// Mean per-sample NLL over the epoch's batches, before each update.
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub wall_secs: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub wall_secs: f64,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Copy with every wall-clock field zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_secs = 0.0;
        for e in &mut r.epochs {
            e.wall_secs = 0.0;
        }
        r
    }

    pub fn final_train_nll(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_nll)
    }
}

/// SHA-256 of the canonical JSON of both configs.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(&(model, train))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_model(&self) -> Result<TraphicModel> {
        TraphicModel::from_params(self.model.clone(), self.params.clone())
    }
}

struct Prepared {
    input: ModelInput,
    truth: Vec<[f64; 2]>,
}

fn prepare_all(model: &TraphicModel, data: &[StateSpace]) -> Result<Vec<Prepared>> {
    data.iter()
        .map(|s| {
            Ok(Prepared {
                input: model.prepare(s)?,
                truth: s.future.clone(),
            })
        })
        .collect()
}

fn numeric(step: u64, model: &TraphicModel, what: &str) -> Error {
    let norms: Vec<String> = model
        .params()
        .value_norms()
        .into_iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect();
    Error::NonFiniteLoss {
        step,
        detail: format!("{what}; parameter norms: {}", norms.join(", ")),
    }
}

fn map_numeric(e: Error, step: u64, model: &TraphicModel) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => {
            numeric(step, model, &format!("non-finite value in {op}"))
        }
        Error::NonFiniteDensity { frame } => {
            numeric(step, model, &format!("invalid density at frame {frame}"))
        }
        Error::Tensor(TensorError::InvalidArgument {
            op: "bivariate_nll",
            reason,
        }) => numeric(step, model, &reason),
        other => other,
    }
}

/// Loss of one sample; gradients are added into `store`.
fn sample_grad(model: &TraphicModel, p: &Prepared, store: &mut ParamStore) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, &p.input, &p.truth)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss, store)?;
    Ok(value)
}

/// One sample's loss and per-parameter gradients.
type SampleGrad = (f64, Vec<Tensor>);

/// Sum of per-sample losses; per-sample gradients are added to the model's
/// grads in index order whatever the worker count.
fn batch_grad(model: &mut TraphicModel, batch: &[&Prepared], workers: usize) -> Result<f64> {
    if workers <= 1 || batch.len() < 2 {
        // the tape reads values from the model and writes grads here
        let mut acc = model.params().clone();
        let mut total = 0.0;
        for p in batch {
            total += sample_grad(model, p, &mut acc)?;
        }
        for (dst, src) in model.params_mut().iter_mut().zip(acc.iter()) {
            dst.grad = src.grad.clone();
        }
        return Ok(total);
    }
    let chunk = batch.len().div_ceil(workers);
    let shared: &TraphicModel = model;
    let results: Vec<Result<Vec<SampleGrad>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> Result<Vec<SampleGrad>> {
                    let mut scratch = shared.params().clone();
                    let mut out = Vec::with_capacity(part.len());
                    for p in part {
                        scratch.zero_grad();
                        let l = sample_grad(shared, p, &mut scratch)?;
                        out.push((l, scratch.iter().map(|t| t.grad.clone()).collect()));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    let mut total = 0.0;
    for r in results {
        for (l, grads) in r? {
            total += l;
            for (p, g) in model.params_mut().iter_mut().zip(&grads) {
                for (d, s) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }
    Ok(total)
}

/// Mean NLL of `model` over prepared samples, without gradients.
fn mean_nll(model: &TraphicModel, data: &[Prepared]) -> Result<f64> {
    let mut sum = 0.0;
    for p in data {
        let g = model.gaussians(&p.input)?;
        sum += nll_loss(&g, &p.truth)?;
    }
    Ok(sum / data.len().max(1) as f64)
}

/// Mean NLL of a model over state spaces.
pub fn evaluate_nll(model: &TraphicModel, data: &[StateSpace]) -> Result<f64> {
    mean_nll(model, &prepare_all(model, data)?)
}

/// Mini-batch Adam on the summed-over-frames, batch-averaged NLL.
pub fn train(
    train_set: &[StateSpace],
    val_set: &[StateSpace],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    let model = TraphicModel::new(model_cfg.clone(), split_seed(cfg.seed, 0))?;
    train_from(model, train_set, val_set, cfg)
}

/// As [`train`], starting from existing parameters.
pub fn train_from(
    mut model: TraphicModel,
    train_set: &[StateSpace],
    val_set: &[StateSpace],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let started = Instant::now();
    let hash = config_hash(model.config(), cfg)?;
    let train_data = prepare_all(&model, train_set)?;
    let val_data = prepare_all(&model, val_set)?;
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle = seeded(split_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &train_data[i]).collect();
            model.params_mut().zero_grad();
            let total = batch_grad(&mut model, &batch, cfg.workers)
                .map_err(|e| map_numeric(e, step, &model))?;
            if !total.is_finite() {
                return Err(numeric(step, &model, "loss is not finite"));
            }
            loss_sum += total;
            seen += batch.len();
            let store = model.params_mut();
            store.scale_grads(1.0 / batch.len() as f64);
            if let Some(clip) = cfg.clip {
                let norm = store.grad_norm();
                if norm > clip {
                    store.scale_grads(clip / norm);
                }
            }
            adam.step(store)?;
            step += 1;
        }
        if seen == 0 {
            break 'outer;
        }
        let val_nll = if val_data.is_empty() {
            None
        } else {
            Some(mean_nll(&model, &val_data).map_err(|e| map_numeric(e, step, &model))?)
        };
        let record = EpochRecord {
            epoch,
            steps: step,
            train_nll: loss_sum / seen as f64,
            val_nll,
            wall_secs: started.elapsed().as_secs_f64(),
            seed: cfg.seed,
            config_hash: hash.clone(),
        };
        log::info!(
            "epoch {epoch} step {step} train_nll {:.4} val_nll {:?}",
            record.train_nll,
            record.val_nll
        );
        epochs.push(record);
    }
    model.params_mut().zero_grad();
    let report = TrainReport {
        seed: cfg.seed,
        config_hash: hash,
        epochs,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    let checkpoint = Checkpoint {
        model: model.config().clone(),
        train: cfg.clone(),
        params: model.into_params(),
        adam,
    };
    Ok((checkpoint, report))
}

const MAGIC: &[u8; 8] = b"TRPHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    adam: AdamConfig,
    adam_step: u64,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    fn header(&self) -> Header {
        Header {
            model: self.model.clone(),
            train: self.train.clone(),
            adam: self.adam.config,
            adam_step: self.adam.step,
            tensors: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect(),
        }
    }

    /// Binary container:
    /// `"TRPHCKPT"`, u32 LE version, u64 LE header length, JSON header,
    /// f64 LE payload (values, then Adam first moments, then second
    /// moments, each in parameter order), 32-byte SHA-256 of everything
    /// before it.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let values = self.params.iter().map(|p| &p.value);
        for t in values.chain(&self.adam.first).chain(&self.adam.second) {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupted container: {what}"));
        if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or too short"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|e| *e <= body.len())
            .ok_or_else(|| corrupt("header length"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])?;
        let mut payload = body[header_end..].chunks_exact(8);
        if !payload.remainder().is_empty() {
            return Err(corrupt("payload not a whole number of f64"));
        }
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data: Option<Vec<f64>> = (0..n)
                .map(|_| {
                    payload
                        .next()
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                })
                .collect();
            Ok(Tensor::new(
                shape.to_vec(),
                data.ok_or_else(|| corrupt("payload too short"))?,
            )?)
        };
        let mut params = ParamStore::new();
        for (name, shape) in &header.tensors {
            let t = read(shape)?;
            params.insert(name.clone(), t)?;
        }
        let mut moments = |_: ()| -> Result<Vec<Tensor>> {
            header.tensors.iter().map(|(_, s)| read(s)).collect()
        };
        let first = moments(())?;
        let second = moments(())?;
        if payload.next().is_some() {
            return Err(corrupt("trailing payload"));
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            params,
            adam: AdamState {
                config: header.adam,
                step: header.adam_step,
                first,
                second,
            },
        })
    }

    /// Text form with the same content, for golden files and diffing.
    pub fn to_json(&self) -> Result<String> {
        let doc = JsonCheckpoint {
            version: CHECKPOINT_VERSION,
            header: self.header(),
            values: self
                .params
                .iter()
                .map(|p| p.value.data().to_vec())
                .collect(),
            first: self.adam.first.iter().map(|t| t.data().to_vec()).collect(),
            second: self.adam.second.iter().map(|t| t.data().to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JsonCheckpoint = serde_json::from_str(text)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: doc.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = doc.header.tensors.len();
        if doc.values.len() != n || doc.first.len() != n || doc.second.len() != n {
            return Err(Error::Checkpoint("tensor count mismatch".into()));
        }
        let mut params = ParamStore::new();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for (i, (name, shape)) in doc.header.tensors.iter().enumerate() {
            params.insert(
                name.clone(),
                Tensor::new(shape.clone(), doc.values[i].clone())?,
            )?;
            first.push(Tensor::new(shape.clone(), doc.first[i].clone())?);
            second.push(Tensor::new(shape.clone(), doc.second[i].clone())?);
        }
        Ok(Self {
            model: doc.header.model,
            train: doc.header.train,
            params,
            adam: AdamState {
                config: doc.header.adam,
                step: doc.header.adam_step,
                first,
                second,
            },
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonCheckpoint {
    version: u32,
    header: Header,
    values: Vec<Vec<f64>>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// Writes the binary container, or JSON when the path ends in `.json`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        ckpt.to_json()?.into_bytes()
    } else {
        ckpt.to_bytes()?
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads either container form, detected by the magic bytes.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        Checkpoint::from_bytes(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Checkpoint("neither binary nor UTF-8 JSON".into()))?;
        Checkpoint::from_json(text)
    }
}

/// Loads a checkpoint and insists it was built for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model != expected {
        return Err(Error::Checkpoint(format!(
            "model configuration differs: checkpoint has {:?}, expected {:?}",
            ckpt.model, expected
        )));
    }
    ckpt.to_model()?;
    Ok(ckpt)
}
