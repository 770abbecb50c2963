//! Mini-batch Adam training on the MSE loss with validation early stopping,
//! evaluation metrics, and grid search.

mod adam;
mod grid;
mod stopping;

pub use adam::{adam_step, OptimizerState};
pub use grid::{
    divergence_map, grid_search, CellOutcome, CellStatus, DivergenceCell, GridOptions, GridReport,
    Probe, SearchSpace,
};
pub use stopping::{EarlyStopping, Verdict};

use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SplitData, Standardizer};
use crate::json::{lossy_f64, lossy_vec};
use crate::model::{predict, ModelError, ModelSpec, Parameters, Regressor};
use crate::tape::{Tape, TapeError};
use crate::tensor::Tensor;

/// Columns per forward pass when evaluating a whole split.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset has {got} features, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    Space(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds weight initialization and the per-epoch shuffle.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            min_delta: 5e-2,
            batch_size: 32,
            lr: 5e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(TrainError::Config("min_delta must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Error metrics on one split: on the standardized target scale and, via
/// the inverse target transform, in the target's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    #[serde(with = "lossy_f64")]
    pub mse: f64,
    #[serde(with = "lossy_f64")]
    pub rmse: f64,
    #[serde(with = "lossy_f64")]
    pub mse_raw: f64,
    #[serde(with = "lossy_f64")]
    pub rmse_raw: f64,
}

impl Metrics {
    pub fn diverged() -> Self {
        Self {
            count: 0,
            mse: f64::INFINITY,
            rmse: f64::INFINITY,
            mse_raw: f64::INFINITY,
            rmse_raw: f64::INFINITY,
        }
    }

    pub fn from_predictions(
        pred: &Tensor,
        target: &Tensor,
        standardizer: Option<&Standardizer>,
    ) -> Self {
        let n = target.len();
        let mut sq = 0.0;
        let mut sq_raw = 0.0;
        for (&p, &y) in pred.as_slice().iter().zip(target.as_slice()) {
            sq += (p - y) * (p - y);
            let d = match standardizer {
                Some(s) => s.inverse_target(p) - s.inverse_target(y),
                None => p - y,
            };
            sq_raw += d * d;
        }
        let mse = sq / n as f64;
        let mse_raw = sq_raw / n as f64;
        let clean = |x: f64| if x.is_finite() { x } else { f64::INFINITY };
        let (mse, mse_raw) = (clean(mse), clean(mse_raw));
        Self {
            count: n,
            mse,
            rmse: mse.sqrt(),
            mse_raw,
            rmse_raw: mse_raw.sqrt(),
        }
    }
}

/// Everything needed to redraw the loss curves and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelSpec,
    pub train_config: TrainConfig,
    pub param_count: usize,
    pub seed: u64,
    #[serde(with = "lossy_vec")]
    pub train_loss: Vec<f64>,
    #[serde(with = "lossy_vec")]
    pub val_loss: Vec<f64>,
    /// 1-based epoch of the lowest validation loss; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    #[serde(with = "lossy_f64")]
    pub best_val_mse: f64,
    pub test: Metrics,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub seconds: f64,
}

impl RunRecord {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    /// `epoch,train_loss,val_loss`, one row per completed epoch.
    pub fn write_loss_curve<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for (k, (tr, va)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            writeln!(out, "{},{},{}", k + 1, tr, va)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// Weights from the epoch with the lowest validation loss.
    pub params: Parameters,
}

pub fn evaluate(
    model: &dyn Regressor,
    params: &Parameters,
    split: &SplitData,
    standardizer: Option<&Standardizer>,
) -> Result<Metrics, TrainError> {
    if split.n_features() != model.input_dim() {
        return Err(TrainError::DimMismatch {
            expected: model.input_dim(),
            got: split.n_features(),
        });
    }
    let pred = predict(model, params, &split.x, EVAL_CHUNK)?;
    Ok(Metrics::from_predictions(&pred, &split.y, standardizer))
}

/// Like [`evaluate`], but a blow-up in the forward pass yields infinite
/// errors instead of an error.
fn evaluate_or_diverge(
    model: &dyn Regressor,
    params: &Parameters,
    split: &SplitData,
    standardizer: Option<&Standardizer>,
) -> Result<Metrics, TrainError> {
    match evaluate(model, params, split, standardizer) {
        Err(TrainError::Model(e)) if e.is_divergence() => Ok(Metrics::diverged()),
        other => other,
    }
}

enum Step {
    Loss(f64),
    Diverged(String),
}

fn train_step(
    tape: &mut Tape,
    model: &ModelSpec,
    params: &mut Parameters,
    batch: &SplitData,
    opt: &mut OptimizerState,
) -> Result<Step, TrainError> {
    tape.clear();
    let vars = params.register(tape)?;
    let x = tape.constant(batch.x.clone())?;
    let pred = match model.forward(tape, &vars, x) {
        Ok(p) => p,
        Err(e) if e.is_divergence() => return Ok(Step::Diverged(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let loss = tape.mse_loss(pred, &batch.y)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(Step::Diverged(format!("non-finite batch loss {value}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            tape.grad(v).cloned().unwrap_or_else(|| {
                let (r, c) = tape.shape(v);
                Tensor::zeros(r, c)
            })
        })
        .collect();
    if grads.iter().any(|g| !g.all_finite()) {
        return Ok(Step::Diverged("non-finite gradient".into()));
    }
    adam_step(params.tensors_mut(), &grads, opt)?;
    if params.tensors().iter().any(|t| !t.all_finite()) {
        return Ok(Step::Diverged("non-finite parameters after update".into()));
    }
    Ok(Step::Loss(value))
}

/// Train `model` on `data.train`, early-stopping on `data.validation`, and
/// report test metrics for the restored best-validation weights. A blow-up
/// marks the run diverged (with `+inf` recorded for that epoch) rather than
/// failing.
pub fn train(
    model: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if data.n_features() != model.input_dim() {
        return Err(TrainError::DimMismatch {
            expected: model.input_dim(),
            got: data.n_features(),
        });
    }
    let started = Instant::now();
    let mut params = model.init_params(cfg.seed);
    let mut best_params = params.clone();
    let mut opt = OptimizerState::new(cfg.lr, params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut tape = Tape::new();

    let n_train = data.train.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut divergence = None;

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.train.gather(chunk);
            match train_step(&mut tape, model, &mut params, &batch, &mut opt)? {
                Step::Loss(l) => total += l * chunk.len() as f64,
                Step::Diverged(why) => {
                    divergence = Some(format!("epoch {epoch}: {why}"));
                    break;
                }
            }
        }
        let val = if divergence.is_none() {
            evaluate_or_diverge(model, &params, &data.validation, None)?.mse
        } else {
            f64::INFINITY
        };
        if divergence.is_none() && !val.is_finite() {
            divergence = Some(format!("epoch {epoch}: validation loss is not finite"));
        }
        if divergence.is_some() {
            train_loss.push(f64::INFINITY);
            val_loss.push(f64::INFINITY);
            break;
        }
        train_loss.push(total / n_train.max(1) as f64);
        val_loss.push(val);
        debug!(
            "epoch {epoch}: train {:.6} val {val:.6}",
            train_loss[epoch - 1]
        );
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = params.clone();
        }
        if stopper.observe(val) == Verdict::Stop {
            info!("early stop at epoch {epoch}, best epoch {best_epoch}");
            break;
        }
    }
    if let Some(why) = &divergence {
        warn!("run diverged: {why}");
    }

    let test = evaluate_or_diverge(model, &best_params, &data.test, Some(&data.standardizer))?;
    let record = RunRecord {
        model: model.clone(),
        train_config: cfg.clone(),
        param_count: model.param_count(),
        seed: cfg.seed,
        stopped_epoch: val_loss.len(),
        train_loss,
        val_loss,
        best_epoch,
        best_val_mse: best_val,
        test,
        diverged: divergence.is_some(),
        divergence,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        record,
        params: best_params,
    })
}
