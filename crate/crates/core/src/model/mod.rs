//! Network assembly: the FitzHugh–Nagumo PMNN, its multi-layer composition,
//! and the discretized-NODE and MLP baselines.
//!
//! Architectures are plain configuration values implementing [`Regressor`];
//! weights live separately in [`Parameters`], a list of named blocks in a
//! fixed layout order. Inputs are `n x B` tensors with one sample per column.

mod compose;
mod mlp;
mod node;
mod pmnn;

pub use compose::{compose_layers, LayerSpec, PreActivation};
pub use mlp::MlpConfig;
pub use node::{MlpField, NodeConfig};
pub use pmnn::{PmnnConfig, PmnnForward};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::tape::{Tape, TapeError, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("layer exit times must increase strictly, got {previous} then {next}")]
    NonMonotonicTimes { previous: f64, next: f64 },
    #[error("input has {got} features, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Dynamics(DynamicsError),
}

impl From<DynamicsError> for ModelError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Tape(t) => ModelError::Tape(t),
            other => ModelError::Dynamics(other),
        }
    }
}

impl ModelError {
    /// True when the forward pass failed because the Euler block blew up.
    pub fn is_divergence(&self) -> bool {
        matches!(self, ModelError::Dynamics(DynamicsError::NonFinite { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl BlockSpec {
    pub fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            init: Init::Uniform { fan_in: cols },
        }
    }

    pub fn bias(name: impl Into<String>, rows: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols: 1,
            init: Init::Zeros,
        }
    }

    pub fn gain(name: impl Into<String>, rows: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols: 1,
            init: Init::Ones,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trainable weights as named blocks, in the owning model's layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn new(layout: &[BlockSpec], tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        if layout.len() != tensors.len() {
            return Err(ModelError::Layout(format!(
                "{} blocks expected, {} given",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.iter().zip(&tensors) {
            if t.shape() != (spec.rows, spec.cols) {
                return Err(ModelError::Layout(format!(
                    "block {} should be {}x{}, got {:?}",
                    spec.name,
                    spec.rows,
                    spec.cols,
                    t.shape()
                )));
            }
        }
        Ok(Self {
            names: layout.iter().map(|b| b.name.clone()).collect(),
            tensors,
        })
    }

    /// Rebuild from a flat array laid out block after block, each row-major.
    pub fn from_flat(layout: &[BlockSpec], flat: &[f64]) -> Result<Self, ModelError> {
        let expected: usize = layout.iter().map(BlockSpec::len).sum();
        if flat.len() != expected {
            return Err(ModelError::Layout(format!(
                "{expected} scalars expected, {} given",
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(layout.len());
        for spec in layout {
            let chunk = flat[offset..offset + spec.len()].to_vec();
            offset += spec.len();
            tensors.push(Tensor::new(spec.rows, spec.cols, chunk)?);
        }
        Self::new(layout, tensors)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Push every block onto the tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<Vec<Var>, TapeError> {
        self.tensors
            .iter()
            .map(|t| tape.parameter(t.clone()))
            .collect()
    }
}

/// Common surface of every trainable architecture.
pub trait Regressor {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn layout(&self) -> Vec<BlockSpec>;

    fn validate(&self) -> Result<(), ModelError>;

    /// Output `out x B` for inputs `x` of shape `n x B`; `params` are the
    /// tape nodes of the blocks in layout order.
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, ModelError>;

    fn param_count(&self) -> usize {
        self.layout().iter().map(BlockSpec::len).sum()
    }

    /// Seeded initialization; weights are drawn block by block in layout order.
    fn init_params(&self, seed: u64) -> Parameters {
        let layout = self.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(spec.rows, spec.cols),
                Init::Ones => Tensor::filled(spec.rows, spec.cols, 1.0),
                Init::Uniform { fan_in } => {
                    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor::from_fn(spec.rows, spec.cols, |_, _| rng.gen_range(-s..s))
                }
            })
            .collect();
        Parameters::new(&layout, tensors).expect("layout-generated tensors conform")
    }
}

pub(crate) fn check_params(params: &[Var], layout: &[BlockSpec]) -> Result<(), ModelError> {
    if params.len() != layout.len() {
        return Err(ModelError::Layout(format!(
            "{} parameter nodes given, layout has {}",
            params.len(),
            layout.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_input(tape: &Tape, x: Var, expected: usize) -> Result<(), ModelError> {
    let got = tape.shape(x).0;
    if got != expected {
        return Err(ModelError::DimMismatch { expected, got });
    }
    Ok(())
}

/// Any of the supported architectures; the serialized form carries a
/// `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Pmnn(PmnnConfig),
    Node(NodeConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Pmnn(_) => "pmnn",
            ModelSpec::Node(_) => "node",
            ModelSpec::Mlp(_) => "mlp",
        }
    }

    fn inner(&self) -> &dyn Regressor {
        match self {
            ModelSpec::Pmnn(c) => c,
            ModelSpec::Node(c) => c,
            ModelSpec::Mlp(c) => c,
        }
    }
}

impl Regressor for ModelSpec {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }

    fn layout(&self) -> Vec<BlockSpec> {
        self.inner().layout()
    }

    fn validate(&self) -> Result<(), ModelError> {
        self.inner().validate()
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, ModelError> {
        self.inner().forward(tape, params, x)
    }
}

/// Forward pass without gradients, in chunks of `batch` columns.
pub fn predict<M: Regressor + ?Sized>(
    model: &M,
    params: &Parameters,
    inputs: &Tensor,
    batch: usize,
) -> Result<Tensor, ModelError> {
    let (n, total) = inputs.shape();
    if n != model.input_dim() {
        return Err(ModelError::DimMismatch {
            expected: model.input_dim(),
            got: n,
        });
    }
    let out_dim = model.output_dim();
    let mut out = Tensor::zeros(out_dim, total);
    let mut tape = Tape::new();
    let batch = batch.max(1);
    let mut start = 0;
    while start < total {
        let end = (start + batch).min(total);
        tape.clear();
        let vars = params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let chunk = Tensor::from_fn(n, end - start, |i, j| inputs.get(i, start + j));
        let x = tape.constant(chunk)?;
        let y = model.forward(&mut tape, &vars, x)?;
        let yv = tape.value(y);
        for i in 0..out_dim {
            for j in 0..end - start {
                out.set(i, start + j, yv.get(i, j));
            }
        }
        start = end;
    }
    Ok(out)
}
