use serde::{Deserialize, Serialize};

use crate::dynamics::{euler_block_tape, IntegrationGrid, TapeField};
use crate::tape::{Tape, TapeError, Var};

use super::{check_input, check_params, BlockSpec, ModelError, Regressor};

/// Discretized neural ODE baseline: affine lift to `hidden_dim`, a learned
/// tanh field integrated by the same unrolled Euler block as the PMNN, and
/// an affine readout. Gradients flow through the unrolled solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Linear layers inside the vector field (tanh between them).
    pub field_layers: usize,
    pub output_dim: usize,
    pub grid: IntegrationGrid,
}

/// Feed-forward field `f(h) = W_L tanh(... tanh(W_1 h + b_1) ...) + b_L`.
#[derive(Debug, Clone)]
pub struct MlpField {
    pub dim: usize,
    pub layers: Vec<(Var, Var)>,
}

impl TapeField for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_tape(&self, tape: &mut Tape, state: Var) -> Result<Var, TapeError> {
        let mut h = state;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(w, b, h)?;
            if k < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

impl NodeConfig {
    /// Two-layer field of width 15 on the 8 housing features, `dt = 0.1`
    /// up to `t = 1`.
    pub fn reference(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 15,
            field_layers: 2,
            output_dim: 1,
            grid: IntegrationGrid::from_end(1.0, 0.1).expect("static grid"),
        }
    }
}

impl Regressor for NodeConfig {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn layout(&self) -> Vec<BlockSpec> {
        let h = self.hidden_dim;
        let mut blocks = vec![
            BlockSpec::weight("W_in", h, self.input_dim),
            BlockSpec::bias("b_in", h),
        ];
        for k in 1..=self.field_layers {
            blocks.push(BlockSpec::weight(format!("field_W_{k}"), h, h));
            blocks.push(BlockSpec::bias(format!("field_b_{k}"), h));
        }
        blocks.push(BlockSpec::weight("W_out", self.output_dim, h));
        blocks.push(BlockSpec::bias("b_out", self.output_dim));
        blocks
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim, hidden_dim and output_dim must be >= 1".into(),
            ));
        }
        if self.field_layers == 0 {
            return Err(ModelError::InvalidConfig(
                "the vector field needs at least one layer".into(),
            ));
        }
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, ModelError> {
        check_params(params, &self.layout())?;
        check_input(tape, x, self.input_dim)?;
        let lifted = tape.affine(params[0], params[1], x)?;
        let field = MlpField {
            dim: self.hidden_dim,
            layers: (0..self.field_layers)
                .map(|k| (params[2 + 2 * k], params[3 + 2 * k]))
                .collect(),
        };
        let end = euler_block_tape(tape, lifted, &field, &self.grid, None)?;
        let n = params.len();
        Ok(tape.affine(params[n - 2], params[n - 1], end)?)
    }
}
