use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};

use super::{check_input, check_params, BlockSpec, ModelError, PreActivation, Regressor};

/// Static one-hidden-layer network `W_2 SiLU(LayerNorm(W_1 x + b_1)) + b_2`.
///
/// With `hidden_dim = 2`, LayerNorm on and 8 inputs it has the same 25
/// trainable scalars as the one-unit PMNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub use_layer_norm: bool,
}

impl MlpConfig {
    pub fn iso_parameter(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 2,
            output_dim: 1,
            use_layer_norm: true,
        }
    }
}

impl Regressor for MlpConfig {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn layout(&self) -> Vec<BlockSpec> {
        let mut blocks = vec![
            BlockSpec::weight("W_1", self.hidden_dim, self.input_dim),
            BlockSpec::bias("b_1", self.hidden_dim),
        ];
        if self.use_layer_norm {
            blocks.push(BlockSpec::gain("ln_gain", self.hidden_dim));
            blocks.push(BlockSpec::bias("ln_bias", self.hidden_dim));
        }
        blocks.push(BlockSpec::weight("W_2", self.output_dim, self.hidden_dim));
        blocks.push(BlockSpec::bias("b_2", self.output_dim));
        blocks
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim, hidden_dim and output_dim must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, ModelError> {
        check_params(params, &self.layout())?;
        check_input(tape, x, self.input_dim)?;
        let hidden = tape.affine(params[0], params[1], x)?;
        let pre = PreActivation {
            layer_norm: self.use_layer_norm.then(|| (params[2], params[3])),
            silu: true,
        };
        let hidden = pre.apply(tape, hidden)?;
        let n = params.len();
        Ok(tape.affine(params[n - 2], params[n - 1], hidden)?)
    }
}
