use serde::{Deserialize, Serialize};

use crate::dynamics::{euler_block_tape, FhnParams, FhnTapeField, IntegrationGrid};
use crate::tape::{Tape, Var};

use super::{check_input, check_params, BlockSpec, ModelError, PreActivation, Regressor};

/// Single dynamical hidden layer of `K` FitzHugh–Nagumo units:
///
/// ```text
/// h0 = SiLU(LayerNorm(W_h x + b_h))      (both stages optional)
/// [v, w] <- h0, advanced by H explicit Euler steps of size dt
/// y  = W_out [v_H, w_H] + b_out
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmnnConfig {
    pub input_dim: usize,
    pub fhn_units: usize,
    pub output_dim: usize,
    pub grid: IntegrationGrid,
    pub use_layer_norm: bool,
    pub use_silu: bool,
    pub fhn: FhnParams,
}

/// Nodes produced by [`PmnnConfig::forward_traced`].
#[derive(Debug, Clone)]
pub struct PmnnForward {
    pub output: Var,
    /// Initial hidden state `h0`.
    pub initial_state: Var,
    /// Hidden states `h0..h_H`; empty unless requested.
    pub trajectory: Vec<Var>,
}

impl PmnnConfig {
    /// The 8-input, one-unit architecture with `dt = 20`, `t_end = 500`.
    pub fn reference(input_dim: usize) -> Self {
        Self {
            input_dim,
            fhn_units: 1,
            output_dim: 1,
            grid: IntegrationGrid::from_end(500.0, 20.0).expect("static grid"),
            use_layer_norm: true,
            use_silu: true,
            fhn: FhnParams::default(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        2 * self.fhn_units
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        keep_trajectory: bool,
    ) -> Result<PmnnForward, ModelError> {
        check_params(params, &self.layout())?;
        check_input(tape, x, self.input_dim)?;
        let (w_h, b_h) = (params[0], params[1]);
        let (norm, rest) = if self.use_layer_norm {
            (Some((params[2], params[3])), &params[4..])
        } else {
            (None, &params[2..])
        };
        let (w_out, b_out) = (rest[0], rest[1]);

        let pre = PreActivation {
            layer_norm: norm,
            silu: self.use_silu,
        };
        let lifted = tape.affine(w_h, b_h, x)?;
        let h0 = pre.apply(tape, lifted)?;

        let field = FhnTapeField::constants(tape, self.fhn_units, &self.fhn)?;
        let mut trajectory = Vec::new();
        let keep = keep_trajectory.then_some(&mut trajectory);
        let end = euler_block_tape(tape, h0, &field, &self.grid, keep)?;
        let output = tape.affine(w_out, b_out, end)?;
        Ok(PmnnForward {
            output,
            initial_state: h0,
            trajectory,
        })
    }
}

impl Regressor for PmnnConfig {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn layout(&self) -> Vec<BlockSpec> {
        let hidden = self.hidden_dim();
        let mut blocks = vec![
            BlockSpec::weight("W_h", hidden, self.input_dim),
            BlockSpec::bias("b_h", hidden),
        ];
        if self.use_layer_norm {
            blocks.push(BlockSpec::gain("ln_gain", hidden));
            blocks.push(BlockSpec::bias("ln_bias", hidden));
        }
        blocks.push(BlockSpec::weight("W_out", self.output_dim, hidden));
        blocks.push(BlockSpec::bias("b_out", self.output_dim));
        blocks
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.fhn_units == 0 || self.output_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim, fhn_units and output_dim must be >= 1".into(),
            ));
        }
        self.fhn.validate()?;
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, ModelError> {
        Ok(self.forward_traced(tape, params, x, false)?.output)
    }
}
