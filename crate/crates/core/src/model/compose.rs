use crate::dynamics::{euler_block_tape, IntegrationGrid, TapeField};
use crate::tape::{Tape, TapeError, Var};

use super::{ModelError, LAYER_NORM_EPS};

/// Optional `LayerNorm` (gain, bias) followed by optional SiLU.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreActivation {
    pub layer_norm: Option<(Var, Var)>,
    pub silu: bool,
}

impl PreActivation {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, TapeError> {
        let mut h = x;
        if let Some((gain, bias)) = self.layer_norm {
            h = tape.layer_norm(h, gain, bias, LAYER_NORM_EPS)?;
        }
        if self.silu {
            h = tape.silu(h);
        }
        Ok(h)
    }
}

/// One dynamical layer: its state starts at `pre(W x + b)` when the
/// previous layer exits and evolves under `field` until `exit_time`.
pub struct LayerSpec<'a> {
    pub weight: Var,
    pub bias: Var,
    pub pre: PreActivation,
    pub field: &'a dyn TapeField,
    pub exit_time: f64,
    pub dt: f64,
}

/// Chain dynamical layers. Layer `k` integrates over `[t_{k-1}, t_k]`
/// (with `t_0 = 0`) and hands its final state to layer `k + 1`. When
/// `readout` is given, an affine map is applied to the last state.
pub fn compose_layers(
    tape: &mut Tape,
    x: Var,
    layers: &[LayerSpec<'_>],
    readout: Option<(Var, Var)>,
) -> Result<Var, ModelError> {
    let mut previous = 0.0;
    for layer in layers {
        if !(layer.exit_time > previous) {
            return Err(ModelError::NonMonotonicTimes {
                previous,
                next: layer.exit_time,
            });
        }
        previous = layer.exit_time;
    }

    let mut state = x;
    let mut entry = 0.0;
    for layer in layers {
        let grid = IntegrationGrid::new(entry, layer.exit_time, layer.dt)?;
        let lifted = tape.affine(layer.weight, layer.bias, state)?;
        let start = layer.pre.apply(tape, lifted)?;
        state = euler_block_tape(tape, start, layer.field, &grid, None)?;
        entry = layer.exit_time;
    }
    match readout {
        Some((w, b)) => Ok(tape.affine(w, b, state)?),
        None => Ok(state),
    }
}
