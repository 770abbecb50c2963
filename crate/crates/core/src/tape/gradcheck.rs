use crate::tensor::Tensor;

use super::{Tape, TapeError, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error within each parameter block, in input order.
    pub per_block: Vec<f64>,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Central finite-difference check of the gradient of a scalar function.
///
/// `f` receives a fresh tape and one parameter node per entry of `params`
/// and must return a `1 x 1` loss node. The error for coordinate `i` is
/// `|analytic - (f(p + h e_i) - f(p - h e_i)) / 2h| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[Tensor],
    h: f64,
) -> Result<GradCheckReport, TapeError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    if !(h > 0.0) {
        return Err(TapeError::InvalidArgument {
            op: "finite_difference_check",
            reason: format!("step must be positive, got {h}"),
        });
    }

    let mut tape = Tape::new();
    let analytic: Vec<Tensor> = {
        let vars = register(&mut tape, params)?;
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .map(|&v| {
                tape.grad(v)
                    .cloned()
                    .expect("parameters always get a gradient")
            })
            .collect()
    };

    let mut eval = |point: &[Tensor]| -> Result<f64, TapeError> {
        tape.clear();
        let vars = register(&mut tape, point)?;
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss);
        if !value.is_scalar() {
            return Err(TapeError::NonScalarLoss {
                shape: value.shape(),
            });
        }
        Ok(value.item())
    };

    let mut point = params.to_vec();
    let mut per_block = Vec::with_capacity(params.len());
    let mut coordinates = 0;
    for block in 0..params.len() {
        let mut worst: f64 = 0.0;
        for i in 0..params[block].len() {
            let original = params[block].as_slice()[i];
            point[block].as_mut_slice()[i] = original + h;
            let plus = eval(&point)?;
            point[block].as_mut_slice()[i] = original - h;
            let minus = eval(&point)?;
            point[block].as_mut_slice()[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[block].as_slice()[i];
            let err = (exact - numeric).abs() / exact.abs().max(1.0);
            // NaN must not hide behind max()
            worst = if err.is_nan() {
                f64::NAN
            } else {
                worst.max(err)
            };
            coordinates += 1;
        }
        per_block.push(worst);
    }
    let max_rel_error = per_block.iter().copied().fold(0.0, |acc: f64, e| {
        if e.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(e)
        }
    });
    Ok(GradCheckReport {
        per_block,
        max_rel_error,
        coordinates,
    })
}

fn register(tape: &mut Tape, params: &[Tensor]) -> Result<Vec<Var>, TapeError> {
    params.iter().map(|p| tape.parameter(p.clone())).collect()
}
