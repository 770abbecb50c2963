//! ODE vector fields and the explicit Euler block.
//!
//! Fields come in two flavours: [`VectorField`] evaluates on plain slices and
//! drives [`integrate`], [`reference_solve`] and trajectory export;
//! [`TapeField`] records the same arithmetic on a [`Tape`] so the unrolled
//! Euler block can be differentiated.
//!
//! For a layer of `K` FitzHugh–Nagumo units the state has `2K` entries:
//! `v_1..v_K` followed by `w_1..w_K`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{Tape, TapeError, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid FitzHugh-Nagumo parameters: {0}")]
    InvalidParams(String),
    #[error("invalid integration grid: {0}")]
    InvalidGrid(String),
    #[error("state became non-finite at Euler step {step}")]
    NonFinite { step: usize },
    #[error("state has length {got}, field expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// FitzHugh–Nagumo coefficients:
/// `dv/dt = I - v(v - a)(v - 1) - w`, `dw/dt = b(v - g w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    #[serde(rename = "I")]
    pub i: f64,
}

impl Default for FhnParams {
    /// Classical excitable regime.
    fn default() -> Self {
        Self {
            a: 0.25,
            b: 0.002,
            g: 2.5,
            i: 0.0,
        }
    }
}

impl FhnParams {
    pub fn new(a: f64, b: f64, g: f64, i: f64) -> Result<Self, DynamicsError> {
        let p = Self { a, b, g, i };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let Self { a, b, g, i } = *self;
        if !(a > 0.0 && a < 1.0) {
            return Err(DynamicsError::InvalidParams(format!(
                "need 0 < a < 1, got a = {a}"
            )));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(DynamicsError::InvalidParams(format!(
                "need b > 0, got b = {b}"
            )));
        }
        if !(g >= 0.0) || !g.is_finite() {
            return Err(DynamicsError::InvalidParams(format!(
                "need g >= 0, got g = {g}"
            )));
        }
        if !(i >= 0.0) || !i.is_finite() {
            return Err(DynamicsError::InvalidParams(format!(
                "need I >= 0, got I = {i}"
            )));
        }
        Ok(())
    }

    /// `w` on the v-nullcline (`dv/dt = 0`).
    pub fn v_nullcline(&self, v: f64) -> f64 {
        self.i - v * (v - self.a) * (v - 1.0)
    }

    /// `w` on the w-nullcline (`dw/dt = 0`); undefined when `g = 0`.
    pub fn w_nullcline(&self, v: f64) -> Option<f64> {
        (self.g > 0.0).then(|| v / self.g)
    }
}

/// FitzHugh–Nagumo right-hand side for `K` independent units.
pub fn fhn_field(
    v: &[f64],
    w: &[f64],
    params: &FhnParams,
) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    if v.len() != w.len() || v.is_empty() {
        return Err(DynamicsError::DimMismatch {
            expected: v.len(),
            got: w.len(),
        });
    }
    let mut dv = vec![0.0; v.len()];
    let mut dw = vec![0.0; v.len()];
    fhn_into(v, w, params, &mut dv, &mut dw);
    Ok((dv, dw))
}

fn fhn_into(v: &[f64], w: &[f64], p: &FhnParams, dv: &mut [f64], dw: &mut [f64]) {
    for k in 0..v.len() {
        let cubic = v[k] * (v[k] - p.a) * (v[k] - 1.0);
        dv[k] = p.i - cubic - w[k];
        dw[k] = p.b * (v[k] - p.g * w[k]);
    }
}

/// Autonomous vector field `dx/dt = f(x)` evaluated on plain slices.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `f(state)` into `out`; both have length `dim()`.
    fn eval(&self, state: &[f64], out: &mut [f64]);
}

/// Vector field recorded on a tape; `state` is `dim x B`, one sample per column.
pub trait TapeField {
    fn dim(&self) -> usize;

    fn eval_tape(&self, tape: &mut Tape, state: Var) -> Result<Var, TapeError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitzHughNagumo {
    pub units: usize,
    pub params: FhnParams,
}

impl FitzHughNagumo {
    pub fn new(units: usize, params: FhnParams) -> Self {
        Self { units, params }
    }
}

impl VectorField for FitzHughNagumo {
    fn dim(&self) -> usize {
        2 * self.units
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) {
        let k = self.units;
        let (v, w) = state.split_at(k);
        let (dv, dw) = out.split_at_mut(k);
        fhn_into(v, w, &self.params, dv, dw);
    }
}

/// FitzHugh–Nagumo field whose coefficients are `1 x 1` tape nodes, either
/// constants or trainable parameters.
#[derive(Debug, Clone, Copy)]
pub struct FhnTapeField {
    pub units: usize,
    pub a: Var,
    pub b: Var,
    pub g: Var,
    pub i: Var,
}

impl FhnTapeField {
    pub fn constants(tape: &mut Tape, units: usize, p: &FhnParams) -> Result<Self, TapeError> {
        Ok(Self {
            units,
            a: tape.constant(Tensor::scalar(p.a))?,
            b: tape.constant(Tensor::scalar(p.b))?,
            g: tape.constant(Tensor::scalar(p.g))?,
            i: tape.constant(Tensor::scalar(p.i))?,
        })
    }

    pub fn trainable(tape: &mut Tape, units: usize, p: &FhnParams) -> Result<Self, TapeError> {
        Ok(Self {
            units,
            a: tape.parameter(Tensor::scalar(p.a))?,
            b: tape.parameter(Tensor::scalar(p.b))?,
            g: tape.parameter(Tensor::scalar(p.g))?,
            i: tape.parameter(Tensor::scalar(p.i))?,
        })
    }

    /// `(dv, dw)` for separate `v` and `w` nodes of shape `K x B`.
    pub fn split_field(&self, tape: &mut Tape, v: Var, w: Var) -> Result<(Var, Var), TapeError> {
        let neg_a = tape.scale(self.a, -1.0);
        let v_minus_a = tape.add_scalar(v, neg_a)?;
        let v_minus_one = tape.offset(v, -1.0);
        let cubic = tape.mul(v, v_minus_a)?;
        let cubic = tape.mul(cubic, v_minus_one)?;
        let drive = tape.add(cubic, w)?;
        let drive = tape.scale(drive, -1.0);
        let dv = tape.add_scalar(drive, self.i)?;
        let gw = tape.mul_scalar(w, self.g)?;
        let recovery = tape.sub(v, gw)?;
        let dw = tape.mul_scalar(recovery, self.b)?;
        Ok((dv, dw))
    }
}

impl TapeField for FhnTapeField {
    fn dim(&self) -> usize {
        2 * self.units
    }

    fn eval_tape(&self, tape: &mut Tape, state: Var) -> Result<Var, TapeError> {
        let v = tape.slice_rows(state, 0, self.units)?;
        let w = tape.slice_rows(state, self.units, self.units)?;
        let (dv, dw) = self.split_field(tape, v, w)?;
        tape.concat_rows(dv, dw)
    }
}

/// `dx/dt = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: Tensor,
}

impl LinearField {
    /// `dx/dt = -rate * x` on `dim` coordinates.
    pub fn decay(dim: usize, rate: f64) -> Self {
        Self {
            matrix: Tensor::from_fn(dim, dim, |i, j| if i == j { -rate } else { 0.0 }),
        }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..state.len())
                .map(|j| self.matrix.get(i, j) * state[j])
                .sum();
        }
    }
}

impl TapeField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn eval_tape(&self, tape: &mut Tape, state: Var) -> Result<Var, TapeError> {
        let a = tape.constant(self.matrix.clone())?;
        let zero = tape.constant(Tensor::zeros(self.matrix.rows(), 1))?;
        tape.affine(a, zero, state)
    }
}

/// `dx/dt = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _state: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

impl TapeField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_tape(&self, tape: &mut Tape, state: Var) -> Result<Var, TapeError> {
        let (rows, cols) = tape.shape(state);
        tape.constant(Tensor::zeros(rows, cols))
    }
}

/// `dx/dt = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, _state: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

/// Uniform time grid `t_start, t_start + dt, ..., t_end` with an integral
/// number of Euler steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridBounds", into = "GridBounds")]
pub struct IntegrationGrid {
    t_start: f64,
    t_end: f64,
    dt: f64,
    steps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridBounds {
    t_start: f64,
    t_end: f64,
    dt: f64,
}

impl TryFrom<GridBounds> for IntegrationGrid {
    type Error = DynamicsError;

    fn try_from(b: GridBounds) -> Result<Self, Self::Error> {
        Self::new(b.t_start, b.t_end, b.dt)
    }
}

impl From<IntegrationGrid> for GridBounds {
    fn from(g: IntegrationGrid) -> Self {
        Self {
            t_start: g.t_start,
            t_end: g.t_end,
            dt: g.dt,
        }
    }
}

const STEP_COUNT_TOL: f64 = 1e-9;

impl IntegrationGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self, DynamicsError> {
        if !(t_start >= 0.0) || !t_start.is_finite() {
            return Err(DynamicsError::InvalidGrid(format!(
                "t_start must be >= 0, got {t_start}"
            )));
        }
        if !(t_end > t_start) || !t_end.is_finite() {
            return Err(DynamicsError::InvalidGrid(format!(
                "t_end must exceed t_start, got [{t_start}, {t_end}]"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DynamicsError::InvalidGrid(format!(
                "dt must be > 0, got {dt}"
            )));
        }
        let ratio = (t_end - t_start) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > STEP_COUNT_TOL * steps.max(1.0) {
            return Err(DynamicsError::InvalidGrid(format!(
                "(t_end - t_start) / dt = {ratio} is not a positive integer"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            dt,
            steps: steps as usize,
        })
    }

    /// Grid starting at zero.
    pub fn from_end(t_end: f64, dt: f64) -> Result<Self, DynamicsError> {
        Self::new(0.0, t_end, dt)
    }

    /// `steps` Euler updates of size zero: every step is the identity.
    /// Only useful to check that the Euler block degenerates correctly.
    pub fn zero_elapsed(steps: usize) -> Self {
        Self {
            t_start: 0.0,
            t_end: 0.0,
            dt: 0.0,
            steps,
        }
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }
}

/// `state + dt * f(state)`.
pub fn euler_step<F: VectorField + ?Sized>(
    state: &[f64],
    field: &F,
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    if state.len() != field.dim() {
        return Err(DynamicsError::DimMismatch {
            expected: field.dim(),
            got: state.len(),
        });
    }
    let mut deriv = vec![0.0; state.len()];
    field.eval(state, &mut deriv);
    Ok(state.iter().zip(&deriv).map(|(s, d)| s + dt * d).collect())
}

/// One Euler layer on the tape; `state` is the residual branch.
pub fn euler_step_tape<F: TapeField + ?Sized>(
    tape: &mut Tape,
    state: Var,
    field: &F,
    dt: f64,
) -> Result<Var, TapeError> {
    let deriv = field.eval_tape(tape, state)?;
    let increment = tape.scale(deriv, dt);
    tape.add(state, increment)
}

/// Stack of `grid.steps()` Euler layers. Aborts with the step index if the
/// state stops being finite. When `trajectory` is given, every intermediate
/// state node (including the initial one) is pushed onto it.
pub fn euler_block_tape<F: TapeField + ?Sized>(
    tape: &mut Tape,
    state0: Var,
    field: &F,
    grid: &IntegrationGrid,
    mut trajectory: Option<&mut Vec<Var>>,
) -> Result<Var, DynamicsError> {
    let (rows, _) = tape.shape(state0);
    if rows != field.dim() {
        return Err(DynamicsError::DimMismatch {
            expected: field.dim(),
            got: rows,
        });
    }
    if let Some(t) = trajectory.as_deref_mut() {
        t.push(state0);
    }
    let mut state = state0;
    for step in 1..=grid.steps() {
        state = euler_step_tape(tape, state, field, grid.dt())?;
        if !tape.value(state).all_finite() {
            return Err(DynamicsError::NonFinite { step });
        }
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(state);
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds at least the initial state")
    }

    /// CSV with header `t,<names...>`, one row per time point.
    pub fn write_csv<W: Write>(&self, out: W, names: &[String]) -> std::io::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().cloned());
        writer.write_record(&header)?;
        for (t, state) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(state.iter().map(f64::to_string));
            writer.write_record(&row)?;
        }
        writer.flush()
    }
}

/// Column names `v_1..v_K,w_1..w_K`.
pub fn fhn_state_names(units: usize) -> Vec<String> {
    (1..=units)
        .map(|k| format!("v_{k}"))
        .chain((1..=units).map(|k| format!("w_{k}")))
        .collect()
}

/// Explicit Euler over `grid`, keeping every state.
pub fn integrate<F: VectorField + ?Sized>(
    state0: &[f64],
    field: &F,
    grid: &IntegrationGrid,
) -> Result<Trajectory, DynamicsError> {
    let mut times = Vec::with_capacity(grid.steps() + 1);
    let mut states = Vec::with_capacity(grid.steps() + 1);
    times.push(grid.time(0));
    states.push(state0.to_vec());
    let mut state = state0.to_vec();
    for step in 1..=grid.steps() {
        state = euler_step(&state, field, grid.dt())?;
        if state.iter().any(|s| !s.is_finite()) {
            return Err(DynamicsError::NonFinite { step });
        }
        times.push(grid.time(step));
        states.push(state.clone());
    }
    Ok(Trajectory { times, states })
}

/// Classical fourth-order Runge–Kutta from `t = 0` to `t_end`; the last
/// step is shortened when `t_end` is not a multiple of `dt`. Intended as a
/// high-accuracy reference for checking the Euler path.
pub fn reference_solve<F: VectorField + ?Sized>(
    state0: &[f64],
    field: &F,
    t_end: f64,
    dt: f64,
) -> Result<Vec<f64>, DynamicsError> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(DynamicsError::InvalidGrid(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    if state0.len() != field.dim() {
        return Err(DynamicsError::DimMismatch {
            expected: field.dim(),
            got: state0.len(),
        });
    }
    let n = state0.len();
    let mut y = state0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let full_steps = (t_end / dt).floor() as usize;
    let remainder = t_end - full_steps as f64 * dt;
    let mut sizes = vec![dt; full_steps];
    if remainder > 1e-12 * dt {
        sizes.push(remainder);
    }
    for (step, &h) in sizes.iter().enumerate() {
        field.eval(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        field.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        field.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        field.eval(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { step: step + 1 });
        }
    }
    Ok(y)
}

/// Nullcline samples for phase-plane plots: rows `(v, w_on_v_nullcline,
/// w_on_w_nullcline)`; the last column is `None` when `g = 0`.
pub fn nullcline_samples(
    params: &FhnParams,
    v_min: f64,
    v_max: f64,
    count: usize,
) -> Vec<(f64, f64, Option<f64>)> {
    let count = count.max(2);
    (0..count)
        .map(|k| {
            let v = v_min + (v_max - v_min) * k as f64 / (count - 1) as f64;
            (v, params.v_nullcline(v), params.w_nullcline(v))
        })
        .collect()
}
