use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::data::{Dataset, SplitData};
use crate::model::{predict, Regressor};

use super::{train, RunRecord, TrainError, EVAL_CHUNK};

/// Value lists per dotted config key, e.g. `"model.grid.dt": [1, 2, 5]`.
/// Cells are the cross product, enumerated with the last key varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    axes: Vec<(String, Vec<Value>)>,
}

impl SearchSpace {
    pub fn new(axes: Vec<(String, Vec<Value>)>) -> Result<Self, TrainError> {
        if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
            return Err(TrainError::EmptySpace);
        }
        for (key, _) in &axes {
            if key.starts_with("data.") {
                return Err(TrainError::Space(format!(
                    "{key}: data settings are shared by all cells"
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let doc: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| TrainError::Space(e.to_string()))?;
        let mut axes = Vec::with_capacity(doc.len());
        for (key, values) in doc {
            match values {
                Value::Array(list) => axes.push((key, list)),
                other => axes.push((key, vec![other])),
            }
        }
        Self::new(axes)
    }

    pub fn keys(&self) -> Vec<&str> {
        self.axes.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Key/value assignment of cell `index`.
    pub fn cell(&self, index: usize) -> Vec<(String, Value)> {
        let mut rest = index;
        let mut out = vec![(String::new(), Value::Null); self.axes.len()];
        for (slot, (key, values)) in out.iter_mut().zip(&self.axes).rev() {
            *slot = (key.clone(), values[rest % values.len()].clone());
            rest /= values.len();
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    /// Cells trained concurrently; results do not depend on this.
    pub workers: usize,
    /// Stop after this many cells (in enumeration order).
    pub max_cells: Option<usize>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            max_cells: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum CellStatus {
    Trained(Box<RunRecord>),
    /// The assignment does not form a valid configuration (for instance a
    /// non-integral number of Euler steps).
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub index: usize,
    pub assignment: Vec<(String, Value)>,
    pub config: Option<ExperimentConfig>,
    pub status: CellStatus,
}

impl CellOutcome {
    pub fn record(&self) -> Option<&RunRecord> {
        match &self.status {
            CellStatus::Trained(r) => Some(r),
            _ => None,
        }
    }

    fn rank_key(&self) -> (u8, f64) {
        match &self.status {
            CellStatus::Trained(r) if !r.diverged => (0, r.best_val_mse),
            CellStatus::Trained(_) => (1, f64::INFINITY),
            CellStatus::Failed(_) => (2, f64::INFINITY),
            CellStatus::Skipped(_) => (3, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub keys: Vec<String>,
    /// Best first: converged runs by validation MSE, then diverged, failed
    /// and skipped cells; ties keep enumeration order.
    pub ranked: Vec<CellOutcome>,
}

impl GridReport {
    pub fn best(&self) -> Option<&CellOutcome> {
        self.ranked.first().filter(|c| c.record().is_some())
    }

    /// 1-based rank of the cell whose assignment equals `target`.
    pub fn rank_of(&self, target: &[(String, Value)]) -> Option<usize> {
        self.ranked
            .iter()
            .position(|c| c.assignment == target)
            .map(|p| p + 1)
    }

    /// One row per cell in rank order. Wall-clock time is left out so that
    /// reruns produce identical files; see [`GridReport::write_timings`].
    pub fn write_results<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["rank".to_string(), "cell".to_string()];
        header.extend(self.keys.iter().cloned());
        header.extend(
            [
                "status",
                "best_val_mse",
                "test_mse",
                "test_rmse",
                "test_rmse_raw",
                "epochs",
                "best_epoch",
                "diverged",
                "note",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(csv_err)?;
        for (rank, cell) in self.ranked.iter().enumerate() {
            let mut row = vec![(rank + 1).to_string(), cell.index.to_string()];
            row.extend(cell.assignment.iter().map(|(_, v)| value_text(v)));
            match &cell.status {
                CellStatus::Trained(r) => row.extend([
                    "trained".into(),
                    r.best_val_mse.to_string(),
                    r.test.mse.to_string(),
                    r.test.rmse.to_string(),
                    r.test.rmse_raw.to_string(),
                    r.epochs().to_string(),
                    r.best_epoch.to_string(),
                    r.diverged.to_string(),
                    r.divergence.clone().unwrap_or_default(),
                ]),
                CellStatus::Skipped(why) | CellStatus::Failed(why) => {
                    let status = if matches!(cell.status, CellStatus::Skipped(_)) {
                        "skipped"
                    } else {
                        "failed"
                    };
                    row.push(status.into());
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    row.push(why.clone());
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `cell,seconds` for every trained cell, in enumeration order.
    pub fn write_timings<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell,seconds")?;
        let mut cells: Vec<_> = self
            .ranked
            .iter()
            .filter_map(|c| c.record().map(|r| (c.index, r.seconds)))
            .collect();
        cells.sort_by_key(|c| c.0);
        for (i, s) in cells {
            writeln!(out, "{i},{s}")?;
        }
        Ok(())
    }

    /// `results.csv`, `timings.csv`, `best_config.json` and one loss curve
    /// per trained cell under `curves/`.
    pub fn persist(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir.join("curves"))?;
        self.write_results(fs::File::create(dir.join("results.csv"))?)?;
        self.write_timings(fs::File::create(dir.join("timings.csv"))?)?;
        for cell in &self.ranked {
            if let Some(r) = cell.record() {
                let path = dir
                    .join("curves")
                    .join(format!("cell_{:04}.csv", cell.index));
                r.write_loss_curve(fs::File::create(path)?)?;
            }
        }
        if let Some(best) = self.best() {
            let text = crate::json::to_pretty(&best.config).expect("config serializes");
            fs::write(dir.join("best_config.json"), text)?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e))
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn run_cell(
    base: &ExperimentConfig,
    space: &SearchSpace,
    data: &Dataset,
    index: usize,
) -> CellOutcome {
    let assignment = space.cell(index);
    let config = match base.with_overrides(&assignment) {
        Ok(c) => c,
        Err(e) => {
            info!("cell {index} skipped: {e}");
            return CellOutcome {
                index,
                assignment,
                config: None,
                status: CellStatus::Skipped(e.to_string()),
            };
        }
    };
    let status = match train(&config.model, data, &config.train) {
        Ok(out) => CellStatus::Trained(Box::new(out.record)),
        Err(e) => {
            warn!("cell {index} failed: {e}");
            CellStatus::Failed(e.to_string())
        }
    };
    CellOutcome {
        index,
        assignment,
        config: Some(config),
        status,
    }
}

/// Train every cell of `space` on top of `base` with the same seed. Cells
/// that cannot be configured are skipped and failures are recorded; neither
/// aborts the sweep.
pub fn grid_search(
    base: &ExperimentConfig,
    space: &SearchSpace,
    data: &Dataset,
    options: &GridOptions,
) -> Result<GridReport, TrainError> {
    let total = options
        .max_cells
        .map_or(space.len(), |m| m.min(space.len()));
    if total == 0 {
        return Err(TrainError::EmptySpace);
    }
    let workers = options.workers.clamp(1, total);
    let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; total]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let outcome = run_cell(base, space, data, i);
                slots.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    let mut ranked: Vec<CellOutcome> = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    ranked.sort_by(|a, b| {
        let (ka, kb) = (a.rank_key(), b.rank_key());
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.index.cmp(&b.index))
    });
    Ok(GridReport {
        keys: space.keys().iter().map(|s| s.to_string()).collect(),
        ranked,
    })
}

/// Outcome of one forward pass with freshly initialized weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Stable,
    /// The Euler block left the finite range.
    Diverged,
    /// `t_end / dt` is not a positive integer.
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceCell {
    pub dt: f64,
    pub t_end: f64,
    pub probe: Probe,
}

/// For each `(dt, t_end)` pair, run `base`'s model with its initial weights
/// (seed `base.train.seed`) over `inputs` and report whether it blows up.
pub fn divergence_map(
    base: &ExperimentConfig,
    dts: &[f64],
    t_ends: &[f64],
    inputs: &SplitData,
) -> Result<Vec<DivergenceCell>, TrainError> {
    let mut cells = Vec::with_capacity(dts.len() * t_ends.len());
    for &dt in dts {
        for &t_end in t_ends {
            let overrides = [
                ("model.grid.dt".to_string(), Value::from(dt)),
                ("model.grid.t_end".to_string(), Value::from(t_end)),
            ];
            let probe = match base.with_overrides(&overrides) {
                Err(_) => Probe::Invalid,
                Ok(config) => {
                    let params = config.model.init_params(config.train.seed);
                    match predict(&config.model, &params, &inputs.x, EVAL_CHUNK) {
                        Ok(y) if y.all_finite() => Probe::Stable,
                        Ok(_) => Probe::Diverged,
                        Err(e) if e.is_divergence() => Probe::Diverged,
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            cells.push(DivergenceCell { dt, t_end, probe });
        }
    }
    Ok(cells)
}
