use std::fs::File;
use std::io::Write;

use dynpmnn::dynamics::{
    fhn_state_names, integrate, nullcline_samples, FhnParams, FitzHughNagumo, IntegrationGrid,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, Failure};
use crate::settings::{echo, prepare_out, resolve};
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullclineRange {
    pub v_min: f64,
    pub v_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub fhn: FhnParams,
    /// Each entry is `[v_1..v_K, w_1..w_K]`.
    pub initial_states: Vec<Vec<f64>>,
    pub grid: IntegrationGrid,
    pub nullclines: NullclineRange,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            fhn: FhnParams::default(),
            initial_states: vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.4, 0.0]],
            grid: IntegrationGrid::from_end(500.0, 0.05).expect("static grid"),
            nullclines: NullclineRange {
                v_min: -0.5,
                v_max: 1.2,
                samples: 171,
            },
        }
    }
}

pub fn run(common: &Common) -> Result<(), Failure> {
    let config: SimulateConfig = resolve(
        &SimulateConfig::default(),
        common.config.as_deref(),
        &common.sets,
        &[],
    )?;
    config.fhn.validate().config("fhn")?;
    let out = prepare_out(&common.out)?;
    echo(&out, &config)?;

    for (k, state) in config.initial_states.iter().enumerate() {
        if state.is_empty() || state.len() % 2 != 0 {
            return Err(Failure::Config(anyhow::anyhow!(
                "initial state {} has {} entries; expected [v_1..v_K, w_1..w_K]",
                k + 1,
                state.len()
            )));
        }
        let units = state.len() / 2;
        let field = FitzHughNagumo::new(units, config.fhn);
        let traj =
            integrate(state, &field, &config.grid).config(&format!("initial state {}", k + 1))?;
        let path = out.join(format!("trajectory_{}.csv", k + 1));
        let file = File::create(&path).internal("creating trajectory file")?;
        traj.write_csv(file, &fhn_state_names(units))
            .internal("writing trajectory")?;
        let peak = traj
            .states
            .iter()
            .map(|s| s[0])
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}: start {:?}, max v_1 {peak}, final {:?}",
            path.display(),
            state,
            traj.final_state()
        );
    }

    let r = &config.nullclines;
    let samples = nullcline_samples(&config.fhn, r.v_min, r.v_max, r.samples);
    let mut file = File::create(out.join("nullclines.csv")).internal("creating nullcline file")?;
    let with_w = config.fhn.g > 0.0;
    let header = if with_w {
        "v,w_v_nullcline,w_w_nullcline"
    } else {
        "v,w_v_nullcline"
    };
    writeln!(file, "{header}").internal("writing nullclines")?;
    for (v, wv, ww) in samples {
        match ww.filter(|_| with_w) {
            Some(ww) => writeln!(file, "{v},{wv},{ww}"),
            None => writeln!(file, "{v},{wv}"),
        }
        .internal("writing nullclines")?;
    }
    if !with_w {
        info!("g = 0: the w-nullcline is the line v = 0, not a graph over v; skipped");
    }
    Ok(())
}
