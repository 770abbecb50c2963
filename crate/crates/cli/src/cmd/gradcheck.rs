use std::fs::File;
use std::io::Write;

use clap::Args;
use dynpmnn::dynamics::IntegrationGrid;
use dynpmnn::model::{MlpConfig, ModelSpec, NodeConfig, PmnnConfig, Regressor};
use dynpmnn::tape::finite_difference_check;
use dynpmnn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, Failure};
use crate::settings::{echo, prepare_out, resolve};
use crate::Common;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Pass iff the largest relative error is below this.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub model: ModelSpec,
    /// Random inputs per check.
    pub samples: usize,
    /// Finite-difference step.
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl GradcheckConfig {
    fn for_model(kind: &str) -> Result<Self, Failure> {
        let model = match kind {
            "pmnn" => ModelSpec::Pmnn(PmnnConfig {
                grid: IntegrationGrid::from_end(2.5, 0.5).expect("static grid"),
                ..PmnnConfig::reference(8)
            }),
            "node" => ModelSpec::Node(NodeConfig::reference(8)),
            "mlp" => ModelSpec::Mlp(MlpConfig::iso_parameter(8)),
            other => {
                return Err(Failure::Config(anyhow::anyhow!(
                    "unknown model kind {other:?}"
                )))
            }
        };
        Ok(Self {
            model,
            samples: 4,
            h: 1e-5,
            tolerance: 1e-5,
            seed: 0,
        })
    }
}

pub fn run(common: &Common, args: &GradcheckArgs) -> Result<(), Failure> {
    let defaults = GradcheckConfig::for_model(common.model.as_deref().unwrap_or("pmnn"))?;
    let mut extra = Vec::new();
    if let Some(seed) = common.seed {
        extra.push(("seed".to_string(), serde_json::Value::from(seed)));
    }
    if let Some(tol) = args.tolerance {
        extra.push(("tolerance".to_string(), serde_json::Value::from(tol)));
    }
    let config: GradcheckConfig =
        resolve(&defaults, common.config.as_deref(), &common.sets, &extra)?;
    config.model.validate().config("model")?;
    if config.samples == 0 {
        return Err(Failure::Config(anyhow::anyhow!("samples must be >= 1")));
    }
    let out = prepare_out(&common.out)?;
    echo(&out, &config)?;

    let model = &config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Start from the seeded initialization, nudged so that biases and gains
    // are not sitting at their special values.
    let mut params = model.init_params(config.seed);
    for t in params.tensors_mut() {
        for v in t.as_mut_slice() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let n = model.input_dim();
    let x = Tensor::from_fn(n, config.samples, |_, _| rng.sample(StandardNormal));
    let y = Tensor::from_fn(model.output_dim(), config.samples, |_, _| {
        rng.sample(StandardNormal)
    });

    let report = finite_difference_check(
        |tape: &mut Tape, vars| {
            let input = tape.constant(x.clone())?;
            let pred = model.forward(tape, vars, input).map_err(|e| match e {
                dynpmnn::model::ModelError::Tape(t) => t,
                other => dynpmnn::TapeError::InvalidArgument {
                    op: "forward",
                    reason: other.to_string(),
                },
            })?;
            tape.mse_loss(pred, &y)
        },
        params.tensors(),
        config.h,
    )
    .internal("gradient check")?;

    let mut table = File::create(out.join("gradcheck.csv")).internal("creating report")?;
    writeln!(table, "block,size,max_rel_error").internal("writing report")?;
    println!("{:<12} {:>6}  max rel error", "block", "size");
    for ((name, t), err) in params
        .names()
        .iter()
        .zip(params.tensors())
        .zip(&report.per_block)
    {
        println!("{name:<12} {:>6}  {err:.3e}", t.len());
        writeln!(table, "{name},{},{err}", t.len()).internal("writing report")?;
    }
    println!(
        "{} coordinates, max relative error {:.3e}, tolerance {:e}",
        report.coordinates, report.max_rel_error, config.tolerance
    );
    if report.max_rel_error < config.tolerance {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Internal(anyhow::anyhow!(
            "max relative error {} is not below {}",
            report.max_rel_error,
            config.tolerance
        )))
    }
}
