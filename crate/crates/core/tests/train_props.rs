use dynpmnn::config::ExperimentConfig;
use dynpmnn::data::{synthetic_dataset, Dataset, SyntheticKind, DEFAULT_FRACTIONS};
use dynpmnn::dynamics::IntegrationGrid;
use dynpmnn::model::{MlpConfig, ModelSpec, PmnnConfig};
use dynpmnn::train::{
    adam_step, grid_search, train, CellStatus, EarlyStopping, GridOptions, Metrics, OptimizerState,
    SearchSpace, TrainConfig, TrainError, Verdict,
};
use dynpmnn::Tensor;
use proptest::prelude::*;
use serde_json::json;

fn linear_data(rows: usize, seed: u64) -> Dataset {
    let syn = synthetic_dataset(SyntheticKind::Linear, rows, 3, 0.0, seed);
    Dataset::prepare(&syn.table, DEFAULT_FRACTIONS, seed).unwrap()
}

fn small_pmnn(n: usize) -> ModelSpec {
    ModelSpec::Pmnn(PmnnConfig {
        grid: IntegrationGrid::from_end(10.0, 1.0).unwrap(),
        ..PmnnConfig::reference(n)
    })
}

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: 16,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn stopping_example_halts_at_epoch_eleven() {
    // 1.0, then ten epochs that never beat 1.0 - 0.05
    let mut seq = vec![1.0, 0.96, 0.95];
    seq.extend((0..20).map(|k| 0.955 + 0.001 * (k % 3) as f64));
    let mut stopper = EarlyStopping::new(10, 0.05);
    let mut stopped = None;
    for (epoch, &loss) in seq.iter().enumerate() {
        let verdict = stopper.observe(loss);
        if epoch == 0 {
            assert_eq!(verdict, Verdict::Improved);
        } else if epoch < 10 {
            assert_eq!(verdict, Verdict::Continue);
            assert_eq!(stopper.wait(), epoch);
        }
        if verdict == Verdict::Stop {
            stopped = Some(epoch + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(11));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_with_zero_lr_is_the_identity(
        values in prop::collection::vec(-1e3f64..1e3, 1..12),
        grads in prop::collection::vec(-1e6f64..1e6, 12),
        steps in 1usize..5,
    ) {
        let n = values.len();
        let mut params = vec![Tensor::vector(values.clone())];
        let g = vec![Tensor::vector(grads[..n].to_vec())];
        let mut state = OptimizerState::new(0.0, &params);
        for _ in 0..steps {
            adam_step(&mut params, &g, &mut state).unwrap();
        }
        prop_assert_eq!(params[0].as_slice(), values.as_slice());
    }

    #[test]
    fn stopper_never_waits_past_patience(
        losses in prop::collection::vec(0.0f64..2.0, 1..60),
        patience in 1usize..8,
        min_delta in 0.0f64..0.2,
    ) {
        let mut stopper = EarlyStopping::new(patience, min_delta);
        for (i, &l) in losses.iter().enumerate() {
            match stopper.observe(l) {
                Verdict::Stop => {
                    prop_assert_eq!(stopper.wait(), patience);
                    prop_assert!(i + 1 > patience);
                    break;
                }
                _ => prop_assert!(stopper.wait() < patience),
            }
        }
    }
}

#[test]
fn best_epoch_is_the_minimum_of_the_validation_curve() {
    let data = linear_data(300, 1);
    for (seed, min_delta) in [(0, 0.05), (1, 0.0), (2, 0.01)] {
        let cfg = TrainConfig {
            seed,
            min_delta,
            patience: 3,
            ..quick(40)
        };
        let rec = train(&small_pmnn(3), &data, &cfg).unwrap().record;
        assert!(!rec.diverged);
        assert!(rec.best_epoch >= 1 && rec.best_epoch <= rec.stopped_epoch);
        assert_eq!(rec.stopped_epoch, rec.val_loss.len());
        let min = rec.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rec.best_val_mse, min);
        assert_eq!(rec.val_loss[rec.best_epoch - 1], min);
    }
}

#[test]
fn mlp_fits_a_noiseless_linear_target() {
    let data = linear_data(400, 2);
    let model = ModelSpec::Mlp(MlpConfig {
        input_dim: 3,
        hidden_dim: 8,
        output_dim: 1,
        use_layer_norm: false,
    });
    let cfg = TrainConfig {
        max_epochs: 300,
        patience: 300,
        min_delta: 0.0,
        batch_size: 32,
        lr: 1e-2,
        ..Default::default()
    };
    let out = train(&model, &data, &cfg).unwrap();
    assert!(
        out.record.best_val_mse < 1e-3,
        "val mse {}",
        out.record.best_val_mse
    );
    assert!(
        out.record.test.mse < 1e-3,
        "test mse {}",
        out.record.test.mse
    );
}

#[test]
fn zero_epochs_reports_the_initial_model() {
    let data = linear_data(100, 3);
    let model = small_pmnn(3);
    let out = train(&model, &data, &quick(0)).unwrap();
    assert!(out.record.train_loss.is_empty() && out.record.val_loss.is_empty());
    assert_eq!(out.record.stopped_epoch, 0);
    assert_eq!(
        out.params,
        dynpmnn::model::Regressor::init_params(&model, 0)
    );
    assert!(out.record.test.rmse.is_finite());
}

#[test]
fn full_batch_loss_does_not_increase_with_a_small_step() {
    let data = linear_data(200, 4);
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 10,
        min_delta: 0.0,
        batch_size: data.train.len(),
        lr: 1e-4,
        shuffle: false,
        seed: 5,
    };
    let rec = train(&small_pmnn(3), &data, &cfg).unwrap().record;
    assert_eq!(rec.train_loss.len(), 5);
    for w in rec.train_loss.windows(2) {
        assert!(w[1] <= w[0], "{:?}", rec.train_loss);
    }
}

#[test]
fn training_is_reproducible() {
    let data = linear_data(200, 6);
    let a = train(&small_pmnn(3), &data, &quick(8)).unwrap();
    let b = train(&small_pmnn(3), &data, &quick(8)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.record.train_loss, b.record.train_loss);
    assert_eq!(a.record.val_loss, b.record.val_loss);
    assert_eq!(a.record.test, b.record.test);
}

#[test]
fn metric_identities() {
    let data = linear_data(200, 7);
    let target = &data.test.y;
    let perfect = Metrics::from_predictions(target, target, Some(&data.standardizer));
    assert_eq!(
        (perfect.mse, perfect.rmse, perfect.rmse_raw),
        (0.0, 0.0, 0.0)
    );

    let n = target.cols() as f64;
    let mean = target.as_slice().iter().sum::<f64>() / n;
    let var = target
        .as_slice()
        .iter()
        .map(|y| (y - mean).powi(2))
        .sum::<f64>()
        / n;
    let constant = Tensor::filled(1, target.cols(), mean);
    let m = Metrics::from_predictions(&constant, target, None);
    assert!((m.rmse - var.sqrt()).abs() < 1e-12);
    assert!((m.rmse * m.rmse - m.mse).abs() < 1e-12);
    let raw = Metrics::from_predictions(&constant, target, Some(&data.standardizer));
    assert!((raw.rmse_raw - m.rmse * data.standardizer.target_std).abs() < 1e-9);
}

fn grid_base() -> ExperimentConfig {
    let mut base = ExperimentConfig::for_model("pmnn").unwrap();
    base.model = small_pmnn(3);
    base.train = quick(4);
    base
}

#[test]
fn one_cell_grid_matches_a_single_run() {
    let data = linear_data(150, 8);
    let base = grid_base();
    let space = SearchSpace::from_json(r#"{"train.lr": [0.01]}"#).unwrap();
    let report = grid_search(&base, &space, &data, &GridOptions::default()).unwrap();
    let direct = train(&base.model, &data, &base.train).unwrap().record;
    let cell = report.best().unwrap().record().unwrap();
    assert_eq!(cell.val_loss, direct.val_loss);
    assert_eq!(cell.test, direct.test);
}

#[test]
fn diverged_and_invalid_cells_rank_last() {
    let data = linear_data(150, 9);
    let base = grid_base();
    let space = SearchSpace::new(vec![
        ("model.grid.dt".into(), vec![json!(500), json!(1), json!(3)]),
        ("model.grid.t_end".into(), vec![json!(10000)]),
    ])
    .unwrap();
    let report = grid_search(&base, &space, &data, &GridOptions::default()).unwrap();
    let statuses: Vec<_> = report.ranked.iter().map(|c| &c.status).collect();
    match statuses.as_slice() {
        [CellStatus::Trained(ok), CellStatus::Trained(bad), CellStatus::Skipped(_)] => {
            assert!(!ok.diverged && bad.diverged);
            assert_eq!(
                bad.model,
                ModelSpec::Pmnn(PmnnConfig {
                    grid: IntegrationGrid::from_end(10000.0, 500.0).unwrap(),
                    ..PmnnConfig::reference(3)
                })
            );
        }
        other => panic!("unexpected ranking {other:?}"),
    }
}

#[test]
fn empty_space_is_an_error() {
    assert!(matches!(
        SearchSpace::from_json("{}"),
        Err(TrainError::EmptySpace)
    ));
    assert!(matches!(
        SearchSpace::from_json(r#"{"train.lr": []}"#),
        Err(TrainError::EmptySpace)
    ));
}

#[test]
fn worker_count_does_not_change_results() {
    let data = linear_data(150, 10);
    let base = grid_base();
    let space =
        SearchSpace::from_json(r#"{"train.batch_size": [8, 32], "train.lr": [0.001, 0.01]}"#)
            .unwrap();
    let csv = |workers| {
        let report = grid_search(
            &base,
            &space,
            &data,
            &GridOptions {
                workers,
                max_cells: None,
            },
        )
        .unwrap();
        let mut out = Vec::new();
        report.write_results(&mut out).unwrap();
        String::from_utf8(out).unwrap()
    };
    let one = csv(1);
    assert_eq!(one.lines().count(), 5);
    assert_eq!(one, csv(2));
    assert_eq!(one, csv(1));
}
