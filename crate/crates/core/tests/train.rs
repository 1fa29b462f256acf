use gatedtab::autodiff::{Graph, Tensor};
mod common;

use common::separable_table;
use gatedtab::data::{synthetic_table, Dataset, PreparedData, SyntheticSpec};
use gatedtab::eval::auroc;
use gatedtab::kv::KvDocument;
use gatedtab::model::{Batch, InputSpec, Model, ModelConfig};
use gatedtab::train::{
    lr_at_epoch, train, train_with_validator, Adam, EarlyStopping, EpochRecord, StopReason,
    TrainConfig, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model(input: &InputSpec, seed: u64) -> Model {
    let config = ModelConfig {
        transformer_depth: 1,
        heads: 2,
        embed_dim: 8,
        gmlp_depth: 1,
        gmlp_dim: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    Model::build(&config, input, seed).unwrap()
}

fn prepared(rows: usize, noise: f64) -> PreparedData {
    let spec = SyntheticSpec {
        n_rows: rows,
        noise,
        ..SyntheticSpec::default()
    };
    PreparedData::new(synthetic_table(&spec), 0).unwrap()
}

fn eval_loss(model: &Model, data: &Dataset) -> f64 {
    model.loss_and_grads(&Batch::of(data), &data.labels, false, 0).unwrap().0
}

#[test]
fn bce_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let loss = g.bce_with_logits(z, &[1.0]).unwrap();
    assert!((g.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

    let z = g.constant(Tensor::scalar(40.0));
    let loss = g.bce_with_logits(z, &[1.0]).unwrap();
    let v = g.value(loss).data()[0];
    assert!(v.is_finite() && (0.0..1e-15).contains(&v));

    let z = g.constant(Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap());
    assert!(g.bce_with_logits(z, &[1.0, 0.0]).is_err());
}

#[test]
fn bce_matches_the_naive_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
        let naive = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n as f64;
        let mut g = Graph::new();
        let zv = g.constant(Tensor::new(vec![n], z).unwrap());
        let loss = g.bce_with_logits(zv, &y).unwrap();
        assert!((g.value(loss).data()[0] - naive).abs() < 1e-10);
    }
}

#[test]
fn learning_rate_schedule_examples() {
    let config = TrainConfig { lr: 0.05, gamma: 0.1, step_size: 10, ..TrainConfig::default() };
    assert_eq!(lr_at_epoch(&config, 0), 0.05);
    assert_eq!(lr_at_epoch(&config, 9), 0.05);
    assert!((lr_at_epoch(&config, 10) - 0.005).abs() < 1e-15);
    assert!((lr_at_epoch(&config, 25) - 0.0005).abs() < 1e-15);
    let flat = TrainConfig { gamma: 1.0, ..config };
    assert!((0..1000).all(|e| lr_at_epoch(&flat, e) == 0.05));
}

#[test]
fn adam_zero_gradient_leaves_parameters_unchanged() {
    let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let before = params.clone();
    let mut adam = Adam::new(&params);
    adam.step(&mut params, &[Tensor::zeros(&[3])], 0.1, &["w".into()]).unwrap();
    assert_eq!(params, before);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let g: f64 = rng.gen_range(0.01..10.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lr = rng.gen_range(1e-4..1e-1);
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &[Tensor::scalar(g)], lr, &["w".into()]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g|+ε).
        let expected = -lr * g / (g.abs() + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
        assert!((params[0].data()[0].abs() - lr).abs() < lr * 1e-6);
    }
}

#[test]
fn adam_rejects_non_finite_gradients_before_updating() {
    let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
    let before = params.clone();
    let mut adam = Adam::new(&params);
    let grads = [Tensor::scalar(0.5), Tensor::scalar(f64::INFINITY)];
    let err = adam.step(&mut params, &grads, 0.1, &["a".into(), "b".into()]).unwrap_err();
    match err {
        TrainError::NonFiniteGradient { param, step } => assert_eq!((param.as_str(), step), ("b", 1)),
        other => panic!("{other}"),
    }
    assert_eq!(params, before);
}

#[test]
fn training_config_validation_and_kv_round_trip() {
    let bad = [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { gamma: 0.0, ..TrainConfig::default() },
        TrainConfig { gamma: 1.5, ..TrainConfig::default() },
        TrainConfig { step_size: 0, ..TrainConfig::default() },
        TrainConfig { patience: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    let config = TrainConfig { lr: 0.0005, gamma: 0.2, step_size: 15, seed: 9, ..TrainConfig::default() };
    let mut back = TrainConfig::default();
    back.apply_kv(&KvDocument::parse(&format!("[train]\n{}", config.to_kv())).unwrap(), "train").unwrap();
    assert_eq!(back, config);
}

#[test]
fn early_stopping_requires_strict_improvement() {
    let mut s = EarlyStopping::new(2);
    assert!(s.observe(1, 0.7));
    assert!(!s.observe(2, 0.7));
    assert!(!s.should_stop());
    assert!(!s.observe(3, 0.6));
    assert!(s.should_stop());
    assert_eq!((s.best(), s.best_epoch()), (0.7, 1));
}

#[test]
fn decreasing_validation_stops_after_patience_and_restores_epoch_one() {
    let data = prepared(200, 0.5);
    let train_set = data.train();
    let mut model = tiny_model(&InputSpec::of(&data.schema), 0);
    let config = TrainConfig { patience: 3, max_epochs: 50, batch_size: 32, ..TrainConfig::default() };
    let mut snapshots = Vec::new();
    let report = train_with_validator(&mut model, &train_set, &config, |m, epoch| {
        snapshots.push(m.params.tensors().to_vec());
        Ok(0.9 - 0.1 * epoch as f64)
    })
    .unwrap();
    assert_eq!(report.epochs.len(), 4);
    assert_eq!(report.best_epoch, 1);
    assert_eq!(report.stop_reason, StopReason::EarlyStop);
    assert_eq!(report.best_val_auroc, 0.8);
    assert_eq!(model.params.tensors(), &snapshots[0][..]);
}

#[test]
fn recorded_learning_rates_follow_the_schedule() {
    let data = prepared(120, 0.5);
    let train_set = data.train();
    let mut model = tiny_model(&InputSpec::of(&data.schema), 0);
    let config = TrainConfig { lr: 0.01, gamma: 0.5, step_size: 2, patience: 100, max_epochs: 7, batch_size: 64, ..TrainConfig::default() };
    let report = train_with_validator(&mut model, &train_set, &config, |_, e| Ok(e as f64)).unwrap();
    assert_eq!(report.stop_reason, StopReason::MaxEpochs);
    assert_eq!(report.epochs.len(), 7);
    for r in &report.epochs {
        assert_eq!(r.lr, lr_at_epoch(&config, r.epoch - 1));
    }
    let lines: Vec<EpochRecord> = report
        .metrics_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, report.epochs);
}

#[test]
fn one_small_step_decreases_the_batch_loss() {
    let data = prepared(200, 0.5);
    let input = InputSpec::of(&data.schema);
    let train_set = data.train();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let mut model = tiny_model(&input, seed);
        let idx: Vec<usize> = (0..16).map(|_| rng.gen_range(0..train_set.n_rows())).collect();
        let batch = train_set.subset(&idx);
        let (before, grads) = model.loss_and_grads(&Batch::of(&batch), &batch.labels, false, 0).unwrap();
        let names = model.params.names().to_vec();
        let mut adam = Adam::new(model.params.tensors());
        adam.step(model.params.tensors_mut(), &grads, 1e-5, &names).unwrap();
        let after = eval_loss(&model, &batch);
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn training_is_a_pure_function_of_its_inputs() {
    let data = prepared(200, 0.5);
    let input = InputSpec::of(&data.schema);
    let config = TrainConfig { max_epochs: 4, batch_size: 32, seed: 3, ..TrainConfig::default() };
    let run = || {
        let mut model = Model::build(&ModelConfig { dropout: 0.2, ..ModelConfig::default() }, &input, 1).unwrap();
        let report = train(&mut model, &data.train(), &data.validation(), &config).unwrap();
        (report, model.params.tensors().to_vec())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn restored_model_scores_the_best_recorded_validation_auroc() {
    let data = prepared(300, 1.0);
    let validation = data.validation();
    let mut model = tiny_model(&InputSpec::of(&data.schema), 2);
    let config = TrainConfig { max_epochs: 12, patience: 4, batch_size: 32, lr: 0.02, ..TrainConfig::default() };
    let report = train(&mut model, &data.train(), &validation, &config).unwrap();
    let best = report.epochs.iter().map(|r| r.val_auroc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_val_auroc, best);
    assert_eq!(report.epochs[report.best_epoch - 1].val_auroc, best);
    let scores = model.logits(&Batch::of(&validation)).unwrap();
    assert_eq!(auroc(&scores, &validation.labels).unwrap(), best);
}

#[test]
fn small_separable_set_is_fit_almost_perfectly() {
    let data = PreparedData::new(separable_table(200, 5), 0).unwrap();
    let all = data.dataset.clone();
    let mut model = tiny_model(&InputSpec::of(&data.schema), 0);
    let config = TrainConfig { lr: 0.01, gamma: 1.0, patience: 200, max_epochs: 200, batch_size: 32, ..TrainConfig::default() };
    let mut done = false;
    let report = train_with_validator(&mut model, &all, &config, |m, _| {
        if done {
            // Converged: keep reporting a stale value so patience ends the run.
            return Ok(f64::NEG_INFINITY);
        }
        let loss = eval_loss(m, &all);
        done = loss < 0.01;
        Ok(-loss)
    })
    .unwrap();
    assert!(report.epochs.len() <= 200);
    let loss = eval_loss(&model, &all);
    let probs = model.predict_proba(&Batch::of(&all)).unwrap();
    let train_auroc = auroc(&probs, &all.labels).unwrap();
    assert!(loss < 0.05, "loss {loss}");
    assert!(train_auroc > 0.999, "auroc {train_auroc}");
}

#[test]
fn non_finite_parameters_end_the_run_as_diverged() {
    let data = prepared(200, 0.5);
    let mut model = tiny_model(&InputSpec::of(&data.schema), 0);
    let last = model.params.len() - 1;
    model.params.tensors_mut()[last].data_mut()[0] = f64::NAN;
    let config = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
    let report = train(&mut model, &data.train(), &data.validation(), &config).unwrap();
    assert!(report.diverged());
    assert_eq!(report.best_epoch, 0);
    assert!(report.best_val_auroc.is_nan());
    assert!(report.diagnostic.unwrap().contains("epoch 1"));
}
