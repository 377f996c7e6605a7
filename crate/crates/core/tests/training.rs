use deeposets::checkpoint::{load_checkpoint, to_checkpoint_string, CheckpointMeta};
use deeposets::model::{DeepOSetsModel, ModelConfig};
use deeposets::nn::{AdamConfig, AdamState, Parameters};
use deeposets::taskgen::TaskDistribution;
use deeposets::trainer::{optimizer_from_str, optimizer_to_string, train, TrainConfig, Trainer};
use deeposets::Error;

fn config(iterations: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::new(1, 3, &[8, 8], 12, &[8], &[8], 6),
        tasks: TaskDistribution::new(1, 6, 0.0, 2, 21),
        iterations,
        batch_size: 8,
        seed: 21,
        checkpoint_every: 0,
        log_every: 1,
        threads: 1,
        adam: AdamConfig::default(),
    }
}

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        seed: 0,
        iterations: 0,
        final_loss: None,
    }
}

#[test]
fn resumed_run_is_bitwise_identical() {
    let (straight, log) = train(config(12)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(config(5)).unwrap();
    first.run(None).unwrap();
    first.save_state(dir.path(), "half").unwrap();

    let (model, _) = load_checkpoint(&dir.path().join("half.ckpt")).unwrap();
    let adam = optimizer_from_str(&std::fs::read_to_string(dir.path().join("half.adam")).unwrap())
        .unwrap();
    let mut second = Trainer::resume(config(12), model, adam).unwrap();
    second.run(None).unwrap();

    assert_eq!(
        to_checkpoint_string(second.model(), &meta()),
        to_checkpoint_string(&straight, &meta())
    );
    assert_eq!(&log.losses[5..], &second.log().losses[..]);
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(6);
    cfg.checkpoint_every = 2;
    let mut t = Trainer::new(cfg).unwrap();
    t.run(Some(dir.path())).unwrap();
    for k in [2, 4] {
        assert!(dir.path().join(format!("checkpoint_{k:06}.ckpt")).exists());
        assert!(dir.path().join(format!("checkpoint_{k:06}.adam")).exists());
    }
    assert!(!dir.path().join("checkpoint_000006.ckpt").exists());
}

#[test]
fn losses_are_finite_and_non_negative() {
    let (_, log) = train(config(30)).unwrap();
    assert_eq!(log.losses.len(), 30);
    assert!(log.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    assert!(log.rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
    assert_eq!(log.rows[0].lr, 1e-3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic_checkpoint() {
    let cfg = config(5);
    let mut model = DeepOSetsModel::init(cfg.model.clone(), 0).unwrap();
    model.trunk_mut().layers_mut()[0].bias_mut()[0] = f64::NAN;
    let adam = AdamState::new(&model, cfg.adam);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::resume(cfg, model.clone(), adam).unwrap();
    let err = t.run(Some(dir.path())).unwrap_err();
    assert!(
        matches!(err, Error::NonFiniteLoss { iteration: 0 }),
        "{err}"
    );
    assert!(dir.path().join("diagnostic.ckpt").exists());
    // Nothing was updated.
    let untouched: Vec<Vec<f64>> = t
        .model()
        .param_slices()
        .iter()
        .map(|s| s.to_vec())
        .collect();
    let before: Vec<Vec<f64>> = model.param_slices().iter().map(|s| s.to_vec()).collect();
    assert_eq!(format!("{untouched:?}"), format!("{before:?}"));
}

#[test]
fn optimizer_file_rejects_truncation() {
    let mut t = Trainer::new(config(2)).unwrap();
    t.run(None).unwrap();
    let text = optimizer_to_string(t.optimizer());
    let cut: String = text.lines().take(11).collect::<Vec<_>>().join("\n");
    assert!(optimizer_from_str(&cut).is_err());
}

#[test]
fn short_training_reduces_loss() {
    let mut cfg = config(400);
    cfg.log_every = 0;
    let (_, log) = train(cfg).unwrap();
    assert!(log.rows.is_empty());
    let early = log.moving_average(50, 50).unwrap();
    let late = log.smoothed_loss(50).unwrap();
    assert!(late < early, "{late} !< {early}");
}
