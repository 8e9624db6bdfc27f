use lcm_core::data::{generate_confused_corpus, split_dataset, ConfusionSpec, Dataset};
use lcm_core::encoders::{Checkpoint, ModelParams, Predictor};
use lcm_core::targets::{make_target, TargetSource, TargetStrategy};
use lcm_core::train::{record_batch_loss, train_run, train_run_from, TrainConfig, TrainState};
use lcm_core::autodiff::Tape;

fn corpus() -> (Dataset, Dataset) {
    let spec = ConfusionSpec::paired(4, 0.6, 40, 12, 3);
    split_dataset(&generate_confused_corpus(&spec).unwrap(), 0.7, 1).unwrap()
}

fn config(strategy: TargetStrategy, epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, dim: 8, max_len: 12, seed: 21, strategy, ..TrainConfig::default() }
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.named().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn targets_are_one_hot_from_stop_epoch() {
    let s = TargetStrategy::Lcm { alpha: 4.0, stop_epoch: Some(10), detach_target: false };
    let t = make_target(&s, 1, 3, None, 10).unwrap();
    assert_eq!((t.values, t.source), (vec![0.0, 1.0, 0.0], TargetSource::OneHot));
    assert!(make_target(&s, 1, 3, None, 9).is_err(), "before the stop the SLD needs encoder outputs");

    let (train, _) = corpus();
    let params = ModelParams::init(train.kind, 4, 8, 0);
    let batch: Vec<_> = train.examples.iter().take(5).collect();
    let mut tape = Tape::new();
    let (loss, _) = record_batch_loss(&mut tape, &params, &s, &batch, 12).unwrap();
    let grads = tape.backprop(loss).unwrap();
    assert!(!grads.contains_key("lcm.weight") && !grads.contains_key("label.embedding"));
}

#[test]
fn trajectory_after_stop_matches_one_hot_restart() {
    let (train, test) = corpus();
    let stop = 2;
    let lcm = TargetStrategy::Lcm { alpha: 4.0, stop_epoch: Some(stop), detach_target: false };
    let (full, history) = train_run(&train, &test, &config(lcm.clone(), 5)).unwrap();
    assert_eq!(history.records.iter().map(|r| r.lcm_active).collect::<Vec<_>>(), [true, true, false, false, false]);

    let first_leg = config(lcm, stop);
    let (at_stop, _) = train_run_from(TrainState::init(&train, &first_leg), &train, &test, &first_leg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    at_stop.save(&path).unwrap();
    let restored = TrainState::load(&path).unwrap();
    assert_eq!(restored.epoch, stop);

    let (resumed, _) = train_run_from(restored, &train, &test, &config(TargetStrategy::OneHot, 5)).unwrap();
    assert_eq!(bits(&resumed.params), bits(&full));
}

#[test]
fn predictor_runs_from_encoder_and_classifier_only() {
    let (train, test) = corpus();
    let (params, _) = train_run(&train, &test, &config(TargetStrategy::lcm(4.0), 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("predictor.json");
    params.predictor().to_checkpoint().save(&path).unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    assert!(ck.0.keys().all(|k| k.starts_with("text.") || k.starts_with("classifier.")));
    assert!(ModelParams::from_checkpoint(&ck).is_err());
    let predictor = Predictor::from_checkpoint(&ck).unwrap();
    assert_eq!(predictor.predict(&test.examples).unwrap(), params.predictor().predict(&test.examples).unwrap());
}
