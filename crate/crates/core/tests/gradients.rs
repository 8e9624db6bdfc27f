use std::collections::BTreeMap;

use lcm_core::autodiff::{grad_check, Tape, Tensor};
use lcm_core::data::{Example, InputKind};
use lcm_core::encoders::{encode_labels, Bind, Checkpoint, ModelParams};
use lcm_core::targets::{make_target, record_sld, LcmInputs, TargetSource, TargetStrategy};
use lcm_core::train::record_batch_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, vocab: usize, classes: usize, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            let ids = (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect();
            Example::tokens(ids, rng.gen_range(0..classes))
        })
        .collect()
}

/// Scales every parameter up so the check is not run in the near-linear
/// regime of a fresh initialization.
fn spread(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for (_, t) in params.named_mut() {
        for v in t.data_mut() {
            *v = *v * 3.0 + rng.gen_range(-0.3..0.3);
        }
    }
}

fn check_full_loss(params: &ModelParams, strategy: &TargetStrategy, batch: &[Example], epoch: usize) -> f64 {
    let refs: Vec<&Example> = batch.iter().collect();
    let leaves: BTreeMap<String, Tensor> = params.to_checkpoint().0;
    grad_check(
        |tape: &mut Tape, _| {
            // Rebuild the model from the (possibly perturbed) leaves on the
            // tape; re-registered names share one gradient.
            let current = Checkpoint(tape.params().map(|(n, t)| (n.to_string(), t.clone())).collect());
            let model = ModelParams::from_checkpoint(&current)?;
            Ok(record_batch_loss(tape, &model, strategy, &refs, epoch)?.0)
        },
        &leaves,
        1e-5,
    )
    .unwrap()
}

#[test]
fn full_lcm_loss_gradients_on_random_instances() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = [3, 5][seed as usize % 2];
        let d = [4, 8][(seed as usize / 2) % 2];
        let vocab = 7;
        let mut params = ModelParams::init(InputKind::Tokens { vocab_size: vocab }, c, d, seed);
        spread(&mut params, &mut rng);
        let batch = random_batch(&mut rng, vocab, c, 3);
        let alpha = rng.gen_range(0.5..6.0);
        worst = worst.max(check_full_loss(&params, &TargetStrategy::lcm(alpha), &batch, 0));
        count += 1;
    }
    assert!(count >= 20);
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn detached_target_blocks_lcm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let detached = TargetStrategy::Lcm { alpha: 2.0, stop_epoch: None, detach_target: true };
    let mut params = ModelParams::init(InputKind::Tokens { vocab_size: 6 }, 3, 4, 1);
    spread(&mut params, &mut rng);
    let batch = random_batch(&mut rng, 6, 3, 4);
    let refs: Vec<&Example> = batch.iter().collect();
    let mut tape = Tape::new();
    let (loss, _) = record_batch_loss(&mut tape, &params, &detached, &refs, 0).unwrap();
    let grads = tape.backprop(loss).unwrap();
    for name in ["label.embedding", "label.hidden.weight", "label.hidden.bias", "lcm.weight", "lcm.bias"] {
        assert!(grads[name].data().iter().all(|&g| g == 0.0), "{name}");
    }
    assert!(grads["classifier.weight"].data().iter().any(|&g| g != 0.0));
}

#[test]
fn feature_input_and_smoothing_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);

    let mut params = ModelParams::init(InputKind::Features { dim: 3 }, 3, 4, 2);
    spread(&mut params, &mut rng);
    let batch: Vec<Example> =
        (0..3).map(|i| Example::features((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(), i % 3)).collect();
    assert!(check_full_loss(&params, &TargetStrategy::lcm(4.0), &batch, 0) < 1e-4);
    let ls = TargetStrategy::LabelSmoothing { epsilon: 0.1 };
    assert!(check_full_loss(&params, &ls, &batch, 0) < 1e-4);
}

#[test]
fn batched_sld_matches_per_example_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 4;
    let mut params = ModelParams::init(InputKind::Tokens { vocab_size: 9 }, c, 6, 3);
    spread(&mut params, &mut rng);
    let batch = random_batch(&mut rng, 9, c, 6);
    let refs: Vec<&Example> = batch.iter().collect();

    let mut tape = Tape::new();
    let text = params.text.bind(&mut tape, Bind::Frozen);
    let v = params.text.record(&mut tape, text, &refs).unwrap();
    let ln = params.label.bind(&mut tape, Bind::Frozen);
    let labels = params.label.record(&mut tape, ln).unwrap();
    let hn = params.head.bind(&mut tape, Bind::Frozen);
    let lcd = params.head.record(&mut tape, hn, v, labels).unwrap();
    let mut hot = vec![0.0; batch.len() * c];
    for (i, e) in batch.iter().enumerate() {
        hot[i * c + e.label] = 1.0;
    }
    let hot = tape.constant(Tensor::matrix(batch.len(), c, hot).unwrap());
    let sld = record_sld(&mut tape, hot, lcd, 4.0).unwrap();

    let label_matrix = encode_labels(c, &params.label).unwrap();
    let strategy = TargetStrategy::lcm(4.0);
    for (i, e) in batch.iter().enumerate() {
        let inputs = LcmInputs { v_i: tape.value(v).row(i), labels: &label_matrix, head: &params.head };
        let t = make_target(&strategy, e.label, c, Some(inputs), 0).unwrap();
        assert_eq!(t.source, TargetSource::Simulated);
        for (a, b) in t.values.iter().zip(tape.value(sld).row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

