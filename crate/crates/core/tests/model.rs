mod common;

use common::*;
use phenocast::data::{SplitSet, TargetYears};
use phenocast::encoder::attention;
use phenocast::model::{mae_loss, ForwardStats, LossKind, Model};
use phenocast::selftest::{gradient_check, SelfTestConfig};
use phenocast::train::{train, TrainConfig};
use phenocast_tensor::{rng, Tape, Tensor};
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn tokens_match_loop_oracle() {
    let mut model = Model::new(small_config(3, 8, 1, 2, 0.0), 4).unwrap();
    jitter(&mut model, 4);
    let ex = phenocast::sampling::temporal_mask(random_example(1, 6, 3, 3), 2).unwrap();
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let seq = model.embedding.build_tokens(&mut tape, &b, &ex).unwrap();
    assert_eq!(tape.shape(seq.tokens), &[8, 8]);
    assert_eq!(seq.validity, vec![false, false, true, true, true, true, true, true]);
    let got = tape.value(seq.tokens);
    for (r, row) in reference_tokens(&model, &ex).iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert!(close(got[r * 8 + c], *v, 1e-12), "({r},{c})");
        }
    }
}

#[test]
fn forward_matches_loop_oracle() {
    for (seed, (layers, heads, t, delta)) in [(1, 1, 3, 1), (2, 2, 5, 4), (3, 4, 9, 2), (2, 1, 1, 7)].into_iter().enumerate() {
        let mut model = Model::new(small_config(3, 8, layers, heads, 0.3), seed as u64).unwrap();
        jitter(&mut model, seed as u64);
        let mut ex = random_example(seed as u64 + 10, t, delta, 3);
        if t > 2 {
            ex = phenocast::sampling::temporal_mask(ex, 2).unwrap();
        }
        let got = model.predict(&ex).unwrap();
        let want = reference_predict(&model, &ex);
        assert!(close(got, want, 1e-10), "L={layers} h={heads}: {got} vs {want}");
    }
}

#[test]
fn masked_keys_do_not_leak() {
    let mut r = rng::stream(8, 0);
    let validity = [true, false, true, false, true];
    let rand = |r: &mut phenocast_tensor::rng::StreamRng| Tensor::from_fn(vec![5, 4], |_| r.random_range(-3.0..3.0));
    let (q, k, v) = (rand(&mut r), rand(&mut r), rand(&mut r));
    let run = |k: &Tensor, v: &Tensor| {
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.leaf(&q), tape.leaf(k), tape.leaf(v));
        let out = attention(&mut tape, qv, kv, vv, &validity).unwrap();
        tape.value(out).to_vec()
    };
    let base = run(&k, &v);
    for _ in 0..20 {
        let (mut k2, mut v2) = (k.clone(), v.clone());
        for row in [1, 3] {
            for c in 0..4 {
                k2.data_mut()[row * 4 + c] = r.random_range(-50.0..50.0);
                v2.data_mut()[row * 4 + c] = r.random_range(-50.0..50.0);
            }
        }
        let out = run(&k2, &v2);
        for row in [0, 2, 4] {
            assert_eq!(&out[row * 4..row * 4 + 4], &base[row * 4..row * 4 + 4]);
        }
    }
}

#[test]
fn masked_steps_do_not_change_the_prediction() {
    let mut model = Model::new(small_config(3, 8, 2, 2, 0.0), 6).unwrap();
    jitter(&mut model, 6);
    let ex = phenocast::sampling::temporal_mask(random_example(3, 8, 2, 3), 3).unwrap();
    let base = model.predict(&ex).unwrap();
    let mut r = rng::stream(6, 1);
    for _ in 0..10 {
        let mut other = ex.clone();
        for i in 0..3 {
            for v in other.patches[i].values_mut() {
                *v = r.random_range(-1.0..1.0);
            }
            other.years[i] = r.random_range(1984..2024);
        }
        assert_eq!(model.predict(&other).unwrap(), base);
    }
}

#[test]
fn full_gradient_check() {
    for seed in 0..3 {
        let mut model = Model::new(small_config(3, 8, 2, 2, 0.2), seed).unwrap();
        jitter(&mut model, seed);
        let examples = [
            random_example(seed + 20, 4, 3, 3),
            phenocast::sampling::temporal_mask(random_example(seed + 30, 5, 1, 3), 2).unwrap(),
        ];
        let cfg = SelfTestConfig {
            per_tensor: None,
            seed,
            ..SelfTestConfig::default()
        };
        let report = gradient_check(&model, &examples, &cfg).unwrap();
        assert_eq!(report.checked, model.params.scalar_count());
        assert!(report.passes(1e-3), "seed {seed}: {:.3e}", report.max_rel_error);
    }
}

#[test]
fn cost_does_not_depend_on_horizon() {
    let model = Model::new(small_config(3, 8, 2, 2, 0.0), 1).unwrap();
    let stats: Vec<ForwardStats> = (1..=20)
        .map(|delta| model.predict_with_stats(&random_example(5, 10, delta, 3)).unwrap().1)
        .collect();
    assert!(stats.iter().all(|s| s.encoder_passes == 1));
    assert!(stats.iter().all(|s| s.tape_ops == stats[0].tape_ops && s.flops == stats[0].flops));
    let longer = model.predict_with_stats(&random_example(5, 11, 1, 3)).unwrap().1;
    assert!(longer.flops > stats[0].flops);
}

#[test]
fn zero_decoder_weights_return_the_bias() {
    let mut model = Model::new(small_config(3, 8, 1, 2, 0.0), 2).unwrap();
    jitter(&mut model, 2);
    let w = model.decoder.out.weight;
    model.params.get_mut(w).data_mut().fill(0.0);
    let bias = model.params.get(model.decoder.out.bias).data()[0];
    for seed in 0..5 {
        assert_eq!(model.predict(&random_example(seed, 3 + seed as usize, 2, 3)).unwrap(), bias);
    }
}

#[test]
fn dropout_only_acts_in_training() {
    let model = Model::new(small_config(3, 8, 1, 2, 0.5), 2).unwrap();
    let ex = random_example(1, 4, 2, 3);
    let eval = model.predict(&ex).unwrap();
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let mut stats = ForwardStats::default();
    let mut r = rng::stream(1, 0);
    let off = model.forward(&mut tape, &b, &ex, false, &mut r, &mut stats).unwrap();
    let on = model.forward(&mut tape, &b, &ex, true, &mut r, &mut stats).unwrap();
    assert_eq!(tape.item(off), eval);
    assert_ne!(tape.item(on), eval);
}

#[test]
fn batch_loss_is_mean_absolute_error() {
    let model = Model::new(small_config(3, 8, 1, 2, 0.0), 3).unwrap();
    let batch: Vec<_> = (0..4).map(|s| random_example(s, 3, 1 + s as usize, 3)).collect();
    let want: f64 = batch.iter().map(|ex| mae_loss(model.predict(ex).unwrap(), ex.target_value)).sum::<f64>() / 4.0;
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let mut r = rng::stream(0, 0);
    let loss = model.batch_loss(&mut tape, &b, &batch, LossKind::Mae, false, &mut r).unwrap();
    assert!(close(tape.item(loss), want, 1e-12));
    assert!(model.batch_loss(&mut tape, &b, &[], LossKind::Mae, false, &mut r).is_err());
}

fn tiny_training() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let set = SplitSet::new((0..4).map(|s| random_series(s, 24, 3)).collect(), TargetYears::ALL);
    let run = || {
        let mut model = Model::new(small_config(3, 8, 1, 2, 0.1), 7).unwrap();
        let mut losses = Vec::new();
        train(&mut model, &set, None, &tiny_training(), |r| losses.push(r.train_loss)).unwrap();
        (model.params.tensors().to_vec(), losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.len(), 6);
}

#[test]
fn single_example_is_fitted() {
    let ex = random_example(4, 5, 2, 3);
    let mut model = Model::new(small_config(3, 8, 1, 2, 0.0), 9).unwrap();
    let before = mae_loss(model.predict(&ex).unwrap(), ex.target_value);
    let mut opt = phenocast_tensor::Adam::new(1e-3).unwrap();
    for _ in 0..1000 {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape);
        let mut r = rng::stream(0, 0);
        let loss = model.batch_loss(&mut tape, &b, std::slice::from_ref(&ex), LossKind::Mae, false, &mut r).unwrap();
        tape.backward(loss).unwrap();
        model.params.zero_grad();
        model.params.collect_grads(&tape, &b).unwrap();
        opt.step(model.params.tensors_mut()).unwrap();
    }
    let after = mae_loss(model.predict(&ex).unwrap(), ex.target_value);
    assert!(after < 0.1 * before && after < 0.01, "{before} -> {after}");
}
