mod common;

use common::{grad_check, random_tensor, rng, synthetic_chips};
use dumpwatch::dataset::DatasetSplit;
use dumpwatch::numerics::{AdamConfig, AdamState, Graph};
use dumpwatch::training::{evaluate, train, train_step, Hyperparams, PosWeight};
use dumpwatch::unet::{build_unet, forward, parameter_schema, ParameterSet, UNetConfig};

fn small_model(in_channels: usize) -> UNetConfig {
    UNetConfig {
        in_channels,
        depth: 2,
        base_filters: 8,
        ..UNetConfig::default()
    }
}

#[test]
fn small_learning_rate_gives_non_increasing_loss() {
    let chips = synthetic_chips(32, 4, 5);
    let refs: Vec<_> = chips.iter().collect();
    let config = small_model(chips[0].band_count());
    let mut params: ParameterSet<f64> = build_unet(&config, 5).unwrap();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: 1e-4,
            ..AdamConfig::default()
        },
        params.tensors(),
    );
    let losses: Vec<f64> = (0..10)
        .map(|_| train_step(&mut params, &mut adam, &config, &refs, 2.0).unwrap())
        .collect();
    for pair in losses.windows(2) {
        assert!(pair[1] <= pair[0], "loss went up: {losses:?}");
    }
}

#[test]
fn larger_pos_weight_gives_larger_loss() {
    let mut r = rng(9);
    let logits = random_tensor(&mut r, &[2, 1, 6, 6], 2.0);
    let target: Vec<f64> = (0..72).map(|i| (i % 5 == 0) as u8 as f64).collect();
    let loss_at = |pw: f64| {
        let mut g = Graph::new();
        let x = g.leaf(logits.clone());
        let l = g.weighted_bce_with_logits(x, &target, pw).unwrap();
        g.value(l)[0]
    };
    let losses: Vec<f64> = [1.0, 1.5, 3.0, 10.0].into_iter().map(loss_at).collect();
    for pair in losses.windows(2) {
        assert!(pair[1] > pair[0], "{losses:?}");
    }
}

fn constant_output_model(config: &UNetConfig, head_bias: f32) -> ParameterSet<f32> {
    let mut params: ParameterSet<f32> = build_unet(config, 0).unwrap();
    for t in params.tensors_mut() {
        t.values.iter_mut().for_each(|v| *v = 0.0);
    }
    params.get_mut("head.bias").unwrap().values[0] = head_bias;
    params
}

#[test]
fn huge_logits_on_all_positive_chip_score_perfectly() {
    let mut chip = synthetic_chips(16, 1, 2).remove(0);
    chip.mask.iter_mut().for_each(|m| *m = 1);
    let config = small_model(chip.band_count());
    let m = evaluate(&constant_output_model(&config, 1e4), &config, &[chip.clone()], 0.5, 1.0).unwrap();
    assert_eq!(m.mean_iou, 1.0);
    assert!(m.loss.is_finite() && m.loss < 1e-6);

    let low = evaluate(&constant_output_model(&config, -1e4), &config, &[chip], 0.5, 1.0).unwrap();
    assert_eq!(low.mean_iou, 0.0);
}

#[test]
fn mean_iou_is_the_mean_of_per_chip_scores() {
    let chips = synthetic_chips(32, 6, 8);
    let config = small_model(chips[0].band_count());
    let params = build_unet(&config, 1).unwrap();
    let m = evaluate(&params, &config, &chips, 0.5, 3.0).unwrap();
    let mean = m.per_chip_iou.iter().sum::<f64>() / m.per_chip_iou.len() as f64;
    assert!((mean - m.mean_iou).abs() < 1e-12);
    assert!(m.per_chip_iou.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn evaluate_rejects_empty_input() {
    let config = small_model(6);
    let params = build_unet(&config, 1).unwrap();
    assert!(evaluate(&params, &config, &[], 0.5, 1.0).is_err());
}

#[test]
fn training_is_reproducible_and_keeps_the_best_epoch() {
    let chips = synthetic_chips(32, 8, 4);
    let config = small_model(chips[0].band_count());
    let split = DatasetSplit {
        train: chips[..6].to_vec(),
        val: chips[6..].to_vec(),
        test: Vec::new(),
        seed: 4,
    };
    let hyper = Hyperparams {
        batch_size: 4,
        max_epochs: 4,
        pos_weight: PosWeight::Auto,
        seed: 4,
        ..Hyperparams::default()
    };
    let run = || train(build_unet(&config, 4).unwrap(), &config, &split, &hyper).unwrap();
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(p1, p2);
    assert_eq!(r1.without_timing(), r2.without_timing());

    assert!(r1.stopping_epoch <= hyper.max_epochs);
    let argmin = r1
        .epochs
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap()
        .epoch;
    assert_eq!(r1.best_epoch, argmin);
    let m = evaluate(&p1, &config, &split.val, 0.5, r1.pos_weight).unwrap();
    let best = &r1.epochs[r1.best_epoch - 1];
    assert!((m.loss - best.val_loss).abs() < 1e-12);
}

#[test]
fn tiny_unet_gradients_match_finite_differences() {
    let config = UNetConfig {
        in_channels: 2,
        depth: 1,
        base_filters: 2,
        ..UNetConfig::default()
    };
    let params: ParameterSet<f64> = build_unet(&config, 21).unwrap();
    let mut r = rng(21);
    let mut inputs: Vec<_> = params.tensors().to_vec();
    // Nonzero biases keep pre-activations away from the relu kink.
    for (t, (name, _, _)) in inputs.iter_mut().zip(parameter_schema(&config)) {
        if name.ends_with(".bias") {
            *t = random_tensor(&mut r, &t.shape.clone(), 0.3);
        }
    }
    inputs.push(random_tensor(&mut r, &[1, 2, 4, 4], 1.0));
    let n = inputs.len() - 1;
    let target: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let err = grad_check(&inputs, 3, |g, v| {
        let logits = forward(g, &v[..n], &config, v[n]).unwrap();
        g.weighted_bce_with_logits(logits, &target, 2.0).unwrap()
    });
    assert!(err < 1e-3, "max relative error {err:e}");
}
