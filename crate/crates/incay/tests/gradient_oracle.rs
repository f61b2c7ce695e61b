//! Finite-difference oracle for every layer and every loss: analytic
//! gradients must agree with central differences to 1e-5 relative error
//! on at least 100 random small instances per target.

mod common;

use common::{assert_grad_close, random_features, random_tensor, ORACLE_TOL};
use incay::layers::{conv2d_layer, fc_layer, maxpool_layer, relu_layer, LayerParams};
use incay::losses::{self, LossKind};
use incay::tensor::{finite_diff_grad, FD_STEP};
use incay::{SeededRng, Tensor};

fn dot_all(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

const INSTANCES: usize = 100;

#[test]
fn fc_layer_matches_oracle() {
    let mut rng = SeededRng::new(0xFC0);
    for i in 0..INSTANCES {
        let n = 1 + (i % 4);
        let d_in = 2 + (i % 4);
        let d_out = 1 + (i % 3);
        let x = random_tensor(&mut rng, &[n, d_in]);
        let p = LayerParams {
            weights: random_tensor(&mut rng, &[d_in, d_out]),
            bias: if i % 2 == 0 {
                Some(random_tensor(&mut rng, &[d_out]))
            } else {
                None
            },
        };
        let probe = random_tensor(&mut rng, &[n, d_out]);
        let (_, grads) = fc_layer(&x, &p, Some(&probe)).unwrap();
        let (dx, dw, db) = grads.unwrap();

        let scalar_x = |t: &Tensor| dot_all(&fc_layer(t, &p, None).unwrap().0, &probe);
        assert_grad_close(&dx, &finite_diff_grad(scalar_x, &x, FD_STEP).unwrap(), "fc dx");

        let bias = p.bias.clone();
        let scalar_w = |t: &Tensor| {
            let q = LayerParams {
                weights: t.clone(),
                bias: bias.clone(),
            };
            dot_all(&fc_layer(&x, &q, None).unwrap().0, &probe)
        };
        assert_grad_close(
            &dw,
            &finite_diff_grad(scalar_w, &p.weights, FD_STEP).unwrap(),
            "fc dw",
        );

        if let Some(b) = &p.bias {
            let w = p.weights.clone();
            let scalar_b = |t: &Tensor| {
                let q = LayerParams {
                    weights: w.clone(),
                    bias: Some(t.clone()),
                };
                dot_all(&fc_layer(&x, &q, None).unwrap().0, &probe)
            };
            assert_grad_close(&db, &finite_diff_grad(scalar_b, b, FD_STEP).unwrap(), "fc db");
        }
    }
}

#[test]
fn conv_layer_matches_oracle() {
    let mut rng = SeededRng::new(0xC0);
    for i in 0..INSTANCES {
        let n = 1 + (i % 2);
        let c = 1 + (i % 2);
        let hw = 4 + (i % 3);
        let k = 2 + (i % 2);
        let f = 1 + (i % 3);
        let padding = i % 2;
        let x = random_tensor(&mut rng, &[n, c, hw, hw]);
        let p = LayerParams {
            weights: random_tensor(&mut rng, &[f, c, k, k]),
            bias: Some(random_tensor(&mut rng, &[f])),
        };
        let out_hw = hw + 2 * padding - k + 1;
        let probe = random_tensor(&mut rng, &[n, f, out_hw, out_hw]);
        let (_, grads) = conv2d_layer(&x, &p, padding, Some(&probe)).unwrap();
        let (dx, dw, db) = grads.unwrap();

        let scalar_x = |t: &Tensor| dot_all(&conv2d_layer(t, &p, padding, None).unwrap().0, &probe);
        assert_grad_close(
            &dx,
            &finite_diff_grad(scalar_x, &x, FD_STEP).unwrap(),
            "conv dx",
        );

        let bias = p.bias.clone();
        let scalar_w = |t: &Tensor| {
            let q = LayerParams {
                weights: t.clone(),
                bias: bias.clone(),
            };
            dot_all(&conv2d_layer(&x, &q, padding, None).unwrap().0, &probe)
        };
        assert_grad_close(
            &dw,
            &finite_diff_grad(scalar_w, &p.weights, FD_STEP).unwrap(),
            "conv dw",
        );

        let w = p.weights.clone();
        let scalar_b = |t: &Tensor| {
            let q = LayerParams {
                weights: w.clone(),
                bias: Some(t.clone()),
            };
            dot_all(&conv2d_layer(&x, &q, padding, None).unwrap().0, &probe)
        };
        assert_grad_close(
            &db,
            &finite_diff_grad(scalar_b, p.bias.as_ref().unwrap(), FD_STEP).unwrap(),
            "conv db",
        );
    }
}

/// Perturbs tensor values away from relu kinks / pooling ties so the
/// finite-difference step cannot cross a non-smooth point.
fn separate(mut t: Tensor, margin: f64) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = margin * if *v >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    t
}

#[test]
fn relu_layer_matches_oracle() {
    let mut rng = SeededRng::new(0x3E);
    for i in 0..INSTANCES {
        let n = 1 + (i % 3);
        let d = 2 + (i % 5);
        let x = separate(random_tensor(&mut rng, &[n, d]), 1e-3);
        let probe = random_tensor(&mut rng, &[n, d]);
        let (_, dx) = relu_layer(&x, Some(&probe)).unwrap();
        let scalar = |t: &Tensor| dot_all(&relu_layer(t, None).unwrap().0, &probe);
        assert_grad_close(
            &dx.unwrap(),
            &finite_diff_grad(scalar, &x, FD_STEP).unwrap(),
            "relu dx",
        );
    }
}

#[test]
fn maxpool_layer_matches_oracle() {
    let mut rng = SeededRng::new(0x90);
    'outer: for i in 0..INSTANCES {
        let n = 1 + (i % 2);
        let c = 1 + (i % 3);
        let hw = 4 + 2 * (i % 2);
        let x = {
            // resample until every 2x2 window has a clear winner
            let mut t = random_tensor(&mut rng, &[n, c, hw, hw]);
            for _ in 0..100 {
                if windows_separated(&t, hw, 1e-3) {
                    break;
                }
                t = random_tensor(&mut rng, &[n, c, hw, hw]);
            }
            if !windows_separated(&t, hw, 1e-3) {
                continue 'outer;
            }
            t
        };
        let probe = random_tensor(&mut rng, &[n, c, hw / 2, hw / 2]);
        let (_, _, dx) = maxpool_layer(&x, Some(&probe)).unwrap();
        let scalar = |t: &Tensor| dot_all(&maxpool_layer(t, None).unwrap().0, &probe);
        assert_grad_close(
            &dx.unwrap(),
            &finite_diff_grad(scalar, &x, FD_STEP).unwrap(),
            "maxpool dx",
        );
    }
}

fn windows_separated(x: &Tensor, hw: usize, gap: f64) -> bool {
    let planes = x.len() / (hw * hw);
    let d = x.data();
    for p in 0..planes {
        for oy in 0..hw / 2 {
            for ox in 0..hw / 2 {
                let b = p * hw * hw;
                let mut vals = [
                    d[b + 2 * oy * hw + 2 * ox],
                    d[b + 2 * oy * hw + 2 * ox + 1],
                    d[b + (2 * oy + 1) * hw + 2 * ox],
                    d[b + (2 * oy + 1) * hw + 2 * ox + 1],
                ];
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals[0] - vals[1] < gap {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn softmax_loss_matches_oracle() {
    common::oracle_loss_suite(LossKind::Softmax, 2, INSTANCES, 0x501);
}

#[test]
fn lsoftmax_loss_matches_oracle_m2_m3_m4() {
    for m in [2u32, 3, 4] {
        common::oracle_loss_suite(LossKind::LSoftmax, m, INSTANCES, 0x15 + m as u64);
    }
}

#[test]
fn asoftmax_loss_matches_oracle_m2_m3_m4() {
    for m in [2u32, 3, 4] {
        common::oracle_loss_suite(LossKind::ASoftmax, m, INSTANCES, 0xA5 + m as u64);
    }
}

#[test]
fn center_loss_matches_oracle() {
    common::oracle_loss_suite(LossKind::Center, 2, INSTANCES, 0xCE);
}

#[test]
fn coco_loss_matches_oracle() {
    common::oracle_loss_suite(LossKind::Coco, 2, INSTANCES, 0xC0C0);
}

#[test]
fn l2softmax_loss_matches_oracle() {
    common::oracle_loss_suite(LossKind::L2Softmax, 2, INSTANCES, 0x125);
}

#[test]
fn feature_incay_matches_oracle() {
    let mut rng = SeededRng::new(0x1C);
    for i in 0..INSTANCES {
        let n = 1 + (i % 4);
        let d = 2 + (i % 4);
        let f = random_features(&mut rng, n, d);
        let mask: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
        let (_, grad) = losses::feature_incay(&f, &mask, 1e-2).unwrap();
        let fd = finite_diff_grad(
            |t| losses::feature_incay(t, &mask, 1e-2).unwrap().0,
            &f,
            FD_STEP,
        )
        .unwrap();
        assert_grad_close(&grad, &fd, "feature_incay");
    }
}

#[test]
fn incay_gradient_clip_engages_on_tiny_norms() {
    // norm 0.1: raw gradient magnitude 2*0.1/(0.01+0.01)^2 = 500 >> 1,
    // so the row must come back clipped to unit norm
    let f = Tensor::from_rows(&[&[0.1, 0.0]]).unwrap();
    let (_, grad) = losses::feature_incay(&f, &[true], 1e-2).unwrap();
    let norm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12, "clipped norm {norm}");
}

#[test]
fn composite_matches_oracle_all_bases() {
    for kind in [
        LossKind::Softmax,
        LossKind::LSoftmax,
        LossKind::ASoftmax,
        LossKind::Center,
        LossKind::Coco,
        LossKind::L2Softmax,
    ] {
        common::oracle_composite_suite(kind, INSTANCES, 0xB0B + kind as u64);
    }
}

#[test]
fn network_backward_matches_oracle_end_to_end() {
    use incay::losses::{reciprocal_norm_total, LossConfig};
    use incay::{Architecture, Model};
    // conv-pool-relu-fc stack on a small input, propagating the
    // composite loss all the way to the first conv kernel
    let arch = Architecture {
        input_shape: vec![1, 6, 6],
        layers: vec![
            incay::layers::LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                padding: 0,
            },
            incay::layers::LayerSpec::Relu,
            incay::layers::LayerSpec::MaxPool,
            incay::layers::LayerSpec::Flatten,
            incay::layers::LayerSpec::Fc { out_dim: 3 },
        ],
        feature_dim: 3,
        num_classes: 2,
    };
    let model = Model::init(arch, LossKind::Softmax, 77).unwrap();
    let mut rng = SeededRng::new(78);
    let x = random_tensor(&mut rng, &[2, 1, 6, 6]);
    let y = vec![0usize, 1];
    let config = LossConfig {
        incay_lambda: 0.0,
        decay_mu: 0.0,
        ..LossConfig::default()
    };

    let (features, caches) = model.network.forward(&x).unwrap();
    let report = reciprocal_norm_total(&features, &y, &model.classifier, &config).unwrap();
    let grads = model.network.backward(&caches, &report.d_features).unwrap();

    let scalar = |net: &incay::Network| {
        let (f, _) = net.forward(&x).unwrap();
        reciprocal_norm_total(&f, &y, &model.classifier, &config)
            .unwrap()
            .base_loss
    };
    for (idx, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let base_weights = model.network.params[idx].as_ref().unwrap().weights.clone();
        let mut numeric = Tensor::zeros(base_weights.shape());
        for coord in 0..base_weights.len() {
            let probe = |delta: f64| {
                let mut n2 = model.network.clone();
                let w = &mut n2.params[idx].as_mut().unwrap().weights;
                w.data_mut()[coord] += delta;
                scalar(&n2)
            };
            numeric.data_mut()[coord] = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
        }
        let mut worst = 0.0f64;
        for (&a, &n) in g.d_weights.data().iter().zip(numeric.data()) {
            worst = worst.max(common::rel_err(a, n));
        }
        assert!(
            worst < ORACLE_TOL,
            "layer {idx} end-to-end d_weights worst rel err {worst:.3e}"
        );
    }
}
