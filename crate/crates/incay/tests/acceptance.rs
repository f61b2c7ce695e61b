//! Acceptance gate: one test per shipping criterion, each printing a
//! single PASS/FAIL line (visible with `--nocapture`; the test verdict
//! carries the same information). The two MNIST criteria are long
//! (hours, not seconds) — run them with
//! `cargo test --test acceptance -- --nocapture`.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use incay::data::{load_idx, preprocess, synth_gaussian_blobs, Dataset, Split};
use incay::losses::{self, ClassifierState, LossConfig, LossKind};
use incay::trainer::{evaluate, sgd_momentum_step, Model};
use incay::{Architecture, SeededRng, Tensor, TrainConfig};

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {n} ({name}) failed: {detail}");
}

#[test]
fn acceptance_1_gradient_oracle_suite() {
    let start = Instant::now();
    for kind in [
        LossKind::Softmax,
        LossKind::Center,
        LossKind::Coco,
        LossKind::L2Softmax,
    ] {
        common::oracle_loss_suite(kind, 2, 100, 0xACC0 + kind as u64);
    }
    for m in [2u32, 3, 4] {
        common::oracle_loss_suite(LossKind::LSoftmax, m, 100, 0xACC8 + m as u64);
        common::oracle_loss_suite(LossKind::ASoftmax, m, 100, 0xACD0 + m as u64);
    }
    // feature incay on its own
    let mut rng = SeededRng::new(0xACE);
    for i in 0..100 {
        let n = 1 + (i % 4);
        let d = 2 + (i % 4);
        let f = common::random_features(&mut rng, n, d);
        let mask: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
        let (_, grad) = losses::feature_incay(&f, &mask, 1e-2).unwrap();
        let fd = incay::finite_diff_grad(
            |t| losses::feature_incay(t, &mask, 1e-2).unwrap().0,
            &f,
            incay::tensor::FD_STEP,
        )
        .unwrap();
        common::assert_grad_close(&grad, &fd, "feature_incay");
    }
    // full composite over every base
    for kind in [
        LossKind::Softmax,
        LossKind::LSoftmax,
        LossKind::ASoftmax,
        LossKind::Center,
        LossKind::Coco,
        LossKind::L2Softmax,
    ] {
        common::oracle_composite_suite(kind, 100, 0xACF0 + kind as u64);
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient oracle suite",
        elapsed.as_secs() < 120,
        &format!(
            "all losses (incl. margins 2-4), incay and composites match finite differences \
             to 1e-5 on 100 instances each; layer oracles run in the gradient_oracle suite; \
             took {elapsed:.1?}"
        ),
    );
}

#[test]
fn acceptance_2_property_suite() {
    let start = Instant::now();
    let reports = incay::propcheck::run_default_suite().unwrap();
    let all_pass = reports.iter().all(|r| r.pass);
    let elapsed = start.elapsed();
    let lines: Vec<String> = reports.iter().map(|r| r.summary()).collect();
    verdict(
        2,
        "property suite",
        all_pass && elapsed.as_secs() < 60,
        &format!("{}; took {elapsed:.1?}", lines.join("; ")),
    );
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist() -> (Dataset, Dataset) {
    let dir = mnist_dir();
    let mut train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )
    .expect("MNIST IDX files must be present under data/mnist");
    let mut test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
    test.split = Split::Test;
    preprocess(&mut train, &mut [&mut test]).unwrap();
    (train, test)
}

fn mnist_config(
    arch: Architecture,
    incay_lambda: f64,
    iters: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        arch,
        loss: LossConfig {
            kind: LossKind::Softmax,
            incay_lambda,
            decay_mu: 5e-4,
            ..LossConfig::default()
        },
        base_lr: 0.1,
        momentum: 0.9,
        batch_size: 64,
        total_iters: iters,
        lr_drop_iters: TrainConfig::default_lr_drops(iters),
        eval_every: 0,
        seed,
    }
}

#[test]
fn acceptance_3_quick_experiment_reproduction() {
    let (train, test) = load_mnist();
    let seeds = [1u64, 2, 3];
    let mut plain = Vec::new();
    let mut rn = Vec::new();
    for &seed in &seeds {
        for (lambda, out) in [(0.0, &mut plain), (0.1, &mut rn)] {
            // the reference pipeline mirrors training images randomly
            let cfg = mnist_config(Architecture::mnist2d(), lambda, 10_000, seed);
            let start = Instant::now();
            let (model, _) = incay::train(&cfg, &train, None).unwrap();
            let stats = evaluate(&model, &test, &cfg.loss, false).unwrap();
            eprintln!(
                "seed {seed} lambda {lambda}: test acc {:.4}, mean norm {:.2} ({:.0?})",
                stats.accuracy,
                stats.mean_feature_norm,
                start.elapsed()
            );
            out.push((stats.accuracy * 100.0, stats.mean_feature_norm));
        }
    }
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| {
        v.iter().map(f).sum::<f64>() / v.len() as f64
    };
    let plain_acc = mean(&plain, |x| x.0);
    let rn_acc = mean(&rn, |x| x.0);
    let plain_norm = mean(&plain, |x| x.1);
    let rn_norm = mean(&rn, |x| x.1);
    let wins = seeds
        .iter()
        .enumerate()
        .filter(|&(i, _)| rn[i].0 >= plain[i].0)
        .count();
    let pass = (plain_acc - 88.62).abs() <= 2.0
        && (rn_acc - 89.44).abs() <= 2.0
        && wins * 2 > seeds.len()
        && rn_norm >= 1.2 * plain_norm;
    verdict(
        3,
        "quick-experiment reproduction",
        pass,
        &format!(
            "softmax {plain_acc:.2}% (target 88.62±2.0), rn+softmax {rn_acc:.2}% \
             (target 89.44±2.0), rn wins {wins}/3 matched seeds, \
             mean norm {rn_norm:.1} vs {plain_norm:.1} (need ≥1.2x)"
        ),
    );
}

#[test]
fn acceptance_4_lambda_trend() {
    let start = Instant::now();
    let (train, test) = load_mnist();
    let train = train.truncated(10_000).unwrap().flattened().unwrap();
    let test = test.truncated(2_000).unwrap().flattened().unwrap();
    let seed = 1;
    let run = |lambda: f64| {
        let cfg = mnist_config(Architecture::mlp_mnist(), lambda, 3_000, seed);
        let (model, _) = incay::train(&cfg, &train, None).unwrap();
        evaluate(&model, &test, &cfg.loss, false).unwrap().accuracy * 100.0
    };
    let plain = run(0.0);
    let trend: Vec<(f64, f64)> = [1.0, 0.1, 0.01].map(|l| (l, run(l))).to_vec();
    let elapsed = start.elapsed();
    let pass = trend.iter().all(|&(_, acc)| acc >= plain - 0.5) && elapsed.as_secs() <= 600;
    verdict(
        4,
        "lambda trend",
        pass,
        &format!(
            "plain {plain:.2}%, rn {} (each must be ≥ plain − 0.5); took {elapsed:.0?}",
            trend
                .iter()
                .map(|(l, a)| format!("λ={l}: {a:.2}%"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn acceptance_5_equivalences() {
    // (a) lsoftmax with margin 1 is exactly softmax
    let mut rng = SeededRng::new(0xE51);
    let mut worst_a = 0.0f64;
    for _ in 0..200 {
        let f = common::random_features(&mut rng, 3, 4);
        let y = common::random_labels(&mut rng, 3, 3);
        let cls = ClassifierState::new(common::random_tensor(&mut rng, &[3, 4])).unwrap();
        let plain = losses::softmax_loss(&f, &y, &cls).unwrap();
        let m1 = losses::lsoftmax_loss(&f, &y, &cls, 1, false).unwrap();
        worst_a = worst_a.max((plain.base_loss - m1.base_loss).abs());
        for (a, b) in plain.d_features.data().iter().zip(m1.d_features.data()) {
            worst_a = worst_a.max((a - b).abs());
        }
        for (a, b) in plain.d_weights.data().iter().zip(m1.d_weights.data()) {
            worst_a = worst_a.max((a - b).abs());
        }
    }

    // (b) λ=0, μ=0 composite reproduces plain base-loss training
    // step-for-step, bit for bit
    let data = synth_gaussian_blobs(3, 2, 90, 0.3, &mut SeededRng::new(41)).unwrap();
    let zero_cfg = LossConfig {
        kind: LossKind::Softmax,
        incay_lambda: 0.0,
        decay_mu: 0.0,
        ..LossConfig::default()
    };
    let arch = Architecture::mlp(2, &[8], 4, 3);
    let mut model_a = Model::init(arch.clone(), LossKind::Softmax, 99).unwrap();
    let mut model_b = model_a.clone();
    let mut vel_a = Tensor::zeros(model_a.classifier.weights.shape());
    let mut vel_b = vel_a.clone();
    let mut stepwise_equal = true;
    let idx: Vec<usize> = (0..32).collect();
    for step in 0..50 {
        let offset = (step * 32) % (data.len() - 32);
        let batch: Vec<usize> = idx.iter().map(|i| i + offset).collect();
        let (xb, yb) = data.gather(&batch).unwrap();
        for (model, vel, composite) in [
            (&mut model_a, &mut vel_a, true),
            (&mut model_b, &mut vel_b, false),
        ] {
            let (f, caches) = model.network.forward(&xb).unwrap();
            let report = if composite {
                losses::reciprocal_norm_total(&f, &yb, &model.classifier, &zero_cfg).unwrap()
            } else {
                losses::base_loss(&f, &yb, &model.classifier, &zero_cfg).unwrap()
            };
            let grads = model.network.backward(&caches, &report.d_features).unwrap();
            for (p, g) in model.network.params.iter_mut().zip(&grads) {
                if let (Some(p), Some(g)) = (p, g) {
                    for (w, &dw) in p.weights.data_mut().iter_mut().zip(g.d_weights.data()) {
                        *w -= 0.05 * dw;
                    }
                }
            }
            sgd_momentum_step(
                &mut model.classifier.weights,
                &report.d_weights,
                vel,
                0.05,
                0.9,
                0.0,
            )
            .unwrap();
        }
        stepwise_equal &= model_a.classifier.weights == model_b.classifier.weights;
        for (a, b) in model_a.network.params.iter().zip(&model_b.network.params) {
            if let (Some(a), Some(b)) = (a, b) {
                stepwise_equal &= a.weights == b.weights;
            }
        }
        if !stepwise_equal {
            break;
        }
    }

    // (c) COCO is invariant under feature rescaling
    let mut worst_c = 0.0f64;
    for i in 0..200 {
        let f = common::random_features(&mut rng, 3, 4);
        let y = common::random_labels(&mut rng, 3, 3);
        let cls = ClassifierState::new(common::random_tensor(&mut rng, &[3, 4])).unwrap();
        let scale = 0.1 + (i as f64) * 0.05;
        let a = losses::coco_loss(&f, &y, &cls).unwrap().base_loss;
        let b = losses::coco_loss(&f.scale(scale), &y, &cls).unwrap().base_loss;
        worst_c = worst_c.max((a - b).abs());
    }

    let pass = worst_a < 1e-12 && stepwise_equal && worst_c < 1e-12;
    verdict(
        5,
        "equivalences",
        pass,
        &format!(
            "lsoftmax(m=1) vs softmax worst |Δ| {worst_a:.2e} (<1e-12); \
             λ=0/μ=0 composite bitwise equal to base over 50 steps: {stepwise_equal}; \
             coco rescale worst |Δ| {worst_c:.2e} (<1e-12)"
        ),
    );
}
