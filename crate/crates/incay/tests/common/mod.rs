//! Shared helpers for the integration suites: random well-conditioned
//! instances and the finite-difference comparison harness.
//!
//! Compiled separately into each suite, so any one suite uses only a
//! subset of these items.
#![allow(dead_code, unused_imports)]

use incay::losses::{self, ClassifierState, LossConfig, LossKind, LossReport};
use incay::tensor::{finite_diff_grad, FD_STEP};
use incay::{SeededRng, Tensor};

/// Relative disagreement with a floor so near-zero gradients are
/// compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub const ORACLE_TOL: f64 = 1e-5;

pub fn assert_grad_close(analytic: &Tensor, numeric: &Tensor, what: &str) {
    assert_eq!(analytic.shape(), numeric.shape(), "{what}: shape");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        worst = worst.max(rel_err(a, n));
    }
    assert!(
        worst < ORACLE_TOL,
        "{what}: worst relative error {worst:.3e} exceeds {ORACLE_TOL:.0e}"
    );
}

/// Uniform values in [-1, 1].
pub fn random_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let data: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.uniform(-1.0, 1.0))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random features with row norms in [2, 4]: large enough that the
/// incay gradient clip is inactive and no coordinate sits on a relu or
/// pooling tie.
pub fn random_features(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
    let mut f = random_tensor(rng, &[n, d]);
    for i in 0..n {
        let row = f.row_mut(i).unwrap();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let target = 2.0 + 2.0 * ((i % 5) as f64) / 4.0;
        for v in row.iter_mut() {
            *v *= target / norm;
        }
    }
    f
}

pub fn random_labels(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(k)).collect()
}

/// A loss instance is well-conditioned when every sample's top-two
/// logits are separated: finite-difference probes then cannot flip the
/// correctness mask or an argmax.
pub fn logits_separated(f: &Tensor, cls: &ClassifierState, gap: f64) -> bool {
    let logits = incay::tensor::matmul_nt(f, &cls.weights).unwrap();
    let (n, k) = logits.dims2().unwrap();
    for i in 0..n {
        let row = logits.row(i).unwrap();
        let mut sorted: Vec<f64> = row.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if k >= 2 && (sorted[0] - sorted[1]).abs() < gap {
            return false;
        }
    }
    true
}

/// Draws until the separation filter accepts; panics if the space is
/// somehow degenerate.
pub fn well_conditioned_instance(
    rng: &mut SeededRng,
    n: usize,
    d: usize,
    k: usize,
) -> (Tensor, Vec<usize>, ClassifierState) {
    for _ in 0..1000 {
        let f = random_features(rng, n, d);
        let y = random_labels(rng, n, k);
        let w = random_tensor(rng, &[k, d]);
        let cls = ClassifierState::new(w).unwrap();
        if logits_separated(&f, &cls, 1e-2) {
            return (f, y, cls);
        }
    }
    panic!("could not draw a well-conditioned instance");
}

pub type LossFn = dyn Fn(&Tensor, &[usize], &ClassifierState) -> incay::Result<LossReport>;

/// Checks d_features and d_weights of `loss` against central
/// differences on one instance.
pub fn check_loss_grads(
    loss: &LossFn,
    f: &Tensor,
    y: &[usize],
    cls: &ClassifierState,
    scalar_of: fn(&LossReport) -> f64,
    what: &str,
) {
    let report = loss(f, y, cls).unwrap();
    let fd_f = finite_diff_grad(
        |probe| scalar_of(&loss(probe, y, cls).unwrap()),
        f,
        FD_STEP,
    )
    .unwrap();
    assert_grad_close(&report.d_features, &fd_f, &format!("{what} d_features"));

    let centers = cls.centers.clone();
    let fd_w = finite_diff_grad(
        |probe| {
            let mut c = ClassifierState::new(probe.clone()).unwrap();
            c.centers = centers.clone();
            scalar_of(&loss(f, y, &c).unwrap())
        },
        &cls.weights,
        FD_STEP,
    )
    .unwrap();
    assert_grad_close(&report.d_weights, &fd_w, &format!("{what} d_weights"));
}

/// Runs `instances` oracle checks for one loss configuration.
pub fn oracle_loss_suite(kind: LossKind, margin: u32, instances: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let config = LossConfig {
        kind,
        margin,
        incay_lambda: 0.0,
        decay_mu: 0.0,
        ..LossConfig::default()
    };
    let what = format!("{}(m={margin})", kind.name());
    for i in 0..instances {
        let n = 1 + (i % 4);
        let k = 2 + (i % 3);
        let d = 2 + (i % 3);
        let (f, y, mut cls) = well_conditioned_instance(&mut rng, n, d, k);
        if kind == LossKind::Center {
            cls.centers = Some(random_tensor(&mut rng, &[k, d]));
        }
        let cfg = config.clone();
        check_loss_grads(
            &move |f, y, c| losses::base_loss(f, y, c, &cfg),
            &f,
            &y,
            &cls,
            |r| r.base_loss,
            &what,
        );
    }
}

/// Oracle checks for the full composite (base + incay + classifier
/// decay); the correctness mask is recomputed per probe, so instances
/// are filtered to keep it stable across the FD step.
pub fn oracle_composite_suite(kind: LossKind, instances: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let config = LossConfig {
        kind,
        incay_lambda: 0.1,
        decay_mu: 5e-4,
        ..LossConfig::default()
    };
    for i in 0..instances {
        let n = 1 + (i % 4);
        let k = 2 + (i % 3);
        let d = 2 + (i % 3);
        let (f, y, mut cls) = well_conditioned_instance(&mut rng, n, d, k);
        if kind == LossKind::Center {
            cls.centers = Some(random_tensor(&mut rng, &[k, d]));
        }
        let cfg = config.clone();
        check_loss_grads(
            &move |f, y, c| losses::reciprocal_norm_total(f, y, c, &cfg),
            &f,
            &y,
            &cls,
            |r| r.total,
            &format!("composite+{}", kind.name()),
        );
    }
}
