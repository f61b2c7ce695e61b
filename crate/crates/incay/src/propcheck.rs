//! Executable checks for the geometric claims behind the incay
//! regularizer: the orthant weight construction, loss monotonicity in
//! the feature norm, gradient vanishing under saturation, the
//! inter/intra-class distance bounds, and the incay gradient ordering.

use crate::error::{Error, Result};
use crate::losses::{softmax_loss, ClassifierState};
use crate::tensor::{slice_norm, SeededRng, Tensor};

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub id: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest observed slack; negative means a violation.
    pub worst_margin: f64,
    pub pass: bool,
    /// The first offending instance, verbatim, when violations > 0.
    pub detail: Option<String>,
}

impl PropertyReport {
    fn new(id: &str, instances: usize, violations: usize, worst_margin: f64, detail: Option<String>) -> Self {
        PropertyReport {
            id: id.to_string(),
            instances,
            violations,
            worst_margin,
            pass: violations == 0,
            detail,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} ({} instances, {} violations, worst margin {:.3e})",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.instances,
            self.violations,
            self.worst_margin
        )
    }
}

/// K unit vectors from {+-e_1, ..., +-e_D} with every pairwise inner
/// product <= 0: +e_1..+e_D first, then -e_1..-e_D.
pub fn orthant_weights(k: usize, d: usize) -> Result<Tensor> {
    if k > 2 * d {
        return Err(Error::invalid(format!(
            "orthant construction needs K <= 2D, got K={k}, D={d}"
        )));
    }
    if k < 1 {
        return Err(Error::invalid("need at least one class"));
    }
    let mut w = Tensor::zeros(&[k, d]);
    for j in 0..k {
        let (axis, sign) = if j < d { (j, 1.0) } else { (j - d, -1.0) };
        w.row_mut(j)?[axis] = sign;
    }
    Ok(w)
}

/// Softmax loss is strictly decreasing under (1+t) feature scaling for
/// correctly classified samples. Rejects (does not fail) instances that
/// break the hypothesis.
pub fn check_property1(
    cls: &ClassifierState,
    f: &Tensor,
    y: &[usize],
    scales: &[f64],
) -> Result<PropertyReport> {
    let (n, _) = f.dims2()?;
    let baseline = softmax_loss(f, y, cls)?;
    if let Some(i) = baseline.mask.iter().position(|&m| !m) {
        return Err(Error::invalid(format!(
            "sample {i} is not correctly classified; the property hypothesis is unmet"
        )));
    }
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = None;
    let mut prev = baseline.base_loss;
    let mut prev_t = 0.0;
    for &t in scales {
        let scaled = f.scale(1.0 + t);
        let loss = softmax_loss(&scaled, y, cls)?.base_loss;
        let margin = prev - loss;
        worst = worst.min(margin);
        if margin <= 0.0 {
            violations += 1;
            detail.get_or_insert_with(|| {
                format!(
                    "loss did not decrease from t={prev_t} ({prev}) to t={t} ({loss}); f={:?}, y={y:?}",
                    f.data()
                )
            });
        }
        prev = loss;
        prev_t = t;
    }
    let _ = n;
    Ok(PropertyReport::new("property1", scales.len(), violations, worst, detail))
}

/// With orthant weights and f = t * w_y, the feature gradient norm is
/// strictly decreasing along the ladder and below 1e-6 at its top.
pub fn check_property2(cls: &ClassifierState, y: usize, norm_ladder: &[f64]) -> Result<PropertyReport> {
    let d = cls.feature_dim();
    if y >= cls.num_classes() {
        return Err(Error::invalid(format!("class {y} out of range")));
    }
    let wy = cls.weights.row(y)?.to_vec();
    let mut norms = Vec::with_capacity(norm_ladder.len());
    for &t in norm_ladder {
        let f = Tensor::new(vec![1, d], wy.iter().map(|&v| v * t).collect())?;
        let report = softmax_loss(&f, &[y], cls)?;
        norms.push(slice_norm(report.d_features.row(0)?));
    }
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = None;
    for w in norms.windows(2) {
        let margin = w[0] - w[1];
        worst = worst.min(margin);
        if margin <= 0.0 {
            violations += 1;
            detail.get_or_insert_with(|| format!("gradient norms not decreasing: {norms:?}"));
        }
    }
    if let Some(&last) = norms.last() {
        let margin = 1e-6 - last;
        worst = worst.min(margin);
        if margin <= 0.0 {
            violations += 1;
            detail.get_or_insert_with(|| format!("final gradient norm {last} >= 1e-6; ladder {norms:?}"));
        }
    }
    Ok(PropertyReport::new("property2", norm_ladder.len(), violations, worst, detail))
}

/// Closed-form distance bounds for features aligned with their weight
/// vectors: minimal inter-class distance 2*alpha*sin(theta/2) and the
/// feature-norm upper bound alpha*(1 + 2*sin(theta/2)). Theta is in
/// degrees.
pub fn property3_bounds(alpha: f64, theta_deg: f64) -> Result<(f64, f64)> {
    if alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    if !(0.0 < theta_deg && theta_deg < 180.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "theta {theta_deg} degrees outside (0, 180]"
        )));
    }
    let half = theta_deg.to_radians() / 2.0;
    let min_inter = 2.0 * alpha * half.sin();
    let beta_upper = alpha * (1.0 + 2.0 * half.sin());
    Ok((min_inter, beta_upper))
}

/// The unclipped incay gradient norm 2r/(r^2+eps)^2 is strictly
/// decreasing for r >= 1: smaller-norm features move faster.
pub fn check_incay_ordering(epsilon: f64, norm_pairs: &[(f64, f64)]) -> Result<PropertyReport> {
    if epsilon <= 0.0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let g = |r: f64| 2.0 * r / ((r * r + epsilon) * (r * r + epsilon));
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = None;
    for &(a, b) in norm_pairs {
        let (p, q) = if a <= b { (a, b) } else { (b, a) };
        if p < 1.0 {
            return Err(Error::invalid(format!(
                "pair ({a}, {b}) below the r >= 1 regime"
            )));
        }
        // equal norms give equal gradients; counted as a pass
        let margin = if p == q { 0.0 } else { g(p) - g(q) };
        worst = worst.min(margin);
        if margin < 0.0 {
            violations += 1;
            detail.get_or_insert_with(|| format!("ordering violated for norms ({p}, {q}): g(p)={}, g(q)={}", g(p), g(q)));
        }
    }
    Ok(PropertyReport::new(
        "incay_ordering",
        norm_pairs.len(),
        violations,
        worst,
        detail,
    ))
}

/// Checks the orthant construction itself: unit rows, pairwise inner
/// products <= 0, for every K <= 2D up to the given cap.
pub fn check_lemma(max_k: usize) -> Result<PropertyReport> {
    let mut instances = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = None;
    for d in 1..=max_k {
        for k in 1..=(2 * d).min(max_k) {
            let w = orthant_weights(k, d)?;
            instances += 1;
            let mut ok = true;
            for i in 0..k {
                let ri = w.row(i)?;
                let margin = 1e-12 - (slice_norm(ri) - 1.0).abs();
                worst = worst.min(margin);
                if margin < 0.0 {
                    ok = false;
                }
                for j in i + 1..k {
                    let dp: f64 = ri.iter().zip(w.row(j)?).map(|(&a, &b)| a * b).sum();
                    worst = worst.min(-dp);
                    if dp > 0.0 {
                        ok = false;
                    }
                }
            }
            if !ok {
                violations += 1;
                detail.get_or_insert_with(|| format!("construction invalid for K={k}, D={d}: {:?}", w.data()));
            }
        }
    }
    Ok(PropertyReport::new("lemma_orthant", instances, violations, worst, detail))
}

/// Property 1 over randomized correctly-classified instances.
pub fn check_property1_randomized(instances: usize, seed: u64) -> Result<PropertyReport> {
    let mut rng = SeededRng::new(seed);
    let scales = [0.1, 0.5, 1.0, 3.0];
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = None;
    let mut done = 0;
    while done < instances {
        let k = 2 + rng.below(8);
        let d = k.max(2) + rng.below(8);
        let weights = crate::tensor::xavier_init(&mut rng, d, k, &[k, d])?;
        let cls = match ClassifierState::new(weights) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let y = rng.below(k);
        // aim near w_y so the sample is correctly classified, then gate
        let mut f = Tensor::zeros(&[1, d]);
        let wy = cls.weights.row(y)?.to_vec();
        let nwy = slice_norm(&wy);
        if nwy == 0.0 {
            continue;
        }
        for (fv, &wv) in f.row_mut(0)?.iter_mut().zip(&wy) {
            *fv = 2.0 * wv / nwy + 0.05 * rng.normal();
        }
        let base = softmax_loss(&f, &[y], &cls)?;
        if !base.mask[0] {
            continue;
        }
        let report = check_property1(&cls, &f, &[y], &scales)?;
        violations += report.violations;
        worst = worst.min(report.worst_margin);
        if report.detail.is_some() && detail.is_none() {
            detail = report.detail;
        }
        done += 1;
    }
    Ok(PropertyReport::new(
        "property1_randomized",
        instances,
        violations,
        worst,
        detail,
    ))
}

/// The default verification suite run by `incay verify`.
pub fn run_default_suite() -> Result<Vec<PropertyReport>> {
    let mut reports = Vec::new();

    reports.push(check_lemma(32)?);
    reports.push(check_property1_randomized(100, 20240817)?);

    let cls = ClassifierState::new(orthant_weights(10, 16)?)?;
    reports.push(check_property2(&cls, 0, &[1.0, 5.0, 10.0, 20.0])?);

    // closed-form interval endpoints
    let (_, at90) = property3_bounds(1.0, 90.0)?;
    let (_, at180) = property3_bounds(1.0, 180.0)?;
    let e90 = (at90 - (1.0 + std::f64::consts::SQRT_2)).abs();
    let e180 = (at180 - 3.0).abs();
    let worst = 1e-12 - e90.max(e180);
    reports.push(PropertyReport::new(
        "property3_endpoints",
        2,
        usize::from(worst < 0.0),
        worst,
        (worst < 0.0).then(|| format!("endpoints ({at90}, {at180}) vs (1+sqrt2, 3)")),
    ));

    let mut rng = SeededRng::new(7);
    let pairs: Vec<(f64, f64)> = (0..1000)
        .map(|_| (rng.uniform(1.0, 50.0), rng.uniform(1.0, 50.0)))
        .collect();
    reports.push(check_incay_ordering(1e-2, &pairs)?);

    Ok(reports)
}
