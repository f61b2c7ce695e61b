//! The six classification losses with exact analytic gradients w.r.t.
//! features and classifier weights, the correctness indicator h(i), the
//! feature-incay term, and the reciprocal-norm composite objective.

use crate::error::{Error, Result};
use crate::tensor::{dot, matmul, matmul_nt, matmul_tn, slice_norm, Tensor};

/// The K class weight vectors (rows), plus optional per-class centers
/// used by the center loss.
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub weights: Tensor,
    pub centers: Option<Tensor>,
}

impl ClassifierState {
    pub fn new(weights: Tensor) -> Result<Self> {
        let (k, d) = weights.dims2()?;
        if k < 2 || d < 1 {
            return Err(Error::invalid(format!(
                "classifier needs K >= 2 and D >= 1, got {k}x{d}"
            )));
        }
        Ok(ClassifierState {
            weights,
            centers: None,
        })
    }

    pub fn with_centers(weights: Tensor) -> Result<Self> {
        let mut cls = ClassifierState::new(weights)?;
        let (k, d) = cls.weights.dims2()?;
        cls.centers = Some(Tensor::zeros(&[k, d]));
        Ok(cls)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Scalar loss breakdown plus gradients and per-sample probabilities.
/// `total = base + lambda * incay + mu * decay` for the configured
/// lambda and mu.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub base_loss: f64,
    pub incay_loss: f64,
    pub decay_loss: f64,
    pub total: f64,
    pub d_features: Tensor,
    pub d_weights: Tensor,
    pub probs: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    LSoftmax,
    ASoftmax,
    Center,
    Coco,
    L2Softmax,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<LossKind> {
        Ok(match s {
            "softmax" => LossKind::Softmax,
            "lsoftmax" => LossKind::LSoftmax,
            "asoftmax" => LossKind::ASoftmax,
            "center" => LossKind::Center,
            "coco" => LossKind::Coco,
            "l2softmax" => LossKind::L2Softmax,
            other => return Err(Error::invalid(format!("unknown loss kind '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::LSoftmax => "lsoftmax",
            LossKind::ASoftmax => "asoftmax",
            LossKind::Center => "center",
            LossKind::Coco => "coco",
            LossKind::L2Softmax => "l2softmax",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Angular margin m for L-/A-Softmax.
    pub margin: u32,
    /// Hypersphere radius for the L2-softmax.
    pub alpha: f64,
    /// Weight of the center term in the joint center loss.
    pub center_lambda: f64,
    /// Step size of the running center update.
    pub center_lr: f64,
    /// Feature-incay weight lambda.
    pub incay_lambda: f64,
    /// Denominator guard epsilon in the incay term.
    pub epsilon: f64,
    /// Weight-decay mu.
    pub decay_mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Softmax,
            margin: 2,
            alpha: 10.0,
            center_lambda: 0.01,
            center_lr: 0.5,
            incay_lambda: 0.0,
            epsilon: 1e-2,
            decay_mu: 5e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 1 {
            return Err(Error::invalid("margin m must be >= 1"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::invalid("alpha must be positive"));
        }
        if self.incay_lambda < 0.0 || self.decay_mu < 0.0 || self.center_lambda < 0.0 {
            return Err(Error::invalid("lambda, mu and center weight must be non-negative"));
        }
        if !(0.0 < self.center_lr && self.center_lr <= 1.0) {
            return Err(Error::invalid("center_lr must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn check_labels(y: &[usize], n: usize, k: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} samples",
            y.len()
        )));
    }
    for (i, &label) in y.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                sample: i,
                label,
                num_classes: k,
            });
        }
    }
    Ok(())
}

/// Row-stable softmax: rows sum to 1 and are invariant to adding a
/// constant to a logit row.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = logits.dims2()?;
    let mut probs = logits.clone();
    for i in 0..n {
        let row = probs.row_mut(i)?;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let _ = k;
    Ok(probs)
}

/// h(i) = 1 iff the label's logit is strictly greater than every other
/// logit; ties count as misclassified.
pub fn correctness_mask(logits: &Tensor, y: &[usize]) -> Result<Vec<bool>> {
    let (n, k) = logits.dims2()?;
    check_labels(y, n, k)?;
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i)?;
        let target = row[y[i]];
        mask.push(row.iter().enumerate().all(|(j, &v)| j == y[i] || v < target));
    }
    Ok(mask)
}

/// Mean cross-entropy over softmax of the given logits; d_logits is
/// (P - Y)/N.
fn ce_from_logits(logits: &Tensor, y: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    let (n, k) = logits.dims2()?;
    check_labels(y, n, k)?;
    let probs = softmax_probs(logits)?;
    let mut loss = 0.0;
    let mut d_logits = probs.clone();
    for i in 0..n {
        // clamp (unlike max) propagates NaN, so a poisoned forward pass
        // surfaces as a non-finite loss instead of being masked
        loss -= probs.row(i)?[y[i]].clamp(f64::MIN_POSITIVE, 1.0).ln();
        d_logits.row_mut(i)?[y[i]] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    Ok((loss * inv_n, probs, d_logits.scale(inv_n)))
}

fn report_from(
    base_loss: f64,
    d_features: Tensor,
    d_weights: Tensor,
    probs: Tensor,
    mask: Vec<bool>,
) -> LossReport {
    LossReport {
        base_loss,
        incay_loss: 0.0,
        decay_loss: 0.0,
        total: base_loss,
        d_features,
        d_weights,
        probs,
        mask,
    }
}

/// Bias-free softmax loss with logits w_j . f_i.
pub fn softmax_loss(f: &Tensor, y: &[usize], cls: &ClassifierState) -> Result<LossReport> {
    let logits = matmul_nt(f, &cls.weights)?;
    let mask = correctness_mask(&logits, y)?;
    let (loss, probs, dz) = ce_from_logits(&logits, y)?;
    let d_features = matmul(&dz, &cls.weights)?;
    let d_weights = matmul_tn(&dz, f)?;
    Ok(report_from(loss, d_features, d_weights, probs, mask))
}

/// psi(theta) = (-1)^k cos(m theta) - 2k with theta in [k pi/m, (k+1) pi/m];
/// continuous and non-increasing on [0, pi], equal to cos(theta) at m = 1.
pub fn psi(theta: f64, m: u32) -> Result<f64> {
    if m < 1 {
        return Err(Error::invalid("psi requires m >= 1"));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(Error::invalid(format!(
            "theta {theta} outside [0, pi]"
        )));
    }
    let k = psi_segment(theta, m);
    Ok(psi_at(theta, m, k))
}

fn psi_segment(theta: f64, m: u32) -> u32 {
    let k = (theta * m as f64 / std::f64::consts::PI).floor() as u32;
    k.min(m - 1)
}

fn psi_at(theta: f64, m: u32, k: u32) -> f64 {
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * (m as f64 * theta).cos() - 2.0 * k as f64
}

/// d psi / d cos(theta), finite everywhere (sin(theta) clamped away
/// from zero; callers stay away from segment boundaries in tests).
fn dpsi_dcos(theta: f64, m: u32, k: u32) -> f64 {
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let sin_t = theta.sin().max(1e-12);
    sign * m as f64 * (m as f64 * theta).sin() / sin_t
}

/// L-Softmax (and with `normalize_weights` the A-Softmax variant): the
/// target logit passes the angle through psi; other logits stay plain
/// inner products (scaled by 1/||w_j|| when normalized).
pub fn lsoftmax_loss(
    f: &Tensor,
    y: &[usize],
    cls: &ClassifierState,
    m: u32,
    normalize_weights: bool,
) -> Result<LossReport> {
    if m < 1 {
        return Err(Error::invalid("lsoftmax requires m >= 1"));
    }
    let (n, d) = f.dims2()?;
    let (k, dw) = cls.weights.dims2()?;
    if d != dw {
        return Err(Error::ShapeMismatch {
            op: "lsoftmax_loss",
            lhs: f.shape().to_vec(),
            rhs: cls.weights.shape().to_vec(),
        });
    }
    check_labels(y, n, k)?;
    let w_norms: Vec<f64> = (0..k).map(|j| slice_norm(cls.weights.row(j).unwrap())).collect();
    if normalize_weights {
        if let Some(j) = w_norms.iter().position(|&v| v == 0.0) {
            return Err(Error::invalid(format!("zero-norm weight row {j}")));
        }
    }

    // Forward: build the margin logits and remember per-sample geometry.
    let mut logits = Tensor::zeros(&[n, k]);
    let mut geoms = Vec::with_capacity(n);
    for i in 0..n {
        let fi = f.row(i)?;
        let nf = slice_norm(fi);
        if nf == 0.0 {
            return Err(Error::invalid(format!(
                "zero-norm feature row {i}: angle undefined"
            )));
        }
        let yi = y[i];
        let nwy = w_norms[yi];
        if nwy == 0.0 {
            return Err(Error::invalid(format!("zero-norm weight row {yi}")));
        }
        let row = logits.row_mut(i)?;
        for j in 0..k {
            let ip = dot(cls.weights.row(j)?, fi);
            row[j] = if normalize_weights { ip / w_norms[j] } else { ip };
        }
        let cos_t = (dot(cls.weights.row(yi)?, fi) / (nwy * nf)).clamp(-1.0, 1.0);
        let theta = cos_t.acos();
        let seg = psi_segment(theta, m);
        let psi_v = psi_at(theta, m, seg);
        let scale = if normalize_weights { 1.0 } else { nwy };
        row[yi] = scale * nf * psi_v;
        geoms.push((nf, cos_t, theta, seg, psi_v));
    }

    let mask = correctness_mask(&logits, y)?;
    let (loss, probs, dz) = ce_from_logits(&logits, y)?;

    // Backward: chain rule through the angle for the target class,
    // plain products elsewhere.
    let mut d_features = Tensor::zeros(&[n, d]);
    let mut d_weights = Tensor::zeros(&[k, d]);
    for i in 0..n {
        let fi = f.row(i)?.to_vec();
        let yi = y[i];
        let (nf, cos_t, theta, seg, psi_v) = geoms[i];
        let gz = dz.row(i)?.to_vec();
        for j in 0..k {
            let g = gz[j];
            if g == 0.0 {
                continue;
            }
            let wj = cls.weights.row(j)?.to_vec();
            let nwj = w_norms[j];
            if j != yi {
                if normalize_weights {
                    let ip = dot(&wj, &fi);
                    let df_row = d_features.row_mut(i)?;
                    for (dv, &wv) in df_row.iter_mut().zip(&wj) {
                        *dv += g * wv / nwj;
                    }
                    let dw_row = d_weights.row_mut(j)?;
                    for ((dv, &fv), &wv) in dw_row.iter_mut().zip(&fi).zip(&wj) {
                        *dv += g * (fv / nwj - ip * wv / (nwj * nwj * nwj));
                    }
                } else {
                    let df_row = d_features.row_mut(i)?;
                    for (dv, &wv) in df_row.iter_mut().zip(&wj) {
                        *dv += g * wv;
                    }
                    let dw_row = d_weights.row_mut(j)?;
                    for (dv, &fv) in dw_row.iter_mut().zip(&fi) {
                        *dv += g * fv;
                    }
                }
            } else {
                let nwy = nwj;
                let dpsi = dpsi_dcos(theta, m, seg);
                let scale = if normalize_weights { 1.0 } else { nwy };
                // dz/df = scale * (psi * f/nf + nf * dpsi * dc/df)
                // dc/df = w/(nwy*nf) - c*f/nf^2
                let df_row = d_features.row_mut(i)?;
                for ((dv, &fv), &wv) in df_row.iter_mut().zip(&fi).zip(&wj) {
                    let dc_df = wv / (nwy * nf) - cos_t * fv / (nf * nf);
                    *dv += g * scale * (psi_v * fv / nf + nf * dpsi * dc_df);
                }
                // dc/dw = f/(nwy*nf) - c*w/nwy^2
                let dw_row = d_weights.row_mut(yi)?;
                for ((dv, &fv), &wv) in dw_row.iter_mut().zip(&fi).zip(&wj) {
                    let dc_dw = fv / (nwy * nf) - cos_t * wv / (nwy * nwy);
                    let term = if normalize_weights {
                        nf * dpsi * dc_dw
                    } else {
                        nf * psi_v * wv / nwy + nwy * nf * dpsi * dc_dw
                    };
                    *dv += g * term;
                }
            }
        }
    }
    Ok(report_from(loss, d_features, d_weights, probs, mask))
}

/// Joint softmax + center objective:
/// total = softmax + center_lambda * (1/N) sum_i (1/2)||f_i - c_{y_i}||^2.
pub fn center_loss(
    f: &Tensor,
    y: &[usize],
    cls: &ClassifierState,
    center_lambda: f64,
) -> Result<LossReport> {
    let centers = cls
        .centers
        .as_ref()
        .ok_or_else(|| Error::invalid("center loss requires classifier centers"))?;
    let mut report = softmax_loss(f, y, cls)?;
    let (n, d) = f.dims2()?;
    if centers.shape() != [cls.num_classes(), d] {
        return Err(Error::ShapeMismatch {
            op: "center_loss",
            lhs: vec![cls.num_classes(), d],
            rhs: centers.shape().to_vec(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut term = 0.0;
    for i in 0..n {
        let ci = centers.row(y[i])?.to_vec();
        let fi = f.row(i)?;
        let mut sq = 0.0;
        for (&fv, &cv) in fi.iter().zip(&ci) {
            sq += (fv - cv) * (fv - cv);
        }
        term += 0.5 * sq;
        let df_row = report.d_features.row_mut(i)?;
        for ((dv, &fv), &cv) in df_row.iter_mut().zip(fi).zip(&ci) {
            *dv += center_lambda * inv_n * (fv - cv);
        }
    }
    report.base_loss += center_lambda * inv_n * term;
    report.total = report.base_loss;
    Ok(report)
}

/// Running class-center update:
/// c_j <- c_j - lr * (sum_{i: y_i=j} (c_j - f_i)) / (1 + |{i: y_i=j}|).
pub fn center_update(cls: &mut ClassifierState, f: &Tensor, y: &[usize], center_lr: f64) -> Result<()> {
    if !(0.0 < center_lr && center_lr <= 1.0) {
        return Err(Error::invalid("center_lr must lie in (0, 1]"));
    }
    let centers = cls
        .centers
        .as_mut()
        .ok_or_else(|| Error::invalid("center_update requires classifier centers"))?;
    let (k, d) = centers.dims2()?;
    let (n, df) = f.dims2()?;
    if d != df {
        return Err(Error::ShapeMismatch {
            op: "center_update",
            lhs: centers.shape().to_vec(),
            rhs: f.shape().to_vec(),
        });
    }
    check_labels(y, n, k)?;
    let mut residual = Tensor::zeros(&[k, d]);
    let mut counts = vec![0usize; k];
    for i in 0..n {
        counts[y[i]] += 1;
        let row = residual.row_mut(y[i])?;
        for (r, &fv) in row.iter_mut().zip(f.row(i)?) {
            *r -= fv;
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let cj = centers.row(j)?.to_vec();
        let scale = center_lr / (1.0 + counts[j] as f64);
        let row = centers.row_mut(j)?;
        let res = residual.row(j)?.to_vec();
        for ((cv, &c_old), &r) in row.iter_mut().zip(&cj).zip(&res) {
            // residual currently holds -sum f_i; add count * c_j to get
            // sum (c_j - f_i)
            *cv = c_old - scale * (counts[j] as f64 * c_old + r);
        }
    }
    let _ = residual;
    Ok(())
}

/// Congenerous cosine loss: softmax over cos(theta_{w_j, f_i}).
pub fn coco_loss(f: &Tensor, y: &[usize], cls: &ClassifierState) -> Result<LossReport> {
    let (n, d) = f.dims2()?;
    let (k, dw) = cls.weights.dims2()?;
    if d != dw {
        return Err(Error::ShapeMismatch {
            op: "coco_loss",
            lhs: f.shape().to_vec(),
            rhs: cls.weights.shape().to_vec(),
        });
    }
    check_labels(y, n, k)?;
    let w_norms: Vec<f64> = (0..k).map(|j| slice_norm(cls.weights.row(j).unwrap())).collect();
    if let Some(j) = w_norms.iter().position(|&v| v == 0.0) {
        return Err(Error::invalid(format!("zero-norm weight row {j}")));
    }
    let mut logits = Tensor::zeros(&[n, k]);
    let mut f_norms = Vec::with_capacity(n);
    for i in 0..n {
        let fi = f.row(i)?;
        let nf = slice_norm(fi);
        if nf == 0.0 {
            return Err(Error::invalid(format!("zero-norm feature row {i}")));
        }
        let row = logits.row_mut(i)?;
        for j in 0..k {
            row[j] = dot(cls.weights.row(j)?, fi) / (w_norms[j] * nf);
        }
        f_norms.push(nf);
    }
    let mask = correctness_mask(&logits, y)?;
    let (loss, probs, dz) = ce_from_logits(&logits, y)?;
    let mut d_features = Tensor::zeros(&[n, d]);
    let mut d_weights = Tensor::zeros(&[k, d]);
    for i in 0..n {
        let fi = f.row(i)?.to_vec();
        let nf = f_norms[i];
        let gz = dz.row(i)?.to_vec();
        for j in 0..k {
            let g = gz[j];
            if g == 0.0 {
                continue;
            }
            let wj = cls.weights.row(j)?.to_vec();
            let nwj = w_norms[j];
            let cos_t = logits.row(i)?[j];
            let df_row = d_features.row_mut(i)?;
            for ((dv, &fv), &wv) in df_row.iter_mut().zip(&fi).zip(&wj) {
                *dv += g * (wv / (nwj * nf) - cos_t * fv / (nf * nf));
            }
            let dw_row = d_weights.row_mut(j)?;
            for ((dv, &fv), &wv) in dw_row.iter_mut().zip(&fi).zip(&wj) {
                *dv += g * (fv / (nwj * nf) - cos_t * wv / (nwj * nwj));
            }
        }
    }
    Ok(report_from(loss, d_features, d_weights, probs, mask))
}

/// Softmax over features rescaled to norm exactly alpha.
pub fn l2softmax_loss(f: &Tensor, y: &[usize], cls: &ClassifierState, alpha: f64) -> Result<LossReport> {
    if alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    let (n, d) = f.dims2()?;
    let mut fbar = f.clone();
    let mut f_norms = Vec::with_capacity(n);
    for i in 0..n {
        let nf = slice_norm(f.row(i)?);
        if nf == 0.0 {
            return Err(Error::invalid(format!("zero-norm feature row {i}")));
        }
        for v in fbar.row_mut(i)? {
            *v *= alpha / nf;
        }
        f_norms.push(nf);
    }
    let logits = matmul_nt(&fbar, &cls.weights)?;
    let mask = correctness_mask(&logits, y)?;
    let (loss, probs, dz) = ce_from_logits(&logits, y)?;
    let d_weights = matmul_tn(&dz, &fbar)?;
    let d_fbar = matmul(&dz, &cls.weights)?;
    let mut d_features = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let nf = f_norms[i];
        let fi = f.row(i)?.to_vec();
        let gi = d_fbar.row(i)?.to_vec();
        let proj = dot(&gi, &fi) / (nf * nf);
        let row = d_features.row_mut(i)?;
        for ((dv, &gv), &fv) in row.iter_mut().zip(&gi).zip(&fi) {
            *dv = alpha / nf * (gv - proj * fv);
        }
    }
    Ok(report_from(loss, d_features, d_weights, probs, mask))
}

/// Feature-incay value (1/N) sum_i h(i)/(||f_i||^2 + eps) and its
/// gradient. Rows with h=1 get -(2/N) f_i/(||f_i||^2+eps)^2, clipped to
/// per-row norm <= 1; rows with h=0 stay zero.
pub fn feature_incay(f: &Tensor, mask: &[bool], epsilon: f64) -> Result<(f64, Tensor)> {
    if epsilon <= 0.0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let (n, d) = f.dims2()?;
    if mask.len() != n {
        return Err(Error::invalid(format!(
            "mask length {} for {n} samples",
            mask.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[n, d]);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let fi = f.row(i)?;
        let denom = fi.iter().map(|v| v * v).sum::<f64>() + epsilon;
        value += inv_n / denom;
        let coeff = -2.0 * inv_n / (denom * denom);
        let row = grad.row_mut(i)?;
        for (gv, &fv) in row.iter_mut().zip(fi) {
            *gv = coeff * fv;
        }
        let gnorm = slice_norm(row);
        if gnorm > 1.0 {
            for gv in row.iter_mut() {
                *gv /= gnorm;
            }
        }
    }
    Ok((value, grad))
}

/// Dispatches one of the six base losses from the config.
pub fn base_loss(f: &Tensor, y: &[usize], cls: &ClassifierState, config: &LossConfig) -> Result<LossReport> {
    match config.kind {
        LossKind::Softmax => softmax_loss(f, y, cls),
        LossKind::LSoftmax => lsoftmax_loss(f, y, cls, config.margin, false),
        LossKind::ASoftmax => lsoftmax_loss(f, y, cls, config.margin, true),
        LossKind::Center => center_loss(f, y, cls, config.center_lambda),
        LossKind::Coco => coco_loss(f, y, cls),
        LossKind::L2Softmax => l2softmax_loss(f, y, cls, config.alpha),
    }
}

/// The reciprocal-norm composite:
/// total = base + mu * sum_k ||w_k||^2 + lambda * incay, with h(i)
/// taken from the base loss's forward logits and held constant in the
/// gradients. Weight decay over layer weights is handled by the
/// optimizer; the classifier term lives here.
pub fn reciprocal_norm_total(
    f: &Tensor,
    y: &[usize],
    cls: &ClassifierState,
    config: &LossConfig,
) -> Result<LossReport> {
    config.validate()?;
    let mut report = base_loss(f, y, cls, config)?;
    if config.incay_lambda > 0.0 {
        let (value, grad) = feature_incay(f, &report.mask, config.epsilon)?;
        report.incay_loss = value;
        report.d_features.axpy(config.incay_lambda, &grad)?;
    }
    if config.decay_mu > 0.0 {
        let k = cls.num_classes();
        let mut decay = 0.0;
        for j in 0..k {
            decay += cls.weights.row(j)?.iter().map(|v| v * v).sum::<f64>();
        }
        report.decay_loss = decay;
        report.d_weights.axpy(2.0 * config.decay_mu, &cls.weights)?;
    }
    report.total = report.base_loss
        + config.incay_lambda * report.incay_loss
        + config.decay_mu * report.decay_loss;
    Ok(report)
}
