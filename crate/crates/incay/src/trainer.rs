//! SGD-with-momentum training loop: per-iteration incay masking, weight
//! decay, step learning-rate schedule, center updates, and deterministic
//! seeded execution.

use crate::data::{Batches, Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::{Architecture, Network};
use crate::losses::{
    center_update, reciprocal_norm_total, ClassifierState, LossConfig, LossKind,
};
use crate::tensor::{gaussian_init, matmul_nt, slice_norm, SeededRng, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub loss: LossConfig,
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    pub lr_drop_iters: Vec<usize>,
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning-rate drops at 50%, 75% and 90% of the iteration budget.
    pub fn default_lr_drops(total_iters: usize) -> Vec<usize> {
        [total_iters / 2, total_iters * 3 / 4, total_iters * 9 / 10]
            .into_iter()
            .filter(|&i| i > 0 && i < total_iters)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.base_lr <= 0.0 {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let increasing = self
            .lr_drop_iters
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing || self.lr_drop_iters.iter().any(|&i| i >= self.total_iters) {
            return Err(Error::invalid(
                "lr_drop_iters must be strictly increasing and below total_iters",
            ));
        }
        Ok(())
    }
}

/// base_lr / 10^d where d counts the drop points at or before `iter`.
pub fn lr_at(config: &TrainConfig, iter: usize) -> f64 {
    let drops = config.lr_drop_iters.iter().filter(|&&d| d <= iter).count();
    config.base_lr * 10f64.powi(-(drops as i32))
}

/// Momentum buffers, one per parameter tensor, initialized to zero.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
}

/// Classical momentum with decay folded into the gradient:
/// v <- momentum*v + (grad + 2*mu*param); param <- param - lr*v.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    mu: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::ShapeMismatch {
            op: "sgd_momentum_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        let d = if mu > 0.0 { g + 2.0 * mu * *p } else { g };
        *v = momentum * *v + d;
        *p -= lr * *v;
    }
    Ok(())
}

/// The trained artifact: feature extractor plus classifier.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub classifier: ClassifierState,
}

impl Model {
    /// Seeded initialization: layer parameters in layer order, then the
    /// bias-free classifier (and zero centers for the center loss).
    pub fn init(arch: Architecture, loss_kind: LossKind, seed: u64) -> Result<Model> {
        let mut rng = SeededRng::new(seed);
        let network = Network::init(arch, &mut rng)?;
        let d = network.arch.feature_dim;
        let k = network.arch.num_classes;
        let weights = gaussian_init(&mut rng, 0.01, &[k, d])?;
        let classifier = if loss_kind == LossKind::Center {
            ClassifierState::with_centers(weights)?
        } else {
            ClassifierState::new(weights)?
        };
        Ok(Model {
            network,
            classifier,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iter: usize,
    pub split: Split,
    pub base_loss: f64,
    pub incay_loss: f64,
    pub total_loss: f64,
    pub accuracy: f64,
    pub mean_feature_norm: f64,
}

/// Evaluation output for one split, before it is stamped with an
/// iteration number.
#[derive(Debug, Clone)]
pub struct EvalStats {
    pub base_loss: f64,
    pub incay_loss: f64,
    pub total_loss: f64,
    pub accuracy: f64,
    pub mean_feature_norm: f64,
    /// Test-split features, kept only when requested (2-d embeddings).
    pub features: Option<Tensor>,
}

const EVAL_CHUNK: usize = 256;

/// Full-split evaluation: loss terms are sample-weighted means over
/// chunks, accuracy counts strict-argmax-correct samples on inference
/// logits (cosine-normalized weights for A-Softmax and COCO).
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    loss: &LossConfig,
    keep_features: bool,
) -> Result<EvalStats> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let n = data.len();
    let mut base = 0.0;
    let mut incay = 0.0;
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut norm_sum = 0.0;
    let mut kept: Vec<f64> = Vec::new();
    let normalize_weights = matches!(loss.kind, LossKind::ASoftmax | LossKind::Coco);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (xb, yb) = data.gather(&indices)?;
        let (features, _) = model.network.forward(&xb)?;
        let m = end - start;
        for i in 0..m {
            norm_sum += slice_norm(features.row(i)?);
        }
        let report = reciprocal_norm_total(&features, &yb, &model.classifier, loss)?;
        let w = m as f64;
        base += report.base_loss * w;
        incay += report.incay_loss * w;
        total += report.total * w;
        correct += count_correct(&features, &yb, &model.classifier, normalize_weights)?;
        if keep_features {
            kept.extend_from_slice(features.data());
        }
        start = end;
    }
    let inv = 1.0 / n as f64;
    let features = if keep_features {
        Some(Tensor::new(
            vec![n, model.network.arch.feature_dim],
            kept,
        )?)
    } else {
        None
    };
    Ok(EvalStats {
        base_loss: base * inv,
        incay_loss: incay * inv,
        total_loss: total * inv,
        accuracy: correct as f64 * inv,
        mean_feature_norm: norm_sum * inv,
        features,
    })
}

fn count_correct(
    features: &Tensor,
    labels: &[usize],
    cls: &ClassifierState,
    normalize_weights: bool,
) -> Result<usize> {
    let mut logits = matmul_nt(features, &cls.weights)?;
    if normalize_weights {
        let k = cls.num_classes();
        let norms: Vec<f64> = (0..k)
            .map(|j| slice_norm(cls.weights.row(j).unwrap()).max(f64::MIN_POSITIVE))
            .collect();
        let (n, _) = logits.dims2()?;
        for i in 0..n {
            for (v, nw) in logits.row_mut(i)?.iter_mut().zip(&norms) {
                *v /= nw;
            }
        }
    }
    let mask = crate::losses::correctness_mask(&logits, labels)?;
    Ok(mask.iter().filter(|&&m| m).count())
}

/// Runs the minibatch loop, streaming every `MetricsRecord` to the
/// callback as it is produced. Fully deterministic per seed.
pub fn train_with(
    config: &TrainConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    mut on_record: impl FnMut(&MetricsRecord, &Model) -> Result<()>,
) -> Result<(Model, Vec<MetricsRecord>)> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    if train_data.num_classes != config.arch.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, architecture expects {}",
            train_data.num_classes, config.arch.num_classes
        )));
    }
    let mut model = Model::init(config.arch.clone(), config.loss.kind, config.seed)?;
    let batch_rng = SeededRng::new(config.seed ^ 0xB7E1_5162_8AED_2A6A);
    let mut batches = Batches::new(train_data.len(), config.batch_size, batch_rng)?;
    let mut records = Vec::new();

    // velocity layout: layer weights/biases in order, then classifier
    let mut velocities: Vec<Tensor> = Vec::new();
    for p in model.network.params.iter().flatten() {
        velocities.push(Tensor::zeros(p.weights.shape()));
        if let Some(b) = &p.bias {
            velocities.push(Tensor::zeros(b.shape()));
        }
    }
    velocities.push(Tensor::zeros(model.classifier.weights.shape()));
    let mut opt = OptimizerState { velocity: velocities };

    for iter in 1..=config.total_iters {
        let indices = batches.next().expect("batch stream is endless");
        let (xb, yb) = train_data.gather(&indices)?;
        let (features, caches) = model.network.forward(&xb)?;
        let report = reciprocal_norm_total(&features, &yb, &model.classifier, &config.loss)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter,
                base: report.base_loss,
                incay: report.incay_loss,
                decay: report.decay_loss,
            });
        }
        let layer_grads = model.network.backward(&caches, &report.d_features)?;

        let lr = lr_at(config, iter - 1);
        let mu = config.loss.decay_mu;
        let mut slot = 0;
        for (params, grads) in model.network.params.iter_mut().zip(&layer_grads) {
            let (Some(p), Some(g)) = (params, grads) else {
                continue;
            };
            // layer weights carry network-wide decay; biases do not
            sgd_momentum_step(
                &mut p.weights,
                &g.d_weights,
                &mut opt.velocity[slot],
                lr,
                config.momentum,
                mu,
            )?;
            slot += 1;
            if let (Some(b), Some(db)) = (&mut p.bias, &g.d_bias) {
                sgd_momentum_step(b, db, &mut opt.velocity[slot], lr, config.momentum, 0.0)?;
                slot += 1;
            }
        }
        // classifier decay is already inside d_weights (the composite's
        // weight-decay term); do not apply it twice
        sgd_momentum_step(
            &mut model.classifier.weights,
            &report.d_weights,
            &mut opt.velocity[slot],
            lr,
            config.momentum,
            0.0,
        )?;

        if config.loss.kind == LossKind::Center {
            center_update(&mut model.classifier, &features, &yb, config.loss.center_lr)?;
        }

        if config.eval_every > 0 && iter % config.eval_every == 0 {
            let splits: [(&Dataset, Split); 2];
            let one: [(&Dataset, Split); 1];
            let pairs: &[(&Dataset, Split)] = match test_data {
                Some(t) => {
                    splits = [(train_data, Split::Train), (t, Split::Test)];
                    &splits
                }
                None => {
                    one = [(train_data, Split::Train)];
                    &one
                }
            };
            for &(ds, split) in pairs {
                let stats = evaluate(&model, ds, &config.loss, false)?;
                let record = MetricsRecord {
                    iter,
                    split,
                    base_loss: stats.base_loss,
                    incay_loss: stats.incay_loss,
                    total_loss: stats.total_loss,
                    accuracy: stats.accuracy,
                    mean_feature_norm: stats.mean_feature_norm,
                };
                on_record(&record, &model)?;
                records.push(record);
            }
        }
    }
    Ok((model, records))
}

/// `train_with` without a streaming callback.
pub fn train(
    config: &TrainConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
) -> Result<(Model, Vec<MetricsRecord>)> {
    train_with(config, train_data, test_data, |_, _| Ok(()))
}
