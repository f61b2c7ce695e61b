//! Network building blocks: fully-connected, 5x5-style convolution,
//! 2x2/stride-2 max pooling and ReLU, each with forward evaluation and
//! exact backward gradients, plus the two reference architectures.

use crate::error::{Error, Result};
use crate::tensor::{gaussian_init, matmul, matmul_tn, SeededRng, Tensor};

/// Weights (and optional bias) of one parameterized layer. The final
/// classifier is bias-free and lives outside the feature extractor, in
/// `losses::ClassifierState`.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Cross-correlation, stride 1, square kernel.
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    /// 2x2 window, stride 2. Ties break to the first row-major position.
    MaxPool,
    Relu,
    Flatten,
    Fc { out_dim: usize },
}

/// Ordered layer descriptors ending in the penultimate fully-connected
/// layer whose output is the feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    /// Two-conv network with a 2-d feature layer, LeNet-style (no
    /// activation between conv and pool): 1x28x28 -> conv 5x5x20 ->
    /// pool -> conv 5x5x50 -> pool -> flatten(800) -> fc 2. Classifier
    /// maps 2 -> 10 bias-free.
    pub fn mnist2d() -> Architecture {
        Architecture {
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 20,
                    kernel: 5,
                    padding: 0,
                },
                LayerSpec::MaxPool,
                LayerSpec::Conv {
                    out_channels: 50,
                    kernel: 5,
                    padding: 0,
                },
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Fc { out_dim: 2 },
            ],
            feature_dim: 2,
            num_classes: 10,
        }
    }

    /// Flat-input fallback for fast runs: in -> 256 -> relu -> 64 features.
    /// Not a reference network from the literature; used for CI-scale runs.
    pub fn mlp(input_dim: usize, hidden: &[usize], feature_dim: usize, num_classes: usize) -> Architecture {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Fc { out_dim: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Fc { out_dim: feature_dim });
        Architecture {
            input_shape: vec![input_dim],
            layers,
            feature_dim,
            num_classes,
        }
    }

    pub fn mlp_mnist() -> Architecture {
        Architecture::mlp(784, &[256], 64, 10)
    }

    /// Walks the layer list and returns the output shape of every layer
    /// (excluding the batch extent), validating geometry along the way.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, spec) in self.layers.iter().enumerate() {
            shape = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let [_, h, w] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {idx}: conv needs CxHxW input, got {shape:?}"
                        )));
                    };
                    let hp = h + 2 * padding;
                    let wp = w + 2 * padding;
                    if kernel > hp || kernel > wp {
                        return Err(Error::invalid(format!(
                            "layer {idx}: kernel {kernel} larger than padded input {hp}x{wp}"
                        )));
                    }
                    vec![out_channels, hp - kernel + 1, wp - kernel + 1]
                }
                LayerSpec::MaxPool => {
                    let [c, h, w] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {idx}: maxpool needs CxHxW input, got {shape:?}"
                        )));
                    };
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::invalid(format!(
                            "layer {idx}: maxpool requires even extents, got {h}x{w}"
                        )));
                    }
                    vec![c, h / 2, w / 2]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Fc { out_dim } => {
                    let [_in] = shape[..] else {
                        return Err(Error::invalid(format!(
                            "layer {idx}: fc needs flat input, got {shape:?}"
                        )));
                    };
                    vec![out_dim]
                }
            };
            out.push(shape.clone());
        }
        match out.last() {
            Some(last) if last[..] == [self.feature_dim] => Ok(out),
            other => Err(Error::invalid(format!(
                "penultimate output {other:?} does not match feature_dim {}",
                self.feature_dim
            ))),
        }
    }
}

/// y = x·W + b with exact transposed-product gradients.
pub fn fc_layer(
    x: &Tensor,
    p: &LayerParams,
    upstream: Option<&Tensor>,
) -> Result<(Tensor, Option<(Tensor, Tensor, Tensor)>)> {
    let (n, d_in) = x.dims2()?;
    let (w_in, d_out) = p.weights.dims2()?;
    if d_in != w_in {
        return Err(Error::ShapeMismatch {
            op: "fc_layer",
            lhs: x.shape().to_vec(),
            rhs: p.weights.shape().to_vec(),
        });
    }
    let mut y = matmul(x, &p.weights)?;
    if let Some(b) = &p.bias {
        if b.len() != d_out {
            return Err(Error::ShapeMismatch {
                op: "fc_layer bias",
                lhs: vec![d_out],
                rhs: b.shape().to_vec(),
            });
        }
        for row in 0..n {
            for (v, &bj) in y.row_mut(row)?.iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
    }
    let grads = match upstream {
        None => None,
        Some(up) => {
            if up.shape() != [n, d_out] {
                return Err(Error::ShapeMismatch {
                    op: "fc_layer upstream",
                    lhs: vec![n, d_out],
                    rhs: up.shape().to_vec(),
                });
            }
            let dx = crate::tensor::matmul_nt(up, &p.weights)?;
            let dw = matmul_tn(x, up)?;
            let mut db = vec![0.0; d_out];
            for row in 0..n {
                for (s, &g) in db.iter_mut().zip(up.row(row)?) {
                    *s += g;
                }
            }
            Some((dx, dw, Tensor::new(vec![d_out], db)?))
        }
    };
    Ok((y, grads))
}

fn conv_geometry(x: &Tensor, p: &LayerParams, padding: usize) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let [n, c, h, w] = x.shape()[..] else {
        return Err(Error::invalid(format!(
            "conv2d needs NxCxHxW input, got {:?}",
            x.shape()
        )));
    };
    let [f, kc, kh, kw] = p.weights.shape()[..] else {
        return Err(Error::invalid(format!(
            "conv2d needs FxCxKxK kernels, got {:?}",
            p.weights.shape()
        )));
    };
    if kc != c || kh != kw {
        return Err(Error::ShapeMismatch {
            op: "conv2d_layer",
            lhs: x.shape().to_vec(),
            rhs: p.weights.shape().to_vec(),
        });
    }
    let k = kh;
    let hp = h + 2 * padding;
    if k > hp || k > w + 2 * padding {
        return Err(Error::invalid(format!(
            "conv2d kernel {k} larger than padded input {hp}x{}",
            w + 2 * padding
        )));
    }
    let ho = hp - k + 1;
    let wo = w + 2 * padding - k + 1;
    Ok((n, c, h, w, f, k, ho, wo))
}

/// Lowers NxCxHxW into a (N·Ho·Wo) x (C·k·k) patch matrix.
fn im2col(x: &Tensor, c: usize, h: usize, w: usize, k: usize, padding: usize, ho: usize, wo: usize) -> Tensor {
    let n = x.shape()[0];
    let inner = c * k * k;
    let mut cols = vec![0.0; n * ho * wo * inner];
    let xd = x.data();
    for img in 0..n {
        let xbase = img * c * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((img * ho + oy) * wo + ox) * inner;
                let mut idx = row;
                for ch in 0..c {
                    let chbase = xbase + ch * h * w;
                    for ky in 0..k {
                        let iy = (oy + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            idx += k;
                            continue;
                        }
                        let rowbase = chbase + iy as usize * w;
                        for kx in 0..k {
                            let ix = (ox + kx) as isize - padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                cols[idx] = xd[rowbase + ix as usize];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n * ho * wo, inner], cols).expect("im2col shape")
}

/// Scatter-adds a patch-matrix gradient back into input layout.
fn col2im(dcols: &Tensor, n: usize, c: usize, h: usize, w: usize, k: usize, padding: usize, ho: usize, wo: usize) -> Tensor {
    let inner = c * k * k;
    let mut dx = vec![0.0; n * c * h * w];
    let dd = dcols.data();
    for img in 0..n {
        let xbase = img * c * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((img * ho + oy) * wo + ox) * inner;
                let mut idx = row;
                for ch in 0..c {
                    let chbase = xbase + ch * h * w;
                    for ky in 0..k {
                        let iy = (oy + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            idx += k;
                            continue;
                        }
                        let rowbase = chbase + iy as usize * w;
                        for kx in 0..k {
                            let ix = (ox + kx) as isize - padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dx[rowbase + ix as usize] += dd[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx).expect("col2im shape")
}

/// Converts (N·Ho·Wo) x F row-major into NxFxHoxWo layout.
fn rows_to_nchw(mat: &Tensor, n: usize, f: usize, ho: usize, wo: usize) -> Tensor {
    let md = mat.data();
    let mut out = vec![0.0; n * f * ho * wo];
    for img in 0..n {
        for p in 0..ho * wo {
            let row = (img * ho * wo + p) * f;
            for ch in 0..f {
                out[(img * f + ch) * ho * wo + p] = md[row + ch];
            }
        }
    }
    Tensor::new(vec![n, f, ho, wo], out).expect("rows_to_nchw shape")
}

fn nchw_to_rows(x: &Tensor, n: usize, f: usize, ho: usize, wo: usize) -> Tensor {
    let xd = x.data();
    let mut out = vec![0.0; n * f * ho * wo];
    for img in 0..n {
        for ch in 0..f {
            let base = (img * f + ch) * ho * wo;
            for p in 0..ho * wo {
                out[(img * ho * wo + p) * f + ch] = xd[base + p];
            }
        }
    }
    Tensor::new(vec![n * ho * wo, f], out).expect("nchw_to_rows shape")
}

/// Valid cross-correlation with stride 1 plus per-filter bias.
pub fn conv2d_layer(
    x: &Tensor,
    p: &LayerParams,
    padding: usize,
    upstream: Option<&Tensor>,
) -> Result<(Tensor, Option<(Tensor, Tensor, Tensor)>)> {
    let (n, c, h, w, f, k, ho, wo) = conv_geometry(x, p, padding)?;
    let cols = im2col(x, c, h, w, k, padding, ho, wo);
    let wmat = p.weights.clone().reshape(vec![f, c * k * k])?;
    let mut out_rows = crate::tensor::matmul_nt(&cols, &wmat)?;
    if let Some(b) = &p.bias {
        for row in 0..n * ho * wo {
            for (v, &bf) in out_rows.row_mut(row)?.iter_mut().zip(b.data()) {
                *v += bf;
            }
        }
    }
    let y = rows_to_nchw(&out_rows, n, f, ho, wo);
    let grads = match upstream {
        None => None,
        Some(up) => {
            if up.shape() != [n, f, ho, wo] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d upstream",
                    lhs: vec![n, f, ho, wo],
                    rhs: up.shape().to_vec(),
                });
            }
            let up_rows = nchw_to_rows(up, n, f, ho, wo);
            let dw = matmul_tn(&up_rows, &cols)?.reshape(vec![f, c, k, k])?;
            let mut db = vec![0.0; f];
            for row in 0..n * ho * wo {
                for (s, &g) in db.iter_mut().zip(up_rows.row(row)?) {
                    *s += g;
                }
            }
            let dcols = matmul(&up_rows, &wmat)?;
            let dx = col2im(&dcols, n, c, h, w, k, padding, ho, wo);
            Some((dx, dw, Tensor::new(vec![f], db)?))
        }
    };
    Ok((y, grads))
}

/// 2x2 max pooling with stride 2; returns the pooled tensor and the flat
/// argmax index of every window. Backward scatters upstream to those
/// positions.
pub fn maxpool_layer(x: &Tensor, upstream: Option<&Tensor>) -> Result<(Tensor, Vec<usize>, Option<Tensor>)> {
    let [n, c, h, w] = x.shape()[..] else {
        return Err(Error::invalid(format!(
            "maxpool needs NxCxHxW input, got {:?}",
            x.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool requires even extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; n * c * ho * wo];
    let mut argmax = vec![0usize; n * c * ho * wo];
    for plane in 0..n * c {
        let pb = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let candidates = [
                    pb + (2 * oy) * w + 2 * ox,
                    pb + (2 * oy) * w + 2 * ox + 1,
                    pb + (2 * oy + 1) * w + 2 * ox,
                    pb + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &cand in &candidates[1..] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                let o = plane * ho * wo + oy * wo + ox;
                out[o] = xd[best];
                argmax[o] = best;
            }
        }
    }
    let y = Tensor::new(vec![n, c, ho, wo], out)?;
    let dx = match upstream {
        None => None,
        Some(up) => {
            if up.shape() != y.shape() {
                return Err(Error::ShapeMismatch {
                    op: "maxpool upstream",
                    lhs: y.shape().to_vec(),
                    rhs: up.shape().to_vec(),
                });
            }
            let mut dx = vec![0.0; n * c * h * w];
            for (o, &src) in argmax.iter().enumerate() {
                dx[src] += up.data()[o];
            }
            Some(Tensor::new(vec![n, c, h, w], dx)?)
        }
    };
    Ok((y, argmax, dx))
}

/// Elementwise max(x, 0); the subgradient at exactly 0 is taken as 0.
pub fn relu_layer(x: &Tensor, upstream: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    let dx = match upstream {
        None => None,
        Some(up) => {
            if up.shape() != x.shape() {
                return Err(Error::ShapeMismatch {
                    op: "relu upstream",
                    lhs: x.shape().to_vec(),
                    rhs: up.shape().to_vec(),
                });
            }
            let mut d = up.clone();
            for (g, &v) in d.data_mut().iter_mut().zip(x.data()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
            Some(d)
        }
    };
    Ok((y, dx))
}

/// Per-layer state kept from the forward pass for the backward pass.
pub enum LayerCache {
    /// The lowered patch matrix is kept so backward reuses it instead of
    /// re-running im2col and the forward product.
    Conv { input_shape: Vec<usize>, cols: Tensor },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Relu { input: Tensor },
    Flatten { input_shape: Vec<usize> },
    Fc { input: Tensor },
}

/// Gradients for one parameterized layer (None for pool/relu/flatten).
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Tensor,
    pub d_bias: Option<Tensor>,
}

/// The feature extractor: an architecture plus per-layer parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<Option<LayerParams>>,
}

impl Network {
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Network> {
        arch.layer_shapes()?;
        let mut shape = arch.input_shape.clone();
        let mut params = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let c = shape[0];
                    let weights = gaussian_init(rng, 0.01, &[out_channels, c, kernel, kernel])?;
                    params.push(Some(LayerParams {
                        weights,
                        bias: Some(Tensor::zeros(&[out_channels])),
                    }));
                    shape = vec![
                        out_channels,
                        shape[1] + 2 * padding - kernel + 1,
                        shape[2] + 2 * padding - kernel + 1,
                    ];
                }
                LayerSpec::MaxPool => {
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                    params.push(None);
                }
                LayerSpec::Relu => params.push(None),
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                    params.push(None);
                }
                LayerSpec::Fc { out_dim } => {
                    let d_in = shape[0];
                    let weights = gaussian_init(rng, 0.01, &[d_in, out_dim])?;
                    params.push(Some(LayerParams {
                        weights,
                        bias: Some(Tensor::zeros(&[out_dim])),
                    }));
                    shape = vec![out_dim];
                }
            }
        }
        Ok(Network { arch, params })
    }

    /// Forward pass through all layers, returning the Nxfeature_dim
    /// feature matrix and the caches needed for `backward`.
    pub fn forward(&self, x_batch: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let n = x_batch.shape()[0];
        if x_batch.shape()[1..] != self.arch.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "forward input",
                lhs: self.arch.input_shape.clone(),
                rhs: x_batch.shape()[1..].to_vec(),
            });
        }
        let mut cur = x_batch.clone();
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        for (spec, params) in self.arch.layers.iter().zip(&self.params) {
            cur = match (*spec, params) {
                (LayerSpec::Conv { padding, .. }, Some(p)) => {
                    let (nn, c, h, w, f, k, ho, wo) = conv_geometry(&cur, p, padding)?;
                    let cols = im2col(&cur, c, h, w, k, padding, ho, wo);
                    let wmat = p.weights.clone().reshape(vec![f, c * k * k])?;
                    let mut out_rows = crate::tensor::matmul_nt(&cols, &wmat)?;
                    if let Some(b) = &p.bias {
                        for row in 0..nn * ho * wo {
                            for (v, &bf) in out_rows.row_mut(row)?.iter_mut().zip(b.data()) {
                                *v += bf;
                            }
                        }
                    }
                    let y = rows_to_nchw(&out_rows, nn, f, ho, wo);
                    caches.push(LayerCache::Conv {
                        input_shape: cur.shape().to_vec(),
                        cols,
                    });
                    y
                }
                (LayerSpec::MaxPool, _) => {
                    let input_shape = cur.shape().to_vec();
                    let (y, argmax, _) = maxpool_layer(&cur, None)?;
                    caches.push(LayerCache::Pool { input_shape, argmax });
                    y
                }
                (LayerSpec::Relu, _) => {
                    let (y, _) = relu_layer(&cur, None)?;
                    caches.push(LayerCache::Relu { input: cur });
                    y
                }
                (LayerSpec::Flatten, _) => {
                    let input_shape = cur.shape().to_vec();
                    let flat: usize = input_shape[1..].iter().product();
                    let y = cur.reshape(vec![n, flat])?;
                    caches.push(LayerCache::Flatten { input_shape });
                    y
                }
                (LayerSpec::Fc { .. }, Some(p)) => {
                    let (y, _) = fc_layer(&cur, p, None)?;
                    caches.push(LayerCache::Fc { input: cur });
                    y
                }
                _ => return Err(Error::invalid("layer parameters missing")),
            };
        }
        Ok((cur, caches))
    }

    /// Backpropagates a dL/d_features matrix through the cached forward
    /// pass; returns per-layer parameter gradients aligned with `params`.
    pub fn backward(&self, caches: &[LayerCache], d_features: &Tensor) -> Result<Vec<Option<LayerGrads>>> {
        let mut grads: Vec<Option<LayerGrads>> = (0..self.arch.layers.len()).map(|_| None).collect();
        let mut upstream = d_features.clone();
        for idx in (0..self.arch.layers.len()).rev() {
            let spec = self.arch.layers[idx];
            upstream = match (&caches[idx], &self.params[idx]) {
                (LayerCache::Conv { input_shape, cols }, Some(p)) => {
                    let LayerSpec::Conv { padding, .. } = spec else {
                        unreachable!()
                    };
                    let [n, c, h, w] = input_shape[..] else {
                        return Err(Error::invalid("conv cache holds a non-NCHW shape"));
                    };
                    let [f, _, k, _] = p.weights.shape()[..] else {
                        return Err(Error::invalid("conv weights are not FxCxKxK"));
                    };
                    let [un, uf, ho, wo] = upstream.shape()[..] else {
                        return Err(Error::invalid("conv upstream is not NxFxHoxWo"));
                    };
                    if un != n || uf != f {
                        return Err(Error::ShapeMismatch {
                            op: "conv backward upstream",
                            lhs: input_shape.clone(),
                            rhs: upstream.shape().to_vec(),
                        });
                    }
                    let up_rows = nchw_to_rows(&upstream, n, f, ho, wo);
                    let dw = matmul_tn(&up_rows, cols)?.reshape(p.weights.shape().to_vec())?;
                    let mut db = vec![0.0; f];
                    for row in 0..n * ho * wo {
                        for (s, &g) in db.iter_mut().zip(up_rows.row(row)?) {
                            *s += g;
                        }
                    }
                    let wmat = p.weights.clone().reshape(vec![f, c * k * k])?;
                    let dcols = matmul(&up_rows, &wmat)?;
                    let dx = col2im(&dcols, n, c, h, w, k, padding, ho, wo);
                    grads[idx] = Some(LayerGrads {
                        d_weights: dw,
                        d_bias: Some(Tensor::new(vec![f], db)?),
                    });
                    dx
                }
                (LayerCache::Pool { input_shape, argmax }, _) => {
                    let mut dx = vec![0.0; input_shape.iter().product()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += upstream.data()[o];
                    }
                    Tensor::new(input_shape.clone(), dx)?
                }
                (LayerCache::Relu { input }, _) => {
                    let (_, dx) = relu_layer(input, Some(&upstream))?;
                    dx.expect("upstream given")
                }
                (LayerCache::Flatten { input_shape }, _) => upstream.reshape(input_shape.clone())?,
                (LayerCache::Fc { input }, Some(p)) => {
                    let (_, g) = fc_layer(input, p, Some(&upstream))?;
                    let (dx, dw, db) = g.expect("upstream given");
                    grads[idx] = Some(LayerGrads {
                        d_weights: dw,
                        d_bias: Some(db),
                    });
                    dx
                }
                _ => return Err(Error::invalid("layer parameters missing")),
            };
        }
        Ok(grads)
    }
}

/// Composition of all layers up to and including the penultimate
/// fully-connected layer.
pub fn forward_features(net: &Network, x_batch: &Tensor) -> Result<Tensor> {
    Ok(net.forward(x_batch)?.0)
}
