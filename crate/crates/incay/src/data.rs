//! MNIST IDX ingestion, mean-image preprocessing, deterministic shuffled
//! batching, and a synthetic Gaussian-blob generator for fast tests.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Images plus labels. Image layout is Nx1xHxW for IDX loads and NxD for
/// synthetic flat data; pixel values are in [0,1] after load and
/// mean-centered after `preprocess`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given sample indices into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let sample_len: usize = self.images.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * sample_len..(i + 1) * sample_len]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.images.shape()[1..]);
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!(
                "cannot truncate {} samples to {n}",
                self.len()
            )));
        }
        let indices: Vec<usize> = (0..n).collect();
        let (images, labels) = self.gather(&indices)?;
        Ok(Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    /// Flattens NxCxHxW images into NxD rows.
    pub fn flattened(mut self) -> Result<Dataset> {
        let n = self.images.shape()[0];
        let d: usize = self.images.shape()[1..].iter().product();
        self.images = self.images.reshape(vec![n, d])?;
        Ok(self)
    }
}

struct IdxReader {
    path: PathBuf,
    bytes: Vec<u8>,
    pos: usize,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bytes = if path.extension().is_some_and(|e| e == "gz") {
            let mut out = Vec::new();
            flate2::read::GzDecoder::new(&raw[..])
                .read_to_end(&mut out)
                .map_err(|e| Error::MalformedIdx {
                    path: path.to_path_buf(),
                    reason: format!("gzip decode failed: {e}"),
                    offset: 0,
                })?;
            out
        } else {
            raw
        };
        Ok(IdxReader {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        })
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::MalformedIdx {
            path: self.path.clone(),
            reason: reason.into(),
            offset: self.pos as u64,
        }
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(self.err("truncated header"));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, expected: usize) -> Result<&[u8]> {
        let avail = self.bytes.len() - self.pos;
        if avail < expected {
            return Err(self.err(format!(
                "truncated payload: expected {expected} bytes, found {avail}"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + expected];
        Ok(slice)
    }
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255 into [0,1];
/// gzip-compressed files are accepted when the name ends in `.gz`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = IdxReader::open(images_path)?;
    let magic = img.read_u32()?;
    if magic != IDX_IMAGE_MAGIC {
        img.pos = 0;
        return Err(img.err(format!("bad magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")));
    }
    let n = img.read_u32()? as usize;
    let h = img.read_u32()? as usize;
    let w = img.read_u32()? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(img.err(format!("degenerate dimensions {n}x{h}x{w}")));
    }
    let pixels = img.payload(n * h * w)?;
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data)?;

    let mut lab = IdxReader::open(labels_path)?;
    let magic = lab.read_u32()?;
    if magic != IDX_LABEL_MAGIC {
        lab.pos = 0;
        return Err(lab.err(format!("bad magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}")));
    }
    let ln = lab.read_u32()? as usize;
    if ln != n {
        return Err(lab.err(format!("label count {ln} does not match image count {n}")));
    }
    let labels: Vec<usize> = lab.payload(ln)?.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(lab.err(format!("label value {bad} out of range 0..=9")));
    }
    Ok(Dataset {
        images,
        labels,
        num_classes: 10,
        split: Split::Train,
    })
}

/// Serializes images back to IDX bytes (u8 quantized by x*255).
pub fn idx_image_bytes(images: &Tensor) -> Result<Vec<u8>> {
    let [n, _, h, w] = images.shape()[..] else {
        return Err(Error::invalid("idx_image_bytes needs Nx1xHxW images"));
    };
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for dim in [n, h, w] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for &v in images.data() {
        out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn idx_label_bytes(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Computes the mean image of the training split and subtracts it from
/// the training split and every other split. Returns the mean image.
pub fn preprocess(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<Tensor> {
    let sample_shape = train.images.shape()[1..].to_vec();
    let sample_len: usize = sample_shape.iter().product();
    let n = train.len();
    let mut mean = vec![0.0; sample_len];
    for i in 0..n {
        let row = &train.images.data()[i * sample_len..(i + 1) * sample_len];
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let subtract = |ds: &mut Dataset| -> Result<()> {
        if ds.images.shape()[1..] != sample_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "preprocess",
                lhs: sample_shape.clone(),
                rhs: ds.images.shape()[1..].to_vec(),
            });
        }
        for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
            *v -= mean[i % sample_len];
        }
        Ok(())
    };
    subtract(train)?;
    for ds in others {
        subtract(ds)?;
    }
    Tensor::new(sample_shape, mean)
}

/// Endless minibatch index stream: every epoch is a fresh Fisher-Yates
/// permutation of the dataset; the final short batch of an epoch is
/// emitted before wrapping.
pub struct Batches {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: SeededRng,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, rng: SeededRng) -> Result<Batches> {
        if n == 0 {
            return Err(Error::invalid("cannot batch an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let mut b = Batches {
            order: (0..n).collect(),
            pos: 0,
            batch_size,
            rng,
        };
        b.rng.shuffle(&mut b.order);
        Ok(b)
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

/// K isotropic Gaussian blobs in D dimensions. Class j (1-based) sits at
/// 4 * e_{ceil(j/2)} * (-1)^j, so K <= 2D classes fit with pairwise
/// angles >= 90 degrees.
pub fn synth_gaussian_blobs(
    k: usize,
    d: usize,
    n_per_class: usize,
    spread: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if k < 2 || k > 2 * d {
        return Err(Error::invalid(format!(
            "need 2 <= K <= 2D for the blob construction, got K={k}, D={d}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be >= 1"));
    }
    let n = k * n_per_class;
    let mut data = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        let axis = class / 2;
        let sign = if class % 2 == 1 { 4.0 } else { -4.0 };
        for s in 0..n_per_class {
            let row = (class * n_per_class + s) * d;
            for dim in 0..d {
                let center = if dim == axis { sign } else { 0.0 };
                data[row + dim] = center + spread * rng.normal();
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, d], data)?,
        labels,
        num_classes: k,
        split: Split::Train,
    })
}
