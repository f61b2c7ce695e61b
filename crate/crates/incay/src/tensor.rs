//! Dense row-major f64 tensors, a seeded deterministic RNG, and the
//! central-difference gradient oracle used by every gradient test.

use crate::error::{Error, Result};

/// Dense numeric array with an explicit shape. Data is stored flat in
/// row-major order; `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || cols == 0 {
            return Err(Error::invalid("from_rows requires a non-empty matrix"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::invalid(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (m, n) = self.dims2()?;
        if i >= m {
            return Err(Error::invalid(format!("row {i} out of range for {m} rows")));
        }
        Ok(&self.data[i * n..(i + 1) * n])
    }

    pub fn row_mut(&mut self, i: usize) -> Result<&mut [f64]> {
        let (m, n) = self.dims2()?;
        if i >= m {
            return Err(Error::invalid(format!("row {i} out of range for {m} rows")));
        }
        Ok(&mut self.data[i * n..(i + 1) * n])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "axpy",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a (m×k) · b (k×n)`, accumulated in row-major order so results are
/// bit-for-bit reproducible run to run.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.to_vec(),
            rhs: b.shape.to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2()?;
    let (n, kb) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape.to_vec(),
            rhs: b.shape.to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * ka..(j + 1) * ka];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ka, m) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape.to_vec(),
            rhs: b.shape.to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    for k in 0..ka {
        let arow = &a.data[k * m..(k + 1) * m];
        let brow = &b.data[k * n..(k + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Euclidean norm of the whole tensor.
pub fn l2_norm(v: &Tensor) -> f64 {
    v.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of one row of a rank-2 tensor.
pub fn l2_norm_row(v: &Tensor, row: usize) -> Result<f64> {
    Ok(slice_norm(v.row(row)?))
}

pub(crate) fn slice_norm(s: &[f64]) -> f64 {
    s.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Deterministic 64-bit generator (splitmix64). The same seed yields the
/// same stream on every platform; this is the only randomness source in
/// the crate.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Uniform Glorot initialization on [-b, b] with b = sqrt(6/(fan_in+fan_out)).
pub fn xavier_init(rng: &mut SeededRng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid(format!(
            "xavier_init requires positive fans, got fan_in={fan_in}, fan_out={fan_out}"
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Zero-mean Gaussian initialization with the given standard
/// deviation, via the Box–Muller transform.
pub fn gaussian_init(rng: &mut SeededRng, std: f64, shape: &[usize]) -> Result<Tensor> {
    if !(std > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian_init requires positive std, got {std}"
        )));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u1: f64 = rng.uniform(f64::MIN_POSITIVE, 1.0);
            let u2: f64 = rng.uniform(0.0, 1.0);
            std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Central-difference gradient of a scalar function, coordinate by
/// coordinate: (f(x+h·e_i) - f(x-h·e_i)) / 2h.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite evaluation at coordinate {i}: f+={fp}, f-={fm}"
            )));
        }
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Default step for the gradient oracle.
pub const FD_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_scalar() {
        let a = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_hand_evaluated() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let mut rng = SeededRng::new(5);
        let a = xavier_init(&mut rng, 3, 4, &[3, 4]).unwrap();
        let b = xavier_init(&mut rng, 4, 5, &[4, 5]).unwrap();
        let bt = {
            let (k, n) = b.dims2().unwrap();
            let mut data = vec![0.0; k * n];
            for i in 0..k {
                for j in 0..n {
                    data[j * k + i] = b.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, k], data).unwrap()
        };
        let plain = matmul(&a, &b).unwrap();
        let nt = matmul_nt(&a, &bt).unwrap();
        for (x, y) in plain.data().iter().zip(nt.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = {
            let mut data = vec![0.0; 12];
            for i in 0..3 {
                for j in 0..4 {
                    data[j * 3 + i] = a.data()[i * 4 + j];
                }
            }
            Tensor::new(vec![4, 3], data).unwrap()
        };
        let tn = matmul_tn(&at, &b).unwrap();
        for (x, y) in plain.data().iter().zip(tn.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_norm_values() {
        assert_eq!(l2_norm(&Tensor::vector(&[3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&Tensor::vector(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(l2_norm(&Tensor::vector(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn l2_norm_row_bounds() {
        let t = Tensor::from_rows(&[&[3.0, 4.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(l2_norm_row(&t, 0).unwrap(), 5.0);
        assert!(l2_norm_row(&t, 2).is_err());
    }

    #[test]
    fn xavier_bound_and_mean() {
        let mut rng = SeededRng::new(42);
        let t = xavier_init(&mut rng, 3, 3, &[100, 100]).unwrap();
        // bound = sqrt(6/6) = 1
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn xavier_deterministic_and_rejects_zero_fan() {
        let a = xavier_init(&mut SeededRng::new(9), 4, 4, &[4, 4]).unwrap();
        let b = xavier_init(&mut SeededRng::new(9), 4, 4, &[4, 4]).unwrap();
        assert_eq!(a, b);
        assert!(xavier_init(&mut SeededRng::new(9), 0, 4, &[4]).is_err());
    }

    #[test]
    fn gaussian_init_moments_and_determinism() {
        let t = gaussian_init(&mut SeededRng::new(5), 0.01, &[200, 200]).unwrap();
        let n = t.data().len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() < 1e-3, "std {}", var.sqrt());
        let u = gaussian_init(&mut SeededRng::new(5), 0.01, &[200, 200]).unwrap();
        assert_eq!(t, u);
        assert!(gaussian_init(&mut SeededRng::new(5), 0.0, &[2]).is_err());
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = SeededRng::new(123);
        let mut b = SeededRng::new(123);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn finite_diff_quadratic() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, FD_STEP).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_and_sine() {
        let x = Tensor::vector(&[0.3, -0.7]);
        let g = finite_diff_grad(|_| 3.5, &x, FD_STEP).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let x0 = Tensor::vector(&[0.0]);
        let g = finite_diff_grad(|t| t.data()[0].sin(), &x0, FD_STEP).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn finite_diff_rejects_nonfinite() {
        // both probes of sqrt around -1 are NaN
        let x = Tensor::vector(&[-1.0]);
        assert!(finite_diff_grad(|t| t.data()[0].sqrt(), &x, FD_STEP).is_err());
    }
}
