//! Dense linear algebra and the small set of numerical kernels the encoder is
//! built from: softmax, ReLU, L2 normalization, batch normalization, seeded
//! Gaussian sampling and a central-difference gradient checker.
//!
//! Everything is `f64`. Matrices are row-major and summation order is fixed
//! so results are bitwise reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero by [`l2_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }
}

/// Standard product `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("lhs cols == rhs rows ({})", a.cols),
            format!("{}x{} × {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for p in 0..a.cols {
            let aip = a.data[i * a.cols + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * b.cols..(p + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// `aᵀ × b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("equal row counts ({})", a.rows),
            b.rows,
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for p in 0..a.rows {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a × bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("equal column counts ({})", a.cols),
            b.cols,
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a.row(i), b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn inner_product(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("inner_product", u.len(), v.len()));
    }
    Ok(dot(u, v))
}

/// Max-subtracted softmax. Empty input yields an empty output.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    out
}

/// Returns `v / ‖v‖₂`, or `v` unchanged (with a warning) when the norm is
/// at or below [`NORM_FLOOR`].
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let (out, norm) = l2_normalize_parts(v);
    if norm.is_none() {
        log::warn!("l2_normalize: near-zero norm, returning input unchanged");
    }
    out
}

/// Like [`l2_normalize`] but reports the norm that was divided out, or
/// `None` when the guard fired.
pub(crate) fn l2_normalize_parts(v: &[f64]) -> (Vec<f64>, Option<f64>) {
    let norm = dot(v, v).sqrt();
    if norm > NORM_FLOOR {
        (v.iter().map(|x| x / norm).collect(), Some(norm))
    } else {
        (v.to_vec(), None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

/// Intermediates of a train-mode batch-norm pass needed for backprop.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized activations before the affine transform.
    pub xhat: Vec<Vec<f64>>,
    /// `1 / sqrt(var + eps)` per feature.
    pub inv_std: Vec<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check_width(&self, x: &[Vec<f64>]) -> Result<()> {
        let h = self.features();
        match x.iter().find(|r| r.len() != h) {
            Some(r) => Err(Error::shape("batchnorm", h, r.len())),
            None => Ok(()),
        }
    }

    /// Eval-mode normalization with the running statistics. Pure.
    pub fn eval(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_width(x)?;
        Ok(x.iter().map(|row| self.eval_one(row)).collect())
    }

    pub(crate) fn eval_one(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                let inv = 1.0 / (self.running_var[j] + self.epsilon).sqrt();
                self.gamma[j] * (v - self.running_mean[j]) * inv + self.beta[j]
            })
            .collect()
    }

    /// Train-mode normalization with batch statistics. Updates the running
    /// mean and (unbiased) running variance with the configured momentum.
    pub fn train(&mut self, x: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BatchNormCache)> {
        let b = x.len();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        self.check_width(x)?;
        let h = self.features();
        let bf = b as f64;
        let mut mean = vec![0.0; h];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= bf;
        }
        let mut var = vec![0.0; h];
        for row in x {
            for j in 0..h {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= bf;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let xhat: Vec<Vec<f64>> = x
            .iter()
            .map(|row| (0..h).map(|j| (row[j] - mean[j]) * inv_std[j]).collect())
            .collect();
        let out = xhat
            .iter()
            .map(|xr| (0..h).map(|j| self.gamma[j] * xr[j] + self.beta[j]).collect())
            .collect();

        let m = self.momentum;
        let unbias = bf / (bf - 1.0);
        for j in 0..h {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * unbias;
        }
        Ok((out, BatchNormCache { xhat, inv_std }))
    }
}

/// Mode-dispatching batch normalization.
pub fn batchnorm(x: &[Vec<f64>], state: &mut BatchNormState, mode: Mode) -> Result<Vec<Vec<f64>>> {
    match mode {
        Mode::Train => state.train(x).map(|(out, _)| out),
        Mode::Eval => state.eval(x),
    }
}

/// Seeded random source. ChaCha8 keeps the stream identical across
/// platforms; normals come from Box–Muller with the spare value cached.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Derives an independent generator; used to give sub-tasks their own
    /// stream without disturbing the parent's sequence layout.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.gen::<u64>())
    }
}

/// One draw from `N(mean, std²)`.
pub fn gaussian(rng: &mut SeededRng, mean: f64, std: f64) -> f64 {
    mean + std * rng.standard_normal()
}

/// Central-difference gradient check.
///
/// Perturbs each coordinate of `params` by `±h`, and returns the largest
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::shape("grad_check", params.len(), analytic.len()));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!("grad_check step must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
