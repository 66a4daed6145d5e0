//! Dense kernels, activations, seeded initialization and a finite-difference
//! gradient checker.
//!
//! Everything is `f64` and row-major. Hot loops inside the learning modules
//! use the crate-private slice kernels; the public `Matrix` methods check
//! shapes and return [`Error::Shape`] on mismatch.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        matvec_prefix(&self.data, self.cols, x, &mut out);
        Ok(out)
    }

    /// `selfᵀ · y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "transpose of {}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        matvec_t_prefix_acc(&self.data, self.cols, y, &mut out);
        Ok(out)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::NumericFault(format!(
                "{what}: non-finite value {} at ({}, {})",
                self.data[pos],
                pos / self.cols.max(1),
                pos % self.cols.max(1)
            ))),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = A[:, ..x.len()] · x` for a row-major `A` with `stride` columns.
///
/// Only the first `x.len()` columns take part, which lets one relation
/// projection serve layers whose inputs are narrower than the entity space.
pub(crate) fn matvec_prefix(a: &[f64], stride: usize, x: &[f64], out: &mut [f64]) {
    let c = x.len();
    debug_assert!(c <= stride);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * stride..i * stride + c];
        *o = dot(row, x);
    }
}

/// `out += A[:, ..out.len()]ᵀ · y`
pub(crate) fn matvec_t_prefix_acc(a: &[f64], stride: usize, y: &[f64], out: &mut [f64]) {
    let c = out.len();
    debug_assert!(c <= stride);
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let row = &a[i * stride..i * stride + c];
        axpy(yi, row, out);
    }
}

/// `A[:, ..x.len()] += alpha · y xᵀ`
pub(crate) fn add_outer_prefix(a: &mut [f64], stride: usize, alpha: f64, y: &[f64], x: &[f64]) {
    let c = x.len();
    for (i, &yi) in y.iter().enumerate() {
        let s = alpha * yi;
        if s == 0.0 {
            continue;
        }
        let row = &mut a[i * stride..i * stride + c];
        axpy(s, x, row);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow; equals `-ln σ(-x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NumericFault(format!("softmax input {bad}")));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Seeded random stream backed by ChaCha8, whose output depends only on the
/// seed and stream number.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// An independent stream under the same seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng(inner)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n as u64) as usize
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}

/// Matrix with i.i.d. `N(0, std²)` entries.
pub fn gaussian_init(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Config(format!(
            "initialization std must be positive, got {std}"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| std * rng.standard_normal())
        .collect();
    Ok(Matrix { rows, cols, data })
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// `loss` must be pure: it is evaluated twice at `params` up front and any
/// difference is reported as [`Error::Oracle`].
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Config("finite-difference epsilon must be positive".into()));
    }
    let first = loss(params);
    let second = loss(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::Oracle(format!(
            "loss is not deterministic: {first} then {second}"
        )));
    }

    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic_at_worst: analytic.first().copied().unwrap_or(0.0),
        numeric_at_worst: 0.0,
        checked: params.len(),
        passed: true,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + cfg.epsilon;
        let plus = loss(&theta);
        theta[i] = orig - cfg.epsilon;
        let minus = loss(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel = (a - numeric).abs() / denom;
        if !rel.is_finite() {
            return Err(Error::NumericFault(format!(
                "gradient check produced {rel} at coordinate {i}"
            )));
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_init_shape_and_determinism() {
        let a = gaussian_init(2, 3, 0.1, &mut Rng::seed_from(7)).unwrap();
        let b = gaussian_init(2, 3, 0.1, &mut Rng::seed_from(7)).unwrap();
        assert_eq!(a.shape(), (2, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_init_moments() {
        let m = gaussian_init(1, 100_000, 0.1, &mut Rng::seed_from(1)).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn gaussian_init_rejects_bad_std() {
        let mut rng = Rng::seed_from(0);
        assert!(matches!(gaussian_init(1, 1, 0.0, &mut rng), Err(Error::Config(_))));
        assert!(matches!(gaussian_init(1, 1, -1.0, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(0.0, 0.2), 0.0);
        assert_eq!(leaky_relu(2.0, 0.2), 2.0);
        assert!((leaky_relu(-1.0, 0.2) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[3.5]).unwrap(), vec![1.0]);
        assert_eq!(softmax(&[1000.0, 1000.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(softmax(&[]), Err(Error::Shape(_))));
    }

    #[test]
    fn matvec_shape_errors() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(m.matvec(&[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(m.matvec_transposed(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn matvec_agrees_with_triple_loop() {
        let mut rng = Rng::seed_from(99);
        for _ in 0..10 {
            let a = gaussian_init(16, 16, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..16).map(|_| rng.standard_normal()).collect();
            let fast = a.matvec(&x).unwrap();
            let fast_t = a.matvec_transposed(&x).unwrap();
            for i in 0..16 {
                let mut acc = 0.0;
                let mut acc_t = 0.0;
                for j in 0..16 {
                    acc += a.get(i, j) * x[j];
                    acc_t += a.get(j, i) * x[j];
                }
                assert!((acc - fast[i]).abs() < 1e-12);
                assert!((acc_t - fast_t[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_diff_quadratic_and_linear() {
        let cfg = GradCheckConfig {
            tolerance: 1e-6,
            ..GradCheckConfig::default()
        };
        let r = finite_diff_check(|p| p[0] * p[0], &[3.0], &[6.0], cfg).unwrap();
        assert!(r.passed, "{r:?}");
        let r = finite_diff_check(|p| 5.0 * p[0], &[1.25], &[5.0], cfg).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn finite_diff_flags_wrong_gradient() {
        let r = finite_diff_check(|p| p[0] * p[0], &[3.0], &[5.0], GradCheckConfig::default())
            .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn finite_diff_detects_nondeterminism() {
        let mut calls = 0.0;
        let res = finite_diff_check(
            |p| {
                calls += 1.0;
                p[0] + calls
            },
            &[1.0],
            &[1.0],
            GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(Error::Oracle(_))));
    }

    #[test]
    fn softplus_matches_naive() {
        for &x in &[-30.0, -2.0, 0.0, 0.5, 3.0, 30.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Rng::stream(5, 3);
        let mut b = Rng::stream(5, 3);
        let mut c = Rng::stream(5, 4);
        let xa: Vec<usize> = (0..20).map(|_| a.below(1000)).collect();
        let xb: Vec<usize> = (0..20).map(|_| b.below(1000)).collect();
        let xc: Vec<usize> = (0..20).map(|_| c.below(1000)).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
