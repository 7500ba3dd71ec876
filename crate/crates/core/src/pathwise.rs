//! Explicit function-space samples from Gaussian processes.
//!
//! A path is a random Fourier prior draw plus a Matheron correction that
//! pins it to a set of inducing values:
//!
//! `f(t) = exp(-α ‖t‖²) [ Σ_i w_i φ_i(t) + Σ_j q_j k(t, z_j) ]`,
//! `φ_i(t) = σ sqrt(2 / N_b) cos(θ_iᵀ t + β_i)`, `q = K⁻¹ (v - Φ w)`.
//!
//! The basis carries the kernel amplitude so that the prior part has
//! marginal variance `σ²`, matching `k(t, t)`. Frequencies are stored both as
//! drawn standard normals `ξ` and as `θ = sqrt(2p) ξ`, which keeps a basis
//! draw reusable when the kernel precision changes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NvkmError, Result};
use crate::kernels::{se_gram, sq_dist, sq_norm, Gram, Points, SeKernel};

/// Random Fourier features for an SE kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    dim: usize,
    /// Standard-normal frequency draws, `N_b × dim` row-major.
    standard_frequencies: Vec<f64>,
    /// `sqrt(2p) ξ`, `N_b × dim` row-major.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
    weights: Vec<f64>,
    amplitude: f64,
    precision: f64,
}

impl FourierBasis {
    /// Assembles a basis from explicit draws.
    pub fn from_parts(
        kernel: &SeKernel,
        dim: usize,
        standard_frequencies: Vec<f64>,
        phases: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = phases.len();
        if n == 0 || dim == 0 {
            return Err(NvkmError::invalid("a Fourier basis needs at least one function"));
        }
        if standard_frequencies.len() != n * dim || weights.len() != n {
            return Err(NvkmError::invalid("Fourier basis part lengths disagree"));
        }
        let mut basis = FourierBasis {
            dim,
            frequencies: standard_frequencies.clone(),
            standard_frequencies,
            phases,
            weights,
            amplitude: kernel.amplitude,
            precision: kernel.precision,
        };
        basis.rescale(kernel);
        Ok(basis)
    }

    /// Same draws (`ξ`, `β`, `w`) under a different kernel.
    pub fn with_kernel(&self, kernel: &SeKernel) -> Self {
        let mut out = self.clone();
        out.rescale(kernel);
        out
    }

    /// Same frequencies and phases with new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(NvkmError::invalid("weight count does not match basis size"));
        }
        let mut out = self.clone();
        out.weights = weights;
        Ok(out)
    }

    fn rescale(&mut self, kernel: &SeKernel) {
        let s = (2.0 * kernel.precision).sqrt();
        for (f, x) in self.frequencies.iter_mut().zip(&self.standard_frequencies) {
            *f = s * x;
        }
        self.amplitude = kernel.amplitude;
        self.precision = kernel.precision;
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn frequency(&self, i: usize) -> &[f64] {
        &self.frequencies[i * self.dim..(i + 1) * self.dim]
    }

    pub fn standard_frequencies(&self) -> &[f64] {
        &self.standard_frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `σ sqrt(2 / N_b)`, the factor in front of every cosine.
    #[inline]
    pub fn feature_scale(&self) -> f64 {
        self.amplitude * (2.0 / self.len() as f64).sqrt()
    }

    /// `φ_i(t)`.
    #[inline]
    pub fn feature(&self, i: usize, t: &[f64]) -> f64 {
        let arg: f64 = self.frequency(i).iter().zip(t).map(|(a, b)| a * b).sum::<f64>() + self.phases[i];
        self.feature_scale() * arg.cos()
    }

    /// `Σ_i w_i φ_i(t)`.
    pub fn eval(&self, t: &[f64]) -> f64 {
        let scale = self.feature_scale();
        let mut acc = 0.0;
        for i in 0..self.len() {
            let arg: f64 = self.frequency(i).iter().zip(t).map(|(a, b)| a * b).sum::<f64>() + self.phases[i];
            acc += self.weights[i] * arg.cos();
        }
        scale * acc
    }

    /// Feature matrix `Φ_{ji} = φ_i(z_j)`.
    pub fn feature_matrix(&self, z: &Points) -> DMatrix<f64> {
        DMatrix::from_fn(z.len(), self.len(), |j, i| self.feature(i, z.row(j)))
    }

    /// Cosine coefficients `c_i = σ sqrt(2/N_b) w_i`, so that the prior part is
    /// `Σ_i c_i cos(θ_iᵀ t + β_i)`.
    pub fn coefficients(&self) -> Vec<f64> {
        let s = self.feature_scale();
        self.weights.iter().map(|w| s * w).collect()
    }
}

/// Draws `N_b` random Fourier features for `k` on `R^dim`.
///
/// Frequencies for all features are drawn first, then phases, then weights.
pub fn draw_basis<R: Rng + ?Sized>(
    k: &SeKernel,
    dim: usize,
    n_basis: usize,
    rng: &mut R,
) -> Result<FourierBasis> {
    if n_basis == 0 || dim == 0 {
        return Err(NvkmError::invalid("basis size and dimension must be positive"));
    }
    let xi: Vec<f64> = (0..n_basis * dim).map(|_| rng.sample(StandardNormal)).collect();
    let phases: Vec<f64> = (0..n_basis).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let weights: Vec<f64> = (0..n_basis).map(|_| rng.sample(StandardNormal)).collect();
    FourierBasis::from_parts(k, dim, xi, phases, weights)
}

/// `q = K⁻¹ (v - Φ w)`; `relative_jitter` is multiplied by `σ²`.
pub fn matheron_coefficients(
    basis: &FourierBasis,
    z: &Points,
    v: &[f64],
    k: &SeKernel,
    relative_jitter: f64,
) -> Result<Vec<f64>> {
    if z.len() != v.len() {
        return Err(NvkmError::invalid(format!(
            "{} inducing inputs but {} inducing values",
            z.len(),
            v.len()
        )));
    }
    if z.dim() != basis.dim() {
        return Err(NvkmError::invalid("inducing inputs and basis differ in dimension"));
    }
    let gram = se_gram(z, k, relative_jitter)?;
    let features = basis.feature_matrix(z);
    let prior = &features * DVector::from_column_slice(basis.weights());
    let resid = DVector::from_column_slice(v) - prior;
    Ok(gram.cholesky.solve(&resid).as_slice().to_vec())
}

/// One explicit GP sample: Fourier prior draw plus Matheron correction,
/// optionally multiplied by a decay envelope `exp(-α ‖t‖²)`.
#[derive(Debug, Clone)]
pub struct ExplicitPath {
    basis: FourierBasis,
    inducing: Points,
    coefficients: Vec<f64>,
    kernel: SeKernel,
    decay: f64,
}

impl ExplicitPath {
    /// Conditions a prior basis draw on inducing values `v` at `z`.
    pub fn condition(
        basis: FourierBasis,
        z: Points,
        v: &[f64],
        kernel: SeKernel,
        relative_jitter: f64,
        decay: f64,
    ) -> Result<Self> {
        let q = matheron_coefficients(&basis, &z, v, &kernel, relative_jitter)?;
        ExplicitPath::from_parts(basis, z, q, kernel, decay)
    }

    pub fn from_parts(
        basis: FourierBasis,
        inducing: Points,
        coefficients: Vec<f64>,
        kernel: SeKernel,
        decay: f64,
    ) -> Result<Self> {
        if inducing.is_empty() || inducing.len() != coefficients.len() {
            return Err(NvkmError::invalid("path needs one coefficient per inducing input"));
        }
        if inducing.dim() != basis.dim() {
            return Err(NvkmError::invalid("inducing inputs and basis differ in dimension"));
        }
        if !(decay >= 0.0) {
            return Err(NvkmError::invalid(format!("decay must be non-negative, got {decay}")));
        }
        Ok(ExplicitPath {
            basis,
            inducing,
            coefficients,
            kernel,
            decay,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn inducing(&self) -> &Points {
        &self.inducing
    }

    /// The Matheron coefficients `q`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kernel(&self) -> &SeKernel {
        &self.kernel
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Kernel-part coefficients `σ² q_j`, so that the correction is
    /// `Σ_j d_j exp(-p ‖t - z_j‖²)`.
    pub fn kernel_coefficients(&self) -> Vec<f64> {
        let s2 = self.kernel.variance();
        self.coefficients.iter().map(|q| s2 * q).collect()
    }

    /// Evaluates the bracketed sum without the decay envelope.
    #[inline]
    pub(crate) fn eval_stationary(&self, t: &[f64]) -> f64 {
        let mut acc = self.basis.eval(t);
        let s2 = self.kernel.variance();
        let p = self.kernel.precision;
        for (j, q) in self.coefficients.iter().enumerate() {
            acc += s2 * q * (-p * sq_dist(t, self.inducing.row(j))).exp();
        }
        acc
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: &[f64]) -> f64 {
        let base = self.eval_stationary(t);
        if self.decay > 0.0 {
            (-self.decay * sq_norm(t)).exp() * base
        } else {
            base
        }
    }

    /// `exp(-α ‖t‖²) [Σ w_i φ_i(t) + Σ q_j k(t, z_j)]`.
    pub fn eval(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.dim() {
            return Err(NvkmError::invalid(format!(
                "path has dimension {} but was evaluated at a {}-vector",
                self.dim(),
                t.len()
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluates a one-dimensional path at many scalar times.
    pub fn eval_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(NvkmError::invalid("eval_many needs a one-dimensional path"));
        }
        Ok(ts.iter().map(|t| self.eval_unchecked(std::slice::from_ref(t))).collect())
    }
}

/// `eval_path` in free-function form.
pub fn eval_path(path: &ExplicitPath, t: &[f64]) -> Result<f64> {
    path.eval(t)
}

/// Gaussian `q(v) = N(μ, L Lᵀ)` over inducing values, stored through its
/// lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGaussian {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl VariationalGaussian {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if m == 0 || chol.nrows() != m || chol.ncols() != m {
            return Err(NvkmError::invalid("variational mean and factor shapes disagree"));
        }
        for i in 0..m {
            if !(chol[(i, i)] > 0.0) {
                return Err(NvkmError::invalid("Cholesky diagonal must be positive"));
            }
            for j in i + 1..m {
                if chol[(i, j)] != 0.0 {
                    return Err(NvkmError::invalid("Cholesky factor must be lower triangular"));
                }
            }
        }
        Ok(VariationalGaussian { mean, chol })
    }

    /// `N(0, scale² K)` using the factor of a prior Gram.
    pub fn from_prior(gram: &Gram, scale: f64) -> Self {
        let m = gram.size();
        VariationalGaussian {
            mean: DVector::zeros(m),
            chol: gram.cholesky.l() * scale,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub(crate) fn mean_mut(&mut self) -> &mut DVector<f64> {
        &mut self.mean
    }

    pub(crate) fn chol_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.chol
    }

    /// `μ + L ε` for a given standard-normal `ε`.
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        let v = &self.mean + &self.chol * DVector::from_column_slice(eps);
        v.as_slice().to_vec()
    }
}

/// Draws `ε ~ N(0, I)` and returns `μ + L ε`.
pub fn sample_inducing<R: Rng + ?Sized>(q: &VariationalGaussian, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..q.len()).map(|_| rng.sample(StandardNormal)).collect();
    q.reparameterize(&eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_feature_is_bounded() {
        let k = SeKernel::new(1.5, 0.5).unwrap();
        let b = draw_basis(&k, 1, 1, &mut rng(1)).unwrap();
        assert_eq!(b.len(), 1);
        for t in [-3.0, 0.0, 0.7, 10.0] {
            assert!(b.feature(0, &[t]).abs() <= 1.5 * 2f64.sqrt() + 1e-12);
        }
        assert!(b.phases()[0] >= 0.0 && b.phases()[0] < 2.0 * PI);
    }

    #[test]
    fn basis_is_seed_reproducible() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let a = draw_basis(&k, 2, 7, &mut rng(5)).unwrap();
        let b = draw_basis(&k, 2, 7, &mut rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rescaling_keeps_draws() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let a = draw_basis(&k, 1, 4, &mut rng(2)).unwrap();
        let k2 = SeKernel::new(2.0, 2.0).unwrap();
        let b = a.with_kernel(&k2);
        assert_eq!(a.standard_frequencies(), b.standard_frequencies());
        assert!((b.frequency(0)[0] - 2.0 * a.frequency(0)[0]).abs() < 1e-14);
        assert_eq!(b.amplitude(), 2.0);
    }

    #[test]
    fn consistent_prior_gives_zero_coefficients() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let b = draw_basis(&k, 1, 20, &mut rng(4)).unwrap();
        let z = Points::from_scalars(&[-1.0, 0.0, 1.0]);
        let v: Vec<f64> = z.rows().map(|r| b.eval(r)).collect();
        let q = matheron_coefficients(&b, &z, &v, &k, 1e-8).unwrap();
        assert!(q.iter().all(|x| x.abs() < 1e-9), "{q:?}");
    }

    #[test]
    fn scalar_matheron_case() {
        let k = SeKernel::new(1.0, 1.0).unwrap();
        let b = draw_basis(&k, 1, 5, &mut rng(8)).unwrap();
        let z = Points::from_scalars(&[0.0]);
        let q = matheron_coefficients(&b, &z, &[0.8], &k, 0.0).unwrap();
        assert!((q[0] - (0.8 - b.eval(&[0.0]))).abs() < 1e-14);
    }

    #[test]
    fn path_interpolates_inducing_values() {
        let k = SeKernel::new(1.3, 0.9).unwrap();
        let mut r = rng(11);
        let b = draw_basis(&k, 1, 50, &mut r).unwrap();
        let zs: Vec<f64> = (0..8).map(|i| -3.0 + i as f64 * 0.8).collect();
        let v: Vec<f64> = (0..8).map(|_| r.random_range(-2.0..2.0)).collect();
        let path = ExplicitPath::condition(b, Points::from_scalars(&zs), &v, k, 1e-10, 0.0).unwrap();
        for (z, vj) in zs.iter().zip(&v) {
            assert!((path.eval(&[*z]).unwrap() - vj).abs() < 1e-6);
        }
    }

    #[test]
    fn decay_is_a_multiplicative_envelope() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let mut r = rng(12);
        let b = draw_basis(&k, 2, 10, &mut r).unwrap();
        let z = Points::from_rows(&[vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        let v = [0.3, -0.4];
        let plain = ExplicitPath::condition(b.clone(), z.clone(), &v, k, 1e-8, 0.0).unwrap();
        let decayed = ExplicitPath::condition(b, z, &v, k, 1e-8, 0.7).unwrap();
        for t in [[0.2, 0.1], [1.5, -0.3], [-2.0, 2.0]] {
            let lhs = decayed.eval(&t).unwrap() * (0.7 * sq_norm(&t)).exp();
            let rhs = plain.eval(&t).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let b = draw_basis(&k, 2, 3, &mut rng(1)).unwrap();
        let z = Points::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = ExplicitPath::condition(b, z, &[0.0], k, 1e-8, 0.0).unwrap();
        assert!(matches!(p.eval(&[0.0]), Err(NvkmError::InvalidArgument(_))));
    }

    #[test]
    fn mismatched_inducing_lengths_are_rejected() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let b = draw_basis(&k, 1, 3, &mut rng(1)).unwrap();
        let z = Points::from_scalars(&[0.0, 1.0]);
        assert!(matheron_coefficients(&b, &z, &[1.0], &k, 1e-8).is_err());
    }

    #[test]
    fn degenerate_covariance_returns_mean() {
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let chol = DMatrix::from_diagonal_element(3, 3, 1e-12);
        let q = VariationalGaussian::new(mean.clone(), chol).unwrap();
        let s = sample_inducing(&q, &mut rng(3));
        for (a, b) in s.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_inducing_is_seed_deterministic() {
        let q = VariationalGaussian::new(
            DVector::from_vec(vec![0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]),
        )
        .unwrap();
        assert_eq!(sample_inducing(&q, &mut rng(7)), sample_inducing(&q, &mut rng(7)));
    }

    #[test]
    fn variational_gaussian_validates_factor() {
        let mean = DVector::zeros(2);
        assert!(VariationalGaussian::new(mean.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])).is_err());
        assert!(VariationalGaussian::new(mean, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).is_err());
    }
}
