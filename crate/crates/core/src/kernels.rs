//! Covariance functions, spectral sampling and Gram-matrix assembly.
//!
//! The squared-exponential (SE) covariance is written in precision form,
//! `k(t, t') = σ² exp(-p ‖t - t'‖²)` with `p = 1 / (2 l²)`. The decaying SE
//! (DSE) covariance multiplies it by the envelope
//! `exp(-α (‖t‖² + ‖t'‖²))`, so a DSE sample is an SE sample times
//! `exp(-α ‖t‖²)`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NvkmError, Result};

/// Stationary squared-exponential covariance `σ² exp(-p ‖t - t'‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub amplitude: f64,
    pub precision: f64,
}

impl SeKernel {
    pub fn new(amplitude: f64, precision: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(NvkmError::invalid(format!("SE amplitude must be positive, got {amplitude}")));
        }
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(NvkmError::invalid(format!("SE precision must be positive, got {precision}")));
        }
        Ok(SeKernel { amplitude, precision })
    }

    /// Builds the kernel from a length scale using `p = 1 / (2 l²)`.
    pub fn from_length_scale(amplitude: f64, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(NvkmError::invalid(format!("length scale must be positive, got {length_scale}")));
        }
        SeKernel::new(amplitude, precision_from_length_scale(length_scale))
    }

    pub fn length_scale(&self) -> f64 {
        length_scale_from_precision(self.precision)
    }

    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    /// Covariance as a function of the squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        self.variance() * (-self.precision * sq_dist).exp()
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: &[f64], t2: &[f64]) -> f64 {
        self.eval_sq_dist(sq_dist(t, t2))
    }
}

/// Decaying squared-exponential covariance
/// `σ² exp(-α (‖t‖² + ‖t'‖²) - γ ‖t - t'‖²)` with `γ = 1 / l²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DseKernel {
    pub amplitude: f64,
    pub decay: f64,
    pub gamma: f64,
}

impl DseKernel {
    pub fn new(amplitude: f64, decay: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("amplitude", amplitude), ("decay", decay), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NvkmError::invalid(format!("DSE {name} must be positive, got {v}")));
            }
        }
        Ok(DseKernel { amplitude, decay, gamma })
    }

    /// Builds the kernel from a length scale using `γ = 1 / l²`.
    pub fn from_length_scale(amplitude: f64, decay: f64, length_scale: f64) -> Result<Self> {
        DseKernel::new(amplitude, decay, 1.0 / (length_scale * length_scale))
    }

    /// The stationary SE part, `σ² exp(-γ ‖t - t'‖²)`.
    pub fn stationary_part(&self) -> SeKernel {
        SeKernel {
            amplitude: self.amplitude,
            precision: self.gamma,
        }
    }
}

pub fn precision_from_length_scale(length_scale: f64) -> f64 {
    1.0 / (2.0 * length_scale * length_scale)
}

pub fn length_scale_from_precision(precision: f64) -> f64 {
    (0.5 / precision).sqrt()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn check_dims(t: &[f64], t2: &[f64]) -> Result<()> {
    if t.len() != t2.len() {
        return Err(NvkmError::invalid(format!(
            "dimension mismatch: {} vs {}",
            t.len(),
            t2.len()
        )));
    }
    Ok(())
}

/// `σ² exp(-p ‖t - t'‖²)`.
pub fn se_cov(t: &[f64], t2: &[f64], k: &SeKernel) -> Result<f64> {
    check_dims(t, t2)?;
    Ok(k.eval_unchecked(t, t2))
}

/// `σ² exp(-α (‖t‖² + ‖t'‖²) - γ ‖t - t'‖²)`.
pub fn dse_cov(t: &[f64], t2: &[f64], k: &DseKernel) -> Result<f64> {
    check_dims(t, t2)?;
    let exponent = -k.decay * (sq_norm(t) + sq_norm(t2)) - k.gamma * sq_dist(t, t2);
    Ok(k.amplitude * k.amplitude * exponent.exp())
}

/// Draws one frequency vector from the normalised spectral density of `k`.
///
/// `exp(-p r²)` is the characteristic function of `Normal(0, 2p I)`, so each
/// coordinate is a standard normal scaled by `sqrt(2p)`.
pub fn spectral_sample<R: Rng + ?Sized>(k: &SeKernel, dim: usize, rng: &mut R) -> Vec<f64> {
    let scale = (2.0 * k.precision).sqrt();
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// A set of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(NvkmError::invalid(format!(
                "cannot shape {} values into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { dim, data })
    }

    /// One-dimensional points.
    pub fn from_scalars(values: &[f64]) -> Self {
        Points {
            dim: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(NvkmError::invalid("points have differing dimensions"));
        }
        Points::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A covariance matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub cholesky: Cholesky<f64, Dyn>,
    /// Diagonal jitter that was actually added.
    pub jitter: f64,
}

impl Gram {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `log |K|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.cholesky.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Jitter multiplier range tried before giving up: `jitter, 10 jitter, ...,
/// 1e4 jitter`.
const JITTER_ESCALATIONS: usize = 4;

/// Assembles `K_mn = cov(z_m, z_n) + jitter [m = n]` and factorises it,
/// escalating the jitter tenfold up to four times on failure.
pub fn gram<F>(points: &Points, cov: F, jitter: f64) -> Result<Gram>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if points.is_empty() {
        return Err(NvkmError::invalid("gram of an empty point set"));
    }
    let m = points.len();
    let mut base = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = cov(points.row(i), points.row(j));
            base[(i, j)] = v;
            base[(j, i)] = v;
        }
    }
    gram_from_matrix(base, jitter)
}

/// Factorises a symmetric matrix with the same jitter escalation as [`gram`].
pub fn gram_from_matrix(base: DMatrix<f64>, jitter: f64) -> Result<Gram> {
    let m = base.nrows();
    let attempts = if jitter > 0.0 { JITTER_ESCALATIONS + 1 } else { 1 };
    let mut current = jitter;
    for _ in 0..attempts {
        let mut k = base.clone();
        for i in 0..m {
            k[(i, i)] += current;
        }
        if let Some(chol) = Cholesky::new(k.clone()) {
            if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(Gram {
                    matrix: k,
                    cholesky: chol,
                    jitter: current,
                });
            }
        }
        current *= 10.0;
    }
    Err(NvkmError::IllConditionedGram {
        size: m,
        jitter: current / 10.0,
    })
}

/// SE Gram matrix with jitter proportional to the kernel variance.
pub fn se_gram(points: &Points, k: &SeKernel, relative_jitter: f64) -> Result<Gram> {
    gram(points, |a, b| k.eval_unchecked(a, b), relative_jitter * k.variance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn se_cov_examples() {
        let k = SeKernel::new(1.0, 1.0).unwrap();
        assert_eq!(se_cov(&[0.0], &[0.0], &k).unwrap(), 1.0);
        let k = SeKernel::new(2.0, 0.5).unwrap();
        let v = se_cov(&[0.0], &[1.0], &k).unwrap();
        assert!((v - 4.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!(matches!(
            se_cov(&[0.0, 1.0], &[1.0], &k),
            Err(NvkmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn se_cov_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = SeKernel::new(1.3, 0.7).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_eq!(se_cov(&a, &b, &k).unwrap(), se_cov(&b, &a, &k).unwrap());
        }
    }

    #[test]
    fn dse_cov_examples() {
        let k = DseKernel::new(1.7, 0.3, 2.0).unwrap();
        assert!((dse_cov(&[0.0], &[0.0], &k).unwrap() - 1.7 * 1.7).abs() < 1e-15);
        let k = DseKernel::new(1.0, 1.0, 1.0).unwrap();
        let v = dse_cov(&[1.0, 0.0], &[0.0, 1.0], &k).unwrap();
        assert!((v - (-4.0f64).exp()).abs() < 1e-16);
        assert!(dse_cov(&[1.0], &[1.0, 2.0], &k).is_err());
    }

    #[test]
    fn dse_decays_away_from_origin() {
        let k = DseKernel::new(1.0, 0.5, 1.0).unwrap();
        let far = dse_cov(&[30.0], &[0.0], &k).unwrap();
        assert!(far < 1e-100);
    }

    #[test]
    fn kernels_reject_nonpositive_parameters() {
        assert!(SeKernel::new(0.0, 1.0).is_err());
        assert!(SeKernel::new(1.0, -1.0).is_err());
        assert!(DseKernel::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn length_scale_round_trip() {
        let k = SeKernel::from_length_scale(1.0, 2.0).unwrap();
        assert!((k.precision - 0.125).abs() < 1e-15);
        assert!((k.length_scale() - 2.0).abs() < 1e-14);
        let d = DseKernel::from_length_scale(1.0, 0.1, 2.0).unwrap();
        assert!((d.gamma - 0.25).abs() < 1e-15);
    }

    #[test]
    fn spectral_sample_is_seed_deterministic() {
        let k = SeKernel::new(1.0, 0.5).unwrap();
        let a = spectral_sample(&k, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let b = spectral_sample(&k, 4, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn gram_single_point() {
        let k = SeKernel::new(1.0, 1.0).unwrap();
        let pts = Points::from_scalars(&[0.3]);
        let g = gram(&pts, |a, b| k.eval_unchecked(a, b), 1e-6).unwrap();
        assert!((g.matrix[(0, 0)] - (1.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn gram_coincident_points_without_jitter_fails() {
        let k = SeKernel::new(1.0, 1.0).unwrap();
        let pts = Points::from_scalars(&[0.5, 0.5]);
        let err = gram(&pts, |a, b| k.eval_unchecked(a, b), 0.0).unwrap_err();
        assert!(matches!(err, NvkmError::IllConditionedGram { .. }));
    }

    #[test]
    fn gram_jitter_escalates_for_coincident_points() {
        let k = SeKernel::new(1.0, 1.0).unwrap();
        let pts = Points::from_scalars(&[0.5, 0.5]);
        let g = se_gram(&pts, &k, 1e-8).unwrap();
        assert!(g.jitter >= 1e-8 && g.jitter <= 1e-4);
    }

    #[test]
    fn gram_matches_elementwise_cov() {
        let k = SeKernel::new(1.2, 0.8).unwrap();
        let pts = Points::from_scalars(&[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let g = gram(&pts, |a, b| k.eval_unchecked(a, b), 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = se_cov(pts.row(i), pts.row(j), &k).unwrap();
                assert_eq!(g.matrix[(i, j)], expect);
            }
        }
        assert_eq!(g.matrix, g.matrix.transpose());
    }

    #[test]
    fn points_shape_checks() {
        assert!(Points::new(2, vec![1.0, 2.0, 3.0]).is_err());
        let p = Points::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.row(1), &[3.0, 4.0]);
    }
}
