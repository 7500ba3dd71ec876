//! Brute-force references used to validate the closed forms: adaptive
//! Gauss–Kronrod quadrature, dense trapezoid quadrature of Volterra terms,
//! Monte-Carlo KL estimates and central finite differences.

mod suite;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::TimeSeriesDataset;
use crate::error::{NvkmError, Result};
use crate::inference::{draw_samples, elbo_with_grad, simulate, Batch};
use crate::kernels::{Gram, Points, SeKernel};
use crate::model::{fix_alpha, init_model, linspace, vk_grid, Leaf, ModelConfig, ParamLayout, VolterraModel};
use crate::pathwise::{draw_basis, ExplicitPath, VariationalGaussian};

pub use suite::{
    gradient_outcome, integral_checks, kl_check, random_kl_instance, run_validation, volterra_check, volterra_error,
    volterra_grid_points, volterra_tolerance, CheckOutcome, IntegralFns, ValidationLevel, ValidationReport,
    GRADIENT_TOLERANCE, INTEGRAL_TOLERANCE,
};

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1] (non-negative half).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive G7K15 quadrature on `[a, b]`: bisects the interval with
/// the largest error estimate until the total estimate is below
/// `max(abs_tol, rel_tol |value|)`.
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(NvkmError::invalid(format!("bad integration bounds [{a}, {b}]")));
    }
    const MAX_INTERVALS: usize = 20_000;
    let mut parts = vec![{
        let (v, e) = gk15(&f, a, b);
        (a, b, v, e)
    }];
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if !value.is_finite() {
            return Err(NvkmError::NonFinite("integrand".into()));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(QuadResult { value, error });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(NvkmError::NumericInconsistency(format!(
                "adaptive quadrature did not converge (error {error:e})"
            )));
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Integral of `f` together with the integral of `|f|`, the latter used as
/// the magnitude scale for error comparisons. The tolerance is relative to
/// that scale.
pub fn integrate_with_magnitude<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)> {
    let mag = adaptive_integrate(|x| f(x).abs(), a, b, 0.0, 1e-8)?.value;
    if mag == 0.0 {
        return Ok((0.0, 0.0));
    }
    let v = adaptive_integrate(&f, a, b, rel_tol * mag, 0.0)?.value;
    Ok((v, mag))
}

/// Trapezoid grid over a box: `points` nodes per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: usize,
}

/// Fewest trapezoid nodes per dimension.
pub const MIN_GRID_POINTS: usize = 64;

impl QuadratureGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(NvkmError::invalid("grid bounds must have matching, positive dimension"));
        }
        if points < MIN_GRID_POINTS {
            return Err(NvkmError::invalid(format!("at least {MIN_GRID_POINTS} points per dimension are required")));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(NvkmError::invalid("grid upper bounds must exceed lower bounds"));
        }
        Ok(QuadratureGrid { lower, upper, points })
    }

    /// Cube `[t - 12/sqrt(α), t + 12/sqrt(α)]^order`, where the envelope
    /// `exp(-α (t-τ)²)` has fallen to `e^{-144}`.
    pub fn around(t: f64, alpha: f64, order: usize, points: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(NvkmError::invalid("decay must be positive"));
        }
        let r = 12.0 / alpha.sqrt();
        QuadratureGrid::new(vec![t - r; order], vec![t + r; order], points)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn nodes(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let x = linspace(self.lower[d], self.upper[d], self.points);
        let h = (self.upper[d] - self.lower[d]) / (self.points - 1) as f64;
        let w = (0..self.points)
            .map(|i| if i == 0 || i == self.points - 1 { 0.5 * h } else { h })
            .collect();
        (x, w)
    }
}

/// Highest order the quadrature oracle accepts.
pub const MAX_QUADRATURE_ORDER: usize = 3;

/// Trapezoid approximation of
/// `∫ e^{-α Σ_i (t-τ_i)²} G'(t-τ_1, ..., t-τ_c) Π_j u(τ_j) dτ`
/// using direct path evaluations. Returns the value and the same sum over
/// the absolute integrand.
pub fn quadrature_volterra_with_magnitude(
    u_path: &ExplicitPath,
    g_path: &ExplicitPath,
    alpha: f64,
    c: usize,
    t: f64,
    grid: &QuadratureGrid,
) -> Result<(f64, f64)> {
    if c > MAX_QUADRATURE_ORDER {
        return Err(NvkmError::UnsupportedOrder(c));
    }
    if c == 0 || g_path.dim() != c || u_path.dim() != 1 || grid.dim() != c {
        return Err(NvkmError::invalid("path, order and grid dimensions disagree"));
    }
    if !(alpha > 0.0) {
        return Err(NvkmError::invalid("decay must be positive"));
    }
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..c).map(|d| grid.nodes(d)).collect();
    // Per-axis factors: weight · envelope · u(τ).
    let factors: Vec<Vec<f64>> = axes
        .iter()
        .map(|(x, w)| {
            x.iter()
                .zip(w)
                .map(|(tau, wi)| wi * (-alpha * (t - tau).powi(2)).exp() * u_path.eval_unchecked(&[*tau]))
                .collect()
        })
        .collect();
    let n = grid.points;
    let mut total = 0.0;
    let mut magnitude = 0.0;
    let mut idx = vec![0usize; c];
    let mut arg = vec![0.0; c];
    let count = n.pow(c as u32);
    for flat in 0..count {
        let mut rem = flat;
        for d in (0..c).rev() {
            idx[d] = rem % n;
            rem /= n;
        }
        let mut weight = 1.0;
        for d in 0..c {
            weight *= factors[d][idx[d]];
            arg[d] = t - axes[d].0[idx[d]];
        }
        if weight == 0.0 {
            continue;
        }
        let v = weight * g_path.eval_stationary(&arg);
        total += v;
        magnitude += v.abs();
    }
    Ok((total, magnitude))
}

/// [`quadrature_volterra_with_magnitude`] without the magnitude.
pub fn quadrature_volterra(
    u_path: &ExplicitPath,
    g_path: &ExplicitPath,
    alpha: f64,
    c: usize,
    t: f64,
    grid: &QuadratureGrid,
) -> Result<f64> {
    quadrature_volterra_with_magnitude(u_path, g_path, alpha, c, t, grid).map(|r| r.0)
}

/// Monte-Carlo estimate of `E_q[log q(v) - log p(v)]` for `p = N(0, K)`,
/// with its standard error.
pub fn mc_kl<R: Rng + ?Sized>(q: &VariationalGaussian, prior: &Gram, n_draws: usize, rng: &mut R) -> Result<(f64, f64)> {
    if n_draws < 2 {
        return Err(NvkmError::invalid("mc_kl needs at least two draws"));
    }
    let m = q.len();
    if prior.size() != m {
        return Err(NvkmError::invalid("variational and prior dimensions differ"));
    }
    let kl = prior.cholesky.l();
    let l = q.chol();
    let log_det_l: f64 = (0..m).map(|i| l[(i, i)].ln()).sum();
    let log_det_k = prior.log_det();
    let mu = q.mean();
    let mut eps = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_draws {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..m {
            let mut acc = mu[i];
            for j in 0..=i {
                acc += l[(i, j)] * eps[j];
            }
            v[i] = acc;
        }
        // Forward substitution K_L y = v.
        for i in 0..m {
            let mut acc = v[i];
            for j in 0..i {
                acc -= kl[(i, j)] * y[j];
            }
            y[i] = acc / kl[(i, i)];
        }
        let log_q = -log_det_l - 0.5 * eps.iter().map(|e| e * e).sum::<f64>();
        let log_p = -0.5 * log_det_k - 0.5 * y.iter().map(|e| e * e).sum::<f64>();
        let d = log_q - log_p;
        sum += d;
        sum_sq += d * d;
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Central differences with step `step · max(1, |x_i|)` per coordinate.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut objective: F, params: &[f64], step: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..params.len())
        .map(|i| {
            let h = step * params[i].abs().max(1.0);
            x[i] = params[i] + h;
            let up = objective(&x);
            x[i] = params[i] - h;
            let down = objective(&x);
            x[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A random `(u, G')` pair for closed-form versus quadrature comparisons.
#[derive(Debug, Clone)]
pub struct TermInstance {
    pub u_path: ExplicitPath,
    pub g_path: ExplicitPath,
    pub alpha: f64,
    pub t: f64,
}

/// Draws a random term instance of the given order with moderate length
/// scales, so that a trapezoid grid of a few hundred nodes per dimension
/// resolves the integrand.
pub fn random_term_instance<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Result<TermInstance> {
    let alpha = if order >= 3 { rng.random_range(1.0..2.0) } else { rng.random_range(0.5..2.0) };
    let u_kernel = SeKernel::from_length_scale(rng.random_range(0.5..1.5), rng.random_range(0.6..1.5))?;
    let m_u = rng.random_range(5..=8);
    let zu = Points::from_scalars(&linspace(-3.0, 3.0, m_u));
    let nb_u = rng.random_range(10..=20);
    let basis_u = draw_basis(&u_kernel, 1, nb_u, rng)?;
    let vu: Vec<f64> = (0..m_u).map(|_| u_kernel.amplitude * rng.sample::<f64, _>(StandardNormal)).collect();
    let u_path = ExplicitPath::condition(basis_u, zu, &vu, u_kernel, 1e-8, 0.0)?;

    let min_l = if order >= 3 { 0.7 } else { 0.5 };
    let g_kernel = SeKernel::from_length_scale(rng.random_range(0.5..1.5), rng.random_range(min_l..1.2))?;
    let axis = match order {
        1 => rng.random_range(5..=8),
        2 => rng.random_range(4..=5),
        _ => 3,
    };
    let range = (100f64.ln() / alpha).sqrt();
    let zg = vk_grid(range, axis, order);
    let nb_g = rng.random_range(10..=20);
    let basis_g = draw_basis(&g_kernel, order, nb_g, rng)?;
    let vg: Vec<f64> = (0..zg.len()).map(|_| g_kernel.amplitude * rng.sample::<f64, _>(StandardNormal)).collect();
    let g_path = ExplicitPath::condition(basis_g, zg, &vg, g_kernel, 1e-8, alpha)?;
    debug_assert!((fix_alpha(range, 0.01) - alpha).abs() < 1e-12);
    Ok(TermInstance {
        u_path,
        g_path,
        alpha,
        t: rng.random_range(-2.0..2.0),
    })
}

/// Small model and dataset for gradient and ascent checks: `M_u = 5`,
/// VK axis sizes 5/4/3, ten basis functions, 24 observations drawn from a
/// sample of the same model family.
pub fn toy_problem(order: usize, seed: u64) -> Result<(VolterraModel, TimeSeriesDataset)> {
    let config = ModelConfig {
        order,
        outputs: 1,
        n_basis: 10,
        axis_sizes: Some(vec![5, 4, 3]),
        input_inducing: Some(5),
        vk_range: 1.5,
        time_span: Some([-4.0, 4.0]),
        output_noise: 0.1,
        seed,
        ..ModelConfig::default()
    };
    let mut truth = init_model(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    truth.input.variational = VariationalGaussian::new(
        DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal)),
        truth.input_gram()?.cholesky.l() * 0.05,
    )?;
    for k in 0..truth.kernels.len() {
        let g = truth.kernel_gram(k)?;
        let m = g.size();
        let v = g.cholesky.l() * DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        truth.kernels[k].variational = VariationalGaussian::new(v, g.cholesky.l() * 0.05)?;
    }
    let times = linspace(-3.5, 3.5, 24);
    let sim = simulate(&truth, &[times], None, &mut rng)?;
    let model = init_model(&config)?;
    Ok((model, sim.dataset))
}

/// Per-leaf comparison of the analytic ELBO gradient with central finite
/// differences under fixed draws.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    /// `(leaf, ‖analytic - numeric‖ / ‖numeric‖)`.
    pub leaves: Vec<(Leaf, f64)>,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.leaves.iter().map(|l| l.1).fold(0.0, f64::max)
    }
}

/// Checks every trainable leaf of `model` on the full batch of `data`.
pub fn gradient_check(model: &VolterraModel, data: &TimeSeriesDataset, samples: usize, seed: u64, step: f64) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = draw_samples(model, samples, &mut rng)?;
    let batch = Batch::full(data);
    let analytic = elbo_with_grad(model, data, &batch, &draws, true)?;
    let layout = ParamLayout::new(model);
    let x0 = layout.to_flat(model)?;
    let mut work = model.clone();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |x| {
            if let Err(e) = layout.set_flat(&mut work, x, None) {
                failure.get_or_insert(e);
                return f64::NAN;
            }
            match elbo_with_grad(&work, data, &batch, &draws, false) {
                Ok(g) => g.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &x0,
        step,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let leaves = layout
        .leaves()
        .map(|leaf| {
            let r = layout.range(leaf).expect("leaf of this layout");
            let diff: f64 = r.clone().map(|i| (analytic.grad[i] - numeric[i]).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = r.map(|i| numeric[i].powi(2)).sum::<f64>().sqrt();
            (leaf, diff / norm.max(1e-12))
        })
        .collect();
    Ok(GradientCheck { leaves })
}
