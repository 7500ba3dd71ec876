use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{gradient_check, integrate_with_magnitude, mc_kl, quadrature_volterra_with_magnitude, random_term_instance, toy_problem, QuadratureGrid};
use crate::error::Result;
use crate::kernels::{se_gram, Points, SeKernel};
use crate::model::kl_term;
use crate::pathwise::VariationalGaussian;
use crate::volterra::{eval_i1a, eval_i1b, eval_i2a, eval_i2b, eval_term, gauss_integral, ComplexValue, VolterraTermInputs};

/// How much work the validation suite does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationLevel {
    Quick,
    Full,
}

/// The elementary integrals under test. Replacing one with a faulty
/// implementation must make the suite fail.
#[derive(Debug, Clone, Copy)]
pub struct IntegralFns {
    pub gauss: fn(f64, ComplexValue) -> Result<ComplexValue>,
    pub i1a: fn(f64, f64, f64, f64, f64) -> Result<ComplexValue>,
    pub i1b: fn(f64, f64, f64, f64, f64) -> Result<ComplexValue>,
    pub i2a: fn(f64, f64, f64, f64, f64, f64) -> Result<f64>,
    pub i2b: fn(f64, f64, f64, f64, f64, f64) -> Result<f64>,
}

impl Default for IntegralFns {
    fn default() -> Self {
        IntegralFns {
            gauss: gauss_integral,
            i1a: eval_i1a,
            i1b: eval_i1b,
            i2a: eval_i2a,
            i2b: eval_i2b,
        }
    }
}

fn i1a_sign_error(t: f64, alpha: f64, theta1: f64, theta2: f64, beta2: f64) -> Result<ComplexValue> {
    eval_i1a(t, alpha, theta1, theta2, beta2).map(|v| -v)
}

impl IntegralFns {
    /// The library integrals with the sign of `I1a` flipped.
    pub fn with_i1a_sign_error() -> Self {
        IntegralFns {
            i1a: i1a_sign_error,
            ..IntegralFns::default()
        }
    }
}

/// One named check of the suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    /// Worst error statistic over the cases, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub level: ValidationLevel,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {:<28} cases={:<5} worst={:.3e} tol={:.1e} time={:.2}s",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.worst,
                c.tolerance,
                c.seconds
            );
        }
        out
    }
}

struct Tally {
    name: String,
    cases: usize,
    worst: f64,
    tolerance: f64,
    start: Instant,
}

impl Tally {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Tally {
            name: name.into(),
            cases: 0,
            worst: 0.0,
            tolerance,
            start: Instant::now(),
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must fail the check.
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            passed: self.worst <= self.tolerance,
            name: self.name,
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Error of a complex closed form against quadrature of its integrand,
/// relative to the integral of the integrand's modulus.
fn complex_error<F: Fn(f64) -> Complex64>(closed: Complex64, f: F, center: f64, precision: f64) -> Result<f64> {
    let r = 12.0 / precision.sqrt();
    let (a, b) = (center - r, center + r);
    let (_, mag) = integrate_with_magnitude(|x| f(x).norm(), a, b, 1e-12)?;
    let (re, _) = integrate_with_magnitude(|x| f(x).re, a, b, 1e-12)?;
    let (im, _) = integrate_with_magnitude(|x| f(x).im, a, b, 1e-12)?;
    Ok((closed - Complex64::new(re, im)).norm() / mag)
}

fn real_error<F: Fn(f64) -> f64>(closed: f64, f: F, center: f64, precision: f64) -> Result<f64> {
    let r = 12.0 / precision.sqrt();
    let (v, mag) = integrate_with_magnitude(f, center - r, center + r, 1e-12)?;
    Ok((closed - v).abs() / mag)
}

/// Tolerance of the elementary integral fuzz.
pub const INTEGRAL_TOLERANCE: f64 = 1e-6;

/// Fuzzes every elementary integral against adaptive quadrature; one
/// outcome per integral.
pub fn integral_checks(fns: &IntegralFns, draws: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = Tally::new("integral gauss", INTEGRAL_TOLERANCE);
    let mut i1a = Tally::new("integral I1a", INTEGRAL_TOLERANCE);
    let mut i1b = Tally::new("integral I1b", INTEGRAL_TOLERANCE);
    let mut i2a = Tally::new("integral I2a", INTEGRAL_TOLERANCE);
    let mut i2b = Tally::new("integral I2b", INTEGRAL_TOLERANCE);
    for _ in 0..draws {
        let t = rng.random_range(-3.0..3.0);
        let alpha = rng.random_range(0.2..3.0);
        let th1 = rng.random_range(-4.0..4.0);
        let th2 = rng.random_range(-4.0..4.0);
        let beta = rng.random_range(0.0..2.0 * PI);
        let p1 = rng.random_range(0.1..3.0);
        let p2 = rng.random_range(0.1..3.0);
        let z1 = rng.random_range(-3.0..3.0);
        let z2 = rng.random_range(-3.0..3.0);

        let a = rng.random_range(0.2..3.0);
        let b = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-4.0..4.0));
        let closed = (fns.gauss)(a, b)?;
        gauss.record(complex_error(closed, |x| (-a * x * x + b * x).exp(), b.re / (2.0 * a), a)?);

        let closed = (fns.i1a)(t, alpha, th1, th2, beta)?;
        let f = |tau: f64| {
            Complex64::from_polar((-alpha * (t - tau).powi(2)).exp(), th1 * (t - tau)) * (th2 * tau + beta).cos()
        };
        i1a.record(complex_error(closed, f, t, alpha)?);

        let closed = (fns.i1b)(t, alpha, th1, p2, z2)?;
        let f = |tau: f64| {
            Complex64::from_polar((-alpha * (t - tau).powi(2) - p2 * (tau - z2).powi(2)).exp(), th1 * (t - tau))
        };
        i1b.record(complex_error(closed, f, (alpha * t + p2 * z2) / (alpha + p2), alpha + p2)?);

        let closed = (fns.i2a)(t, alpha, p1, z1, th2, beta)?;
        let f = |tau: f64| (-alpha * (t - tau).powi(2) - p1 * (t - tau - z1).powi(2)).exp() * (th2 * tau + beta).cos();
        i2a.record(real_error(closed, f, (alpha * t + p1 * (t - z1)) / (alpha + p1), alpha + p1)?);

        let closed = (fns.i2b)(t, alpha, p1, z1, p2, z2)?;
        let f = |tau: f64| (-alpha * (t - tau).powi(2) - p1 * (t - tau - z1).powi(2) - p2 * (tau - z2).powi(2)).exp();
        let s = alpha + p1 + p2;
        i2b.record(real_error(closed, f, (alpha * t + p1 * (t - z1) + p2 * z2) / s, s)?);
    }
    Ok([gauss, i1a, i1b, i2a, i2b].into_iter().map(Tally::finish).collect())
}

/// Volterra tolerance at each order.
pub fn volterra_tolerance(order: usize) -> f64 {
    if order == 1 {
        1e-4
    } else {
        1e-3
    }
}

/// Trapezoid nodes per dimension used against the closed form.
pub fn volterra_grid_points(order: usize) -> usize {
    match order {
        1 => 2048,
        2 => 384,
        _ => 128,
    }
}

/// Relative error of one closed-form term against quadrature. The
/// denominator is floored at `1e-6` times the integral of the absolute
/// integrand so that a term that happens to vanish does not divide by zero.
pub fn volterra_error<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Result<f64> {
    let inst = random_term_instance(order, rng)?;
    let closed = eval_term(&VolterraTermInputs::new(&inst.u_path, &inst.g_path)?, inst.t)?;
    let grid = QuadratureGrid::around(inst.t, inst.alpha, order, volterra_grid_points(order))?;
    let (quad, mag) = quadrature_volterra_with_magnitude(&inst.u_path, &inst.g_path, inst.alpha, order, inst.t, &grid)?;
    Ok((closed - quad).abs() / quad.abs().max(1e-6 * mag).max(f64::MIN_POSITIVE))
}

pub fn volterra_check(order: usize, cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(order as u64));
    let mut tally = Tally::new(format!("volterra order {order}"), volterra_tolerance(order));
    for _ in 0..cases {
        tally.record(volterra_error(order, &mut rng)?);
    }
    Ok(tally.finish())
}

/// A random variational Gaussian and prior Gram with `m` inducing points.
pub fn random_kl_instance<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<(VariationalGaussian, crate::kernels::Gram)> {
    let mut z: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    z.sort_by(f64::total_cmp);
    let kernel = SeKernel::from_length_scale(rng.random_range(0.5..2.0), rng.random_range(0.4..1.5))?;
    let gram = se_gram(&Points::from_scalars(&z), &kernel, 1e-6)?;
    let scale = rng.random_range(0.3..1.2);
    let base = gram.cholesky.l() * scale;
    let chol = DMatrix::from_fn(m, m, |i, j| {
        let noise = 0.05 * kernel.amplitude * rng.sample::<f64, _>(StandardNormal);
        match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => base[(i, i)] + noise.abs(),
            std::cmp::Ordering::Greater => base[(i, j)] + noise,
        }
    });
    let mean = DVector::from_fn(m, |_, _| 0.5 * kernel.amplitude * rng.sample::<f64, _>(StandardNormal));
    Ok((VariationalGaussian::new(mean, chol)?, gram))
}

/// Closed-form KL against Monte Carlo; the statistic is the deviation in
/// standard errors.
pub fn kl_check(instances: usize, draws: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("kl monte carlo", 3.0);
    for _ in 0..instances {
        let m = rng.random_range(2..=20);
        let (q, gram) = random_kl_instance(m, &mut rng)?;
        let exact = kl_term(&q, &gram)?;
        let (est, se) = mc_kl(&q, &gram, draws, &mut rng)?;
        tally.record((est - exact).abs() / se);
    }
    Ok(tally.finish())
}

/// Tolerance of the per-leaf gradient comparison.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

pub fn gradient_outcome(order: usize, seed: u64) -> Result<CheckOutcome> {
    let mut tally = Tally::new(format!("elbo gradient order {order}"), GRADIENT_TOLERANCE);
    let (model, data) = toy_problem(order, seed)?;
    let check = gradient_check(&model, &data, 2, seed, 1e-5)?;
    for (_, err) in &check.leaves {
        tally.record(*err);
    }
    Ok(tally.finish())
}

/// Runs the closed-form validation suite.
pub fn run_validation(level: ValidationLevel, fns: &IntegralFns, seed: u64) -> Result<ValidationReport> {
    let full = level == ValidationLevel::Full;
    let mut checks = integral_checks(fns, if full { 1000 } else { 200 }, seed)?;
    checks.push(volterra_check(1, if full { 100 } else { 20 }, seed)?);
    checks.push(volterra_check(2, if full { 100 } else { 5 }, seed)?);
    if full {
        checks.push(volterra_check(3, 20, seed)?);
    }
    checks.push(if full { kl_check(20, 1_000_000, seed)? } else { kl_check(5, 100_000, seed)? });
    checks.push(gradient_outcome(if full { 2 } else { 1 }, seed)?);
    Ok(ValidationReport { level, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrals_pass_and_mutation_fails() {
        let ok = integral_checks(&IntegralFns::default(), 30, 7).unwrap();
        assert!(ok.iter().all(|c| c.passed), "{ok:?}");
        let bad = integral_checks(&IntegralFns::with_i1a_sign_error(), 30, 7).unwrap();
        assert!(!bad.iter().find(|c| c.name == "integral I1a").unwrap().passed);
    }

    #[test]
    fn nan_fails_a_tally() {
        let mut t = Tally::new("x", 1.0);
        t.record(0.5);
        t.record(f64::NAN);
        assert!(!t.finish().passed);
    }

    #[test]
    fn kl_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in [2, 7, 20] {
            let (q, g) = random_kl_instance(m, &mut rng).unwrap();
            assert_eq!(q.len(), m);
            assert!(kl_term(&q, &g).unwrap() > 0.0);
        }
    }
}
