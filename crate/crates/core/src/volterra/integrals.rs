//! One-dimensional Gaussian integrals that the Volterra closed form factors
//! into. All integrals run over the whole real line.
//!
//! The checked `eval_*` functions validate their parameters; the crate-private
//! forms skip validation for the hot loops.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{NvkmError, Result};

/// Complex scalar used by the Fourier branch of the closed form.
pub type ComplexValue = Complex64;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(NvkmError::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(NvkmError::invalid(format!("{name} must be non-negative, got {v}")))
    }
}

/// `∫ exp(-a x² + b x) dx = sqrt(π/a) exp(b² / 4a)` for complex `b`.
pub fn gauss_integral(a: f64, b: ComplexValue) -> Result<ComplexValue> {
    positive("a", a)?;
    Ok((PI / a).sqrt() * (b * b / (4.0 * a)).exp())
}

/// `I₁ₐ = ∫ exp(-α(t-τ)² + iθ₁(t-τ)) cos(θ₂τ + β₂) dτ`.
///
/// Closed form `sqrt(π)/(2 sqrt(α)) (1 + e^{θ₁θ₂/α + 2iβ₂ + 2iθ₂t})
/// e^{-(θ₁+θ₂)²/4α - i(β₂ + θ₂t)}`, evaluated here as the equivalent
/// `½ sqrt(π/α) [e^{iφ} e^{-(θ₁-θ₂)²/4α} + e^{-iφ} e^{-(θ₁+θ₂)²/4α}]`
/// with `φ = θ₂t + β₂`, which never forms the overflowing `e^{θ₁θ₂/α}`.
pub fn eval_i1a(t: f64, alpha: f64, theta1: f64, theta2: f64, beta2: f64) -> Result<ComplexValue> {
    positive("alpha", alpha)?;
    Ok(i1a(t, alpha, theta1, theta2, beta2))
}

#[inline]
pub(crate) fn i1a(t: f64, alpha: f64, theta1: f64, theta2: f64, beta2: f64) -> Complex64 {
    let rot = Complex64::from_polar(1.0, theta2 * t + beta2);
    i1a_rotated(alpha, theta1, theta2, rot)
}

/// `I₁ₐ` given the precomputed unit phasor `e^{i(θ₂t + β₂)}`.
#[inline]
pub(crate) fn i1a_rotated(alpha: f64, theta1: f64, theta2: f64, rot: Complex64) -> Complex64 {
    let inv4a = 0.25 / alpha;
    let dm = theta1 - theta2;
    let dp = theta1 + theta2;
    let em = (-dm * dm * inv4a).exp();
    let ep = (-dp * dp * inv4a).exp();
    let half = 0.5 * (PI / alpha).sqrt();
    half * (rot * em + rot.conj() * ep)
}

/// `I₁ₐ` and `∂I₁ₐ/∂θ₁` given the phasor `e^{i(θ₂t + β₂)}`.
#[inline]
pub(crate) fn i1a_rotated_with_grad(alpha: f64, theta1: f64, theta2: f64, rot: Complex64) -> (Complex64, Complex64) {
    let inv4a = 0.25 / alpha;
    let dm = theta1 - theta2;
    let dp = theta1 + theta2;
    let em = (-dm * dm * inv4a).exp();
    let ep = (-dp * dp * inv4a).exp();
    let half = 0.5 * (PI / alpha).sqrt();
    let a = rot * em;
    let b = rot.conj() * ep;
    let g = -2.0 * inv4a;
    (half * (a + b), half * (a * (g * dm) + b * (g * dp)))
}

/// `I₁ᵦ = ∫ exp(-α(t-τ)² + iθ₁(t-τ)) exp(-p₂(τ-z₂)²) dτ
///      = sqrt(π/(α+p₂)) exp((-4αp₂(t-z₂)² + iθ₁(4p₂t - 4p₂z₂ + iθ₁)) / 4(α+p₂))`.
pub fn eval_i1b(t: f64, alpha: f64, theta1: f64, p2: f64, z2: f64) -> Result<ComplexValue> {
    positive("alpha", alpha)?;
    positive("p2", p2)?;
    Ok(i1b(t, alpha, theta1, p2, z2))
}

#[inline]
pub(crate) fn i1b(t: f64, alpha: f64, theta1: f64, p2: f64, z2: f64) -> Complex64 {
    let s = alpha + p2;
    let d = t - z2;
    let re = -(alpha * p2 * d * d) / s - theta1 * theta1 / (4.0 * s);
    let im = theta1 * p2 * d / s;
    (PI / s).sqrt() * Complex64::new(re, im).exp()
}

/// `∂I₁ᵦ/∂θ₁ = I₁ᵦ (i p₂ (t - z₂) - θ₁/2) / (α + p₂)`.
#[cfg(test)]
fn i1b_dtheta(value: Complex64, t: f64, alpha: f64, theta1: f64, p2: f64, z2: f64) -> Complex64 {
    let s = alpha + p2;
    value * Complex64::new(-0.5 * theta1 / s, p2 * (t - z2) / s)
}

/// `I₂ₐ = ∫ exp(-α(t-τ)² - p₁(t-τ-z₁)²) cos(θ₂τ + β₂) dτ
///      = sqrt(π/(α+p₁)) exp(-(4αp₁z₁² + θ₂²)/4(α+p₁)) cos(θ₂(t - p₁z₁/(α+p₁)) + β₂)`.
pub fn eval_i2a(t: f64, alpha: f64, p1: f64, z1: f64, theta2: f64, beta2: f64) -> Result<f64> {
    positive("alpha", alpha)?;
    non_negative("p1", p1)?;
    Ok(i2a(t, alpha, p1, z1, theta2, beta2))
}

#[inline]
pub(crate) fn i2a(t: f64, alpha: f64, p1: f64, z1: f64, theta2: f64, beta2: f64) -> f64 {
    let a = alpha + p1;
    let amp = (PI / a).sqrt() * (-(4.0 * alpha * p1 * z1 * z1 + theta2 * theta2) / (4.0 * a)).exp();
    amp * (theta2 * (t - p1 * z1 / a) + beta2).cos()
}

/// `I₂ₐ` and `∂I₂ₐ/∂p₁`.
#[inline]
pub(crate) fn i2a_with_grad(t: f64, alpha: f64, p1: f64, z1: f64, theta2: f64, beta2: f64) -> (f64, f64) {
    let a = alpha + p1;
    let a2 = a * a;
    let amp = (PI / a).sqrt() * (-(4.0 * alpha * p1 * z1 * z1 + theta2 * theta2) / (4.0 * a)).exp();
    let phase = theta2 * (t - p1 * z1 / a) + beta2;
    let (s, c) = phase.sin_cos();
    let dlog = -0.5 / a - (alpha * alpha * z1 * z1 - 0.25 * theta2 * theta2) / a2;
    let dphase = -theta2 * z1 * alpha / a2;
    (amp * c, amp * (c * dlog - s * dphase))
}

/// `I₂ᵦ = ∫ exp(-α(t-τ)² - p₁(t-τ-z₁)²) exp(-p₂(τ-z₂)²) dτ
///      = sqrt(π/(α+p₁+p₂)) exp(-(α(p₁z₁² + p₂(t-z₂)²) + p₁p₂(-t+z₁+z₂)²)/(α+p₁+p₂))`.
pub fn eval_i2b(t: f64, alpha: f64, p1: f64, z1: f64, p2: f64, z2: f64) -> Result<f64> {
    positive("alpha", alpha)?;
    non_negative("p1", p1)?;
    positive("p2", p2)?;
    Ok(i2b(t, alpha, p1, z1, p2, z2))
}

#[inline]
pub(crate) fn i2b(t: f64, alpha: f64, p1: f64, z1: f64, p2: f64, z2: f64) -> f64 {
    let a = alpha + p1 + p2;
    let d2 = t - z2;
    let e = z1 + z2 - t;
    let n = alpha * (p1 * z1 * z1 + p2 * d2 * d2) + p1 * p2 * e * e;
    (PI / a).sqrt() * (-n / a).exp()
}

/// `I₂ᵦ` and `∂I₂ᵦ/∂p₁`.
#[inline]
pub(crate) fn i2b_with_grad(t: f64, alpha: f64, p1: f64, z1: f64, p2: f64, z2: f64) -> (f64, f64) {
    let a = alpha + p1 + p2;
    let d2 = t - z2;
    let e = z1 + z2 - t;
    let n = alpha * (p1 * z1 * z1 + p2 * d2 * d2) + p1 * p2 * e * e;
    let v = (PI / a).sqrt() * (-n / a).exp();
    let dn = alpha * z1 * z1 + p2 * e * e;
    let dlog = -0.5 / a - (dn * a - n) / (a * a);
    (v, v * dlog)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integral_standard_value() {
        let v = gauss_integral(1.0, Complex64::new(0.0, 0.0)).unwrap();
        assert!((v.re - PI.sqrt()).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
        assert!(gauss_integral(0.0, Complex64::new(1.0, 0.0)).is_err());
        assert!(gauss_integral(-1.0, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn i1a_zero_frequencies() {
        let v = eval_i1a(0.37, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!((v.re - PI.sqrt()).abs() < 1e-14);
        assert!(v.im.abs() < 1e-15);
        assert!(eval_i1a(0.0, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn i1a_matches_literal_closed_form() {
        let (t, a, th1, th2, b2) = (0.7f64, 1.3f64, 0.5, 2.0, 0.3);
        let lit = (PI.sqrt() / (2.0 * a.sqrt()))
            * (1.0 + Complex64::new(th1 * th2 / a, 2.0 * b2 + 2.0 * th2 * t).exp())
            * Complex64::new(-(th1 + th2).powi(2) / (4.0 * a), -(b2 + th2 * t)).exp();
        let v = eval_i1a(t, a, th1, th2, b2).unwrap();
        assert!((v - lit).norm() < 1e-14);
    }

    #[test]
    fn i1b_aligned_centres() {
        let v = eval_i1b(0.4, 1.0, 0.0, 1.0, 0.4).unwrap();
        assert!((v.re - (PI / 2.0).sqrt()).abs() < 1e-15);
        assert!(v.im.abs() < 1e-12);
        let v = eval_i1b(1.1, 0.8, 0.0, 1.7, -0.4).unwrap();
        assert!(v.im.abs() < 1e-12);
        assert!(eval_i1b(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn i2a_reductions() {
        let v = eval_i2a(0.3, 2.5, 0.0, 0.7, 0.0, 0.0).unwrap();
        assert!((v - (PI / 2.5).sqrt()).abs() < 1e-15);
        let a = eval_i2a(0.1, 1.0, 2.0, 0.5, 1.5, 0.2).unwrap();
        let b = eval_i2a(0.1, 1.0, 2.0, 0.5, 1.5, 0.2 + 2.0 * PI).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(eval_i2a(0.0, 0.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn i2b_reductions() {
        let v = eval_i2b(0.0, 1.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        assert!((v - (PI / 3.0).sqrt()).abs() < 1e-15);
        let a = eval_i2b(0.6, 0.9, 0.0, 1.3, 2.0, -0.2).unwrap();
        let b = eval_i1b(0.6, 0.9, 0.0, 2.0, -0.2).unwrap();
        assert!((a - b.re).abs() < 1e-15);
        assert!(eval_i2b(0.0, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let (t, alpha) = (0.4, 0.8);
        let (th2, b2) = (1.1, 0.6);
        let rot = Complex64::from_polar(1.0, th2 * t + b2);
        let th1 = 0.9;
        let (_, g) = i1a_rotated_with_grad(alpha, th1, th2, rot);
        let h = 1e-6;
        let fre = central(|x| i1a(t, alpha, x, th2, b2).re, th1, h);
        let fim = central(|x| i1a(t, alpha, x, th2, b2).im, th1, h);
        assert!((g.re - fre).abs() < 1e-8 && (g.im - fim).abs() < 1e-8);

        let v = i1b(t, alpha, th1, 1.3, -0.5);
        let g = i1b_dtheta(v, t, alpha, th1, 1.3, -0.5);
        let fre = central(|x| i1b(t, alpha, x, 1.3, -0.5).re, th1, h);
        let fim = central(|x| i1b(t, alpha, x, 1.3, -0.5).im, th1, h);
        assert!((g.re - fre).abs() < 1e-8 && (g.im - fim).abs() < 1e-8);

        let (_, g) = i2a_with_grad(t, alpha, 0.7, 0.3, th2, b2);
        let f = central(|p| i2a(t, alpha, p, 0.3, th2, b2), 0.7, h);
        assert!((g - f).abs() < 1e-8);

        let (_, g) = i2b_with_grad(t, alpha, 0.7, 0.3, 1.2, -0.4);
        let f = central(|p| i2b(t, alpha, p, 0.3, 1.2, -0.4), 0.7, h);
        assert!((g - f).abs() < 1e-8);
    }
}
