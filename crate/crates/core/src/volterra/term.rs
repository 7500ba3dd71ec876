//! Closed-form evaluation of one Volterra term
//! `I_c(t) = ∫ e^{-α Σ(t-τ_i)²} G'(t-τ_1, ..., t-τ_c) Π_j u(τ_j) dτ`
//! for explicit paths `G'` (SE, dimension `c`) and `u` (SE, dimension 1).
//!
//! Writing `u(τ) = Σ_k a_k e_k(τ)` over its cosine and kernel components and
//! `G'(s) = Σ_i c_i cos(θ_iᵀ s + β_i) + Σ_j d_j exp(-p_G ‖s - z_j‖²)`, the term
//! factorises into
//!
//! * `I₁ = Σ_i c_i ½ (e^{iβ_i} Π_j A⁺_ij + e^{-iβ_i} Π_j A⁻_ij)` where
//!   `A±_ij = Σ_k a_k ∫ e^{-α(t-τ)² ± iθ_ij(t-τ)} e_k(τ) dτ` (I₁ₐ / I₁ᵦ), and
//! * `I₂ = Σ_j d_j Π_l B(z_jl)` with
//!   `B(z) = Σ_k a_k ∫ e^{-α(t-τ)² - p_G(t-τ-z)²} e_k(τ) dτ` (I₂ₐ / I₂ᵦ).
//!
//! The conjugate branch `A⁻` negates the VK frequency and the cosine
//! frequency and phase of the input component, keeping `p_u > 0`; it is the
//! complex conjugate of `A⁺`, so `I₁` is real up to rounding.
//!
//! Training uses a second, single-branch evaluation (`c_i Re(e^{iβ_i} Π_j A⁺_ij)`)
//! that also produces the reverse-mode adjoint with respect
//! to every coefficient, frequency and the VK precision.

use num_complex::Complex64;

use crate::error::{NvkmError, Result};
use crate::pathwise::ExplicitPath;

use super::integrals::{i1a_rotated, i1a_rotated_with_grad, i1b, i2a, i2a_with_grad, i2b, i2b_with_grad};

/// Maximum tolerated `|Im I₁|` relative to `Σ_i |term_i|`.
pub const REALNESS_TOLERANCE: f64 = 1e-9;

/// Input-process path split into its cosine and kernel components.
#[derive(Debug, Clone)]
pub(crate) struct InputSide {
    pub fourier_coef: Vec<f64>,
    pub fourier_freq: Vec<f64>,
    pub fourier_phase: Vec<f64>,
    pub kernel_coef: Vec<f64>,
    pub kernel_z: Vec<f64>,
    pub precision: f64,
}

impl InputSide {
    pub fn from_path(path: &ExplicitPath) -> Result<Self> {
        if path.dim() != 1 {
            return Err(NvkmError::invalid("the input path must be one-dimensional"));
        }
        if path.decay() != 0.0 {
            return Err(NvkmError::invalid("the input path must not carry a decay envelope"));
        }
        let b = path.basis();
        Ok(InputSide {
            fourier_coef: b.coefficients(),
            fourier_freq: (0..b.len()).map(|i| b.frequency(i)[0]).collect(),
            fourier_phase: b.phases().to_vec(),
            kernel_coef: path.kernel_coefficients(),
            kernel_z: path.inducing().as_slice().to_vec(),
            precision: path.kernel().precision,
        })
    }

    /// Number of components `K = N_b + M`.
    pub fn len(&self) -> usize {
        self.fourier_coef.len() + self.kernel_coef.len()
    }
}

/// Per-time quantities of the input side shared by every term at `t`.
#[derive(Debug, Clone)]
pub(crate) struct InputAt {
    pub t: f64,
    /// `e^{i(θ_m t + β_m)}` per cosine component.
    pub rot: Vec<Complex64>,
    /// `sqrt(π/(α+p_u)) exp(-α p_u (t-z_n)² / (α+p_u))` per kernel component.
    pub kgain: Vec<f64>,
    /// `p_u (t - z_n) / (α + p_u)` per kernel component.
    pub kfreq: Vec<f64>,
}

impl InputAt {
    pub fn new(side: &InputSide, alpha: f64, t: f64) -> Self {
        let s = alpha + side.precision;
        let norm = (std::f64::consts::PI / s).sqrt();
        let rot = side
            .fourier_freq
            .iter()
            .zip(&side.fourier_phase)
            .map(|(th, b)| Complex64::from_polar(1.0, th * t + b))
            .collect();
        let mut kgain = Vec::with_capacity(side.kernel_z.len());
        let mut kfreq = Vec::with_capacity(side.kernel_z.len());
        for z in &side.kernel_z {
            let d = t - z;
            kgain.push(norm * (-alpha * side.precision * d * d / s).exp());
            kfreq.push(side.precision * d / s);
        }
        InputAt { t, rot, kgain, kfreq }
    }
}

/// Volterra-kernel path split into cosine and kernel components, with the
/// grid coordinates reduced to their distinct values.
#[derive(Debug, Clone)]
pub(crate) struct KernelSide {
    pub order: usize,
    pub decay: f64,
    pub precision: f64,
    pub fourier_coef: Vec<f64>,
    /// `N_b × c` row-major.
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
    pub kernel_coef: Vec<f64>,
    /// Distinct coordinate values over all inducing inputs.
    pub axis: Vec<f64>,
    /// `M × c` row-major indices into `axis`.
    pub axis_index: Vec<usize>,
}

impl KernelSide {
    pub fn from_path(path: &ExplicitPath) -> Result<Self> {
        let c = path.dim();
        if path.decay() <= 0.0 {
            return Err(NvkmError::invalid("the Volterra-kernel path needs a positive decay"));
        }
        let b = path.basis();
        let z = path.inducing().as_slice();
        let mut axis: Vec<f64> = z.to_vec();
        axis.sort_by(|a, b| a.partial_cmp(b).expect("finite inducing inputs"));
        axis.dedup();
        let axis_index = z
            .iter()
            .map(|v| axis.binary_search_by(|a| a.partial_cmp(v).unwrap()).unwrap())
            .collect();
        let freqs = (0..b.len()).flat_map(|i| b.frequency(i).to_vec()).collect();
        Ok(KernelSide {
            order: c,
            decay: path.decay(),
            precision: path.kernel().precision,
            fourier_coef: b.coefficients(),
            freqs,
            phases: b.phases().to_vec(),
            kernel_coef: path.kernel_coefficients(),
            axis,
            axis_index,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.phases.len()
    }

    pub fn n_inducing(&self) -> usize {
        self.kernel_coef.len()
    }
}

/// The two explicit paths that define one Volterra term.
#[derive(Debug, Clone)]
pub struct VolterraTermInputs<'a> {
    pub u_path: &'a ExplicitPath,
    pub g_path: &'a ExplicitPath,
    pub order: usize,
    pub decay: f64,
    input: InputSide,
    kernel: KernelSide,
}

impl<'a> VolterraTermInputs<'a> {
    pub fn new(u_path: &'a ExplicitPath, g_path: &'a ExplicitPath) -> Result<Self> {
        let input = InputSide::from_path(u_path)?;
        let kernel = KernelSide::from_path(g_path)?;
        Ok(VolterraTermInputs {
            u_path,
            g_path,
            order: g_path.dim(),
            decay: g_path.decay(),
            input,
            kernel,
        })
    }
}

/// `A±(θ) = Σ_k a_k ∫ e^{-α(t-τ)² ± iθ(t-τ)} e_k(τ) dτ` for one branch.
fn input_fourier_integral(side: &InputSide, at: &InputAt, alpha: f64, theta: f64, conjugate: bool) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let t = at.t;
    for m in 0..side.fourier_coef.len() {
        let v = if conjugate {
            i1a_rotated(alpha, -theta, -side.fourier_freq[m], at.rot[m].conj())
        } else {
            i1a_rotated(alpha, theta, side.fourier_freq[m], at.rot[m])
        };
        acc += side.fourier_coef[m] * v;
    }
    let th = if conjugate { -theta } else { theta };
    for n in 0..side.kernel_coef.len() {
        acc += side.kernel_coef[n] * i1b(t, alpha, th, side.precision, side.kernel_z[n]);
    }
    acc
}

/// `B(z) = Σ_k a_k ∫ e^{-α(t-τ)² - p(t-τ-z)²} e_k(τ) dτ`.
fn input_kernel_integral(side: &InputSide, t: f64, alpha: f64, p: f64, z: f64) -> f64 {
    let mut acc = 0.0;
    for m in 0..side.fourier_coef.len() {
        acc += side.fourier_coef[m] * i2a(t, alpha, p, z, side.fourier_freq[m], side.fourier_phase[m]);
    }
    for n in 0..side.kernel_coef.len() {
        acc += side.kernel_coef[n] * i2b(t, alpha, p, z, side.precision, side.kernel_z[n]);
    }
    acc
}

/// Closed-form value of the order-`c` term at `t`, assembled from both
/// conjugate branches. Fails with `NumericInconsistency` if the imaginary
/// residual exceeds [`REALNESS_TOLERANCE`].
pub fn eval_term(inputs: &VolterraTermInputs<'_>, t: f64) -> Result<f64> {
    let (value, residual, scale) = eval_term_parts(inputs, t)?;
    if residual.abs() > REALNESS_TOLERANCE * scale + f64::MIN_POSITIVE {
        return Err(NvkmError::NumericInconsistency(format!(
            "imaginary residual {residual:e} against term scale {scale:e} at t = {t}"
        )));
    }
    Ok(value)
}

/// Returns `(Re I_c, Im I₁, Σ|I₁ terms| + |I₂|)`.
pub(crate) fn eval_term_parts(inputs: &VolterraTermInputs<'_>, t: f64) -> Result<(f64, f64, f64)> {
    if !t.is_finite() {
        return Err(NvkmError::invalid(format!("time must be finite, got {t}")));
    }
    let ks = &inputs.kernel;
    let us = &inputs.input;
    let alpha = ks.decay;
    let c = ks.order;
    let at = InputAt::new(us, alpha, t);

    let mut i1 = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for i in 0..ks.n_basis() {
        let mut plus = Complex64::from_polar(1.0, ks.phases[i]);
        let mut minus = plus.conj();
        for j in 0..c {
            let th = ks.freqs[i * c + j];
            plus *= input_fourier_integral(us, &at, alpha, th, false);
            minus *= input_fourier_integral(us, &at, alpha, th, true);
        }
        let term = ks.fourier_coef[i] * 0.5 * (plus + minus);
        scale += term.norm();
        i1 += term;
    }

    let b: Vec<f64> = ks
        .axis
        .iter()
        .map(|z| input_kernel_integral(us, t, alpha, ks.precision, *z))
        .collect();
    let mut i2 = 0.0;
    for j in 0..ks.n_inducing() {
        let prod: f64 = ks.axis_index[j * c..(j + 1) * c].iter().map(|&a| b[a]).product();
        i2 += ks.kernel_coef[j] * prod;
    }
    scale += i2.abs();
    Ok((i1.re + i2, i1.im, scale))
}

/// One output sample: a shared input path and one VK path per order.
#[derive(Debug, Clone)]
pub struct OutputSample<'a> {
    terms: Vec<VolterraTermInputs<'a>>,
}

impl<'a> OutputSample<'a> {
    pub fn new(u_path: &'a ExplicitPath, g_paths: &'a [ExplicitPath]) -> Result<Self> {
        if g_paths.is_empty() {
            return Err(NvkmError::invalid("an output needs at least one Volterra term"));
        }
        let terms = g_paths
            .iter()
            .map(|g| VolterraTermInputs::new(u_path, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(OutputSample { terms })
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        self.terms.iter().map(|term| eval_term(term, t)).sum()
    }

    pub fn eval_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.iter().map(|t| self.eval(*t)).collect()
    }
}

/// `Σ_c I_c(t)`.
pub fn eval_output_sample(sample: &OutputSample<'_>, t: f64) -> Result<f64> {
    sample.eval(t)
}

/// Gradient accumulator for one VK path's effective coefficients.
#[derive(Debug, Clone)]
pub(crate) struct KernelSideGrad {
    pub fourier_coef: Vec<f64>,
    pub freqs: Vec<f64>,
    pub kernel_coef: Vec<f64>,
    pub precision: f64,
}

impl KernelSideGrad {
    pub fn zeros(side: &KernelSide) -> Self {
        KernelSideGrad {
            fourier_coef: vec![0.0; side.n_basis()],
            freqs: vec![0.0; side.freqs.len()],
            kernel_coef: vec![0.0; side.n_inducing()],
            precision: 0.0,
        }
    }
}

/// Workspace for the single-branch forward pass and its adjoint at one `t`.
#[derive(Debug, Default)]
pub(crate) struct TermWorkspace {
    /// `E_ijk`, `(N_b · c) × K`.
    e: Vec<Complex64>,
    /// `A_ij` and `∂A_ij/∂θ_ij`.
    a: Vec<Complex64>,
    da: Vec<Complex64>,
    /// `F_ak`, `n_axis × K`.
    f: Vec<f64>,
    b: Vec<f64>,
    db: Vec<f64>,
    bbar: Vec<f64>,
}

impl TermWorkspace {
    /// Value of the term at `at.t`, leaving the intermediates needed by
    /// [`TermWorkspace::backward`] in the workspace.
    pub fn forward(&mut self, us: &InputSide, at: &InputAt, ks: &KernelSide) -> f64 {
        let alpha = ks.decay;
        let c = ks.order;
        let nb = ks.n_basis();
        let nf = us.fourier_coef.len();
        let kn = us.len();
        let s = alpha + us.precision;
        let inv4s = 0.25 / s;

        self.e.resize(nb * c * kn, Complex64::new(0.0, 0.0));
        self.a.resize(nb * c, Complex64::new(0.0, 0.0));
        self.da.resize(nb * c, Complex64::new(0.0, 0.0));
        for ij in 0..nb * c {
            let th = ks.freqs[ij];
            let row = &mut self.e[ij * kn..(ij + 1) * kn];
            let mut acc = Complex64::new(0.0, 0.0);
            let mut dacc = Complex64::new(0.0, 0.0);
            for m in 0..nf {
                let (v, g) = i1a_rotated_with_grad(alpha, th, us.fourier_freq[m], at.rot[m]);
                row[m] = v;
                acc += us.fourier_coef[m] * v;
                dacc += us.fourier_coef[m] * g;
            }
            let common = (-th * th * inv4s).exp();
            for n in 0..us.kernel_coef.len() {
                let w = at.kfreq[n];
                let v = Complex64::from_polar(at.kgain[n] * common, th * w);
                row[nf + n] = v;
                acc += us.kernel_coef[n] * v;
                dacc += us.kernel_coef[n] * v * Complex64::new(-0.5 * th / s, w);
            }
            self.a[ij] = acc;
            self.da[ij] = dacc;
        }
        let mut value = 0.0;
        for i in 0..nb {
            let mut p = Complex64::from_polar(1.0, ks.phases[i]);
            for j in 0..c {
                p *= self.a[i * c + j];
            }
            value += ks.fourier_coef[i] * p.re;
        }

        let na = ks.axis.len();
        self.f.resize(na * kn, 0.0);
        self.b.resize(na, 0.0);
        self.db.resize(na, 0.0);
        let pg = ks.precision;
        for (ai, &z) in ks.axis.iter().enumerate() {
            let row = &mut self.f[ai * kn..(ai + 1) * kn];
            let mut acc = 0.0;
            let mut dacc = 0.0;
            for m in 0..nf {
                let (v, g) = i2a_with_grad(at.t, alpha, pg, z, us.fourier_freq[m], us.fourier_phase[m]);
                row[m] = v;
                acc += us.fourier_coef[m] * v;
                dacc += us.fourier_coef[m] * g;
            }
            for n in 0..us.kernel_coef.len() {
                let (v, g) = i2b_with_grad(at.t, alpha, pg, z, us.precision, us.kernel_z[n]);
                row[nf + n] = v;
                acc += us.kernel_coef[n] * v;
                dacc += us.kernel_coef[n] * g;
            }
            self.b[ai] = acc;
            self.db[ai] = dacc;
        }
        for j in 0..ks.n_inducing() {
            let prod: f64 = ks.axis_index[j * c..(j + 1) * c].iter().map(|&a| self.b[a]).product();
            value += ks.kernel_coef[j] * prod;
        }
        value
    }

    /// Adds `fbar · ∂I_c/∂(·)` to the gradient accumulators. Must follow a
    /// [`TermWorkspace::forward`] call with the same arguments.
    pub fn backward(
        &mut self,
        fbar: f64,
        us: &InputSide,
        ks: &KernelSide,
        input_grad: &mut [f64],
        kernel_grad: &mut KernelSideGrad,
    ) {
        if fbar == 0.0 {
            return;
        }
        let c = ks.order;
        let nb = ks.n_basis();
        let kn = us.len();
        // Orders are capped at 4 by the model.
        let mut partial = [Complex64::new(0.0, 0.0); 4];
        for i in 0..nb {
            let rot = Complex64::from_polar(1.0, ks.phases[i]);
            let row = &self.a[i * c..(i + 1) * c];
            let full: Complex64 = row.iter().fold(rot, |acc, x| acc * x);
            kernel_grad.fourier_coef[i] += fbar * full.re;
            let scale = fbar * ks.fourier_coef[i];
            for j in 0..c {
                let mut w = rot * scale;
                for (l, x) in row.iter().enumerate() {
                    if l != j {
                        w *= x;
                    }
                }
                partial[j] = w;
            }
            for j in 0..c {
                let ij = i * c + j;
                let w = partial[j];
                kernel_grad.freqs[ij] += (w * self.da[ij]).re;
                let erow = &self.e[ij * kn..(ij + 1) * kn];
                for (g, e) in input_grad.iter_mut().zip(erow) {
                    *g += w.re * e.re - w.im * e.im;
                }
            }
        }

        let na = ks.axis.len();
        self.bbar.clear();
        self.bbar.resize(na, 0.0);
        for j in 0..ks.n_inducing() {
            let idx = &ks.axis_index[j * c..(j + 1) * c];
            let prod: f64 = idx.iter().map(|&a| self.b[a]).product();
            kernel_grad.kernel_coef[j] += fbar * prod;
            let scale = fbar * ks.kernel_coef[j];
            for l in 0..c {
                let mut others = scale;
                for (l2, &a) in idx.iter().enumerate() {
                    if l2 != l {
                        others *= self.b[a];
                    }
                }
                self.bbar[idx[l]] += others;
            }
        }
        for ai in 0..na {
            let bb = self.bbar[ai];
            if bb == 0.0 {
                continue;
            }
            kernel_grad.precision += bb * self.db[ai];
            let frow = &self.f[ai * kn..(ai + 1) * kn];
            for (g, f) in input_grad.iter_mut().zip(frow) {
                *g += bb * f;
            }
        }
    }
}
