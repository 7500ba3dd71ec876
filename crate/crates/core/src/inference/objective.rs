//! ELBO estimation and its reverse-mode gradient.
//!
//! All random draws of one estimate (basis functions and `ε` for every path
//! and sample) are taken up front from the caller's generator, so the
//! objective is a deterministic function of the parameters for a fixed
//! generator state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{log_sum_exp, TimeSeriesDataset};
use crate::error::{NvkmError, Result};
use crate::kernels::{sq_dist, Gram, Points, SeKernel};
use crate::model::{kl_term_with_grad, pack_chol_grad, Leaf, ParamLayout, VolterraModel};
use crate::pathwise::{draw_basis, ExplicitPath, FourierBasis, VariationalGaussian};
use crate::volterra::{InputAt, InputSide, KernelSide, KernelSideGrad, TermWorkspace};

/// Indices of the observations that enter one estimate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    /// `(output, index)` pairs.
    pub outputs: Vec<(usize, usize)>,
    /// Indices into the observed input series.
    pub inputs: Vec<usize>,
}

impl Batch {
    /// Every observation of `ds`.
    pub fn full(ds: &TimeSeriesDataset) -> Self {
        let outputs = ds
            .outputs
            .iter()
            .enumerate()
            .flat_map(|(d, s)| (0..s.len()).map(move |i| (d, i)))
            .collect();
        let inputs = ds.input.as_ref().map(|s| (0..s.len()).collect()).unwrap_or_default();
        Batch { outputs, inputs }
    }

    /// Uniform draw without replacement of up to `size` output points and
    /// `size` input points.
    pub fn sample<R: Rng + ?Sized>(ds: &TimeSeriesDataset, size: usize, rng: &mut R) -> Self {
        let all = Batch::full(ds);
        let pick = |n: usize, rng: &mut R| {
            let mut idx = rand::seq::index::sample(rng, n, size.min(n)).into_vec();
            idx.sort_unstable();
            idx
        };
        let outputs = pick(all.outputs.len(), rng).into_iter().map(|i| all.outputs[i]).collect();
        let inputs = pick(all.inputs.len(), rng);
        Batch { outputs, inputs }
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty() && self.inputs.is_empty()
    }
}

/// Random draws of one joint sample: a basis and `ε` per path.
#[derive(Debug, Clone)]
pub(crate) struct SampleDraw {
    pub input_basis: FourierBasis,
    pub input_eps: Vec<f64>,
    pub kernel_basis: Vec<FourierBasis>,
    pub kernel_eps: Vec<Vec<f64>>,
}

fn eps<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `count` joint samples. Bases are drawn for a unit-frequency kernel
/// and rescaled to the current hyperparameters when paths are built.
pub(crate) fn draw_samples<R: Rng + ?Sized>(model: &VolterraModel, count: usize, rng: &mut R) -> Result<Vec<SampleDraw>> {
    let unit = SeKernel::new(1.0, 0.5)?;
    let nb = model.config.n_basis;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let input_basis = draw_basis(&unit, 1, nb, rng)?;
        let input_eps = eps(model.input.variational.len(), rng);
        let mut kernel_basis = Vec::with_capacity(model.kernels.len());
        let mut kernel_eps = Vec::with_capacity(model.kernels.len());
        for spec in &model.kernels {
            kernel_basis.push(draw_basis(&unit, spec.order, nb, rng)?);
            kernel_eps.push(eps(spec.variational.len(), rng));
        }
        out.push(SampleDraw {
            input_basis,
            input_eps,
            kernel_basis,
            kernel_eps,
        });
    }
    Ok(out)
}

/// One conditioned path with the intermediates of its construction.
pub(crate) struct BuiltPath {
    pub path: ExplicitPath,
    features: DMatrix<f64>,
}

pub(crate) fn build_path(
    draw: &FourierBasis,
    eps: &[f64],
    q: &VariationalGaussian,
    z: &Points,
    kernel: &SeKernel,
    gram: &Gram,
    decay: f64,
) -> Result<BuiltPath> {
    let basis = draw.with_kernel(kernel);
    let v = DVector::from_vec(q.reparameterize(eps));
    let features = basis.feature_matrix(z);
    let resid = v - &features * DVector::from_column_slice(basis.weights());
    let coef = gram.cholesky.solve(&resid);
    let path = ExplicitPath::from_parts(basis, z.clone(), coef.as_slice().to_vec(), *kernel, decay)?;
    Ok(BuiltPath { path, features })
}

/// Prior Grams of every path at the current hyperparameters.
pub(crate) struct Grams {
    pub input: Gram,
    pub kernels: Vec<Gram>,
}

impl Grams {
    pub fn new(model: &VolterraModel) -> Result<Self> {
        Ok(Grams {
            input: model.input_gram()?,
            kernels: (0..model.kernels.len()).map(|k| model.kernel_gram(k)).collect::<Result<_>>()?,
        })
    }
}

/// All paths of one joint sample.
pub(crate) struct BuiltSample {
    pub input: BuiltPath,
    pub kernels: Vec<BuiltPath>,
    pub input_side: InputSide,
    pub kernel_sides: Vec<KernelSide>,
}

pub(crate) fn build_sample(model: &VolterraModel, grams: &Grams, draw: &SampleDraw) -> Result<BuiltSample> {
    let input = build_path(
        &draw.input_basis,
        &draw.input_eps,
        &model.input.variational,
        &model.input.inducing,
        &model.input.kernel,
        &grams.input,
        0.0,
    )?;
    let mut kernels = Vec::with_capacity(model.kernels.len());
    for (k, spec) in model.kernels.iter().enumerate() {
        kernels.push(build_path(
            &draw.kernel_basis[k],
            &draw.kernel_eps[k],
            &spec.variational,
            &spec.inducing,
            &spec.kernel,
            &grams.kernels[k],
            spec.decay,
        )?);
    }
    let input_side = InputSide::from_path(&input.path)?;
    let kernel_sides = kernels
        .iter()
        .map(|b| KernelSide::from_path(&b.path))
        .collect::<Result<Vec<_>>>()?;
    Ok(BuiltSample {
        input,
        kernels,
        input_side,
        kernel_sides,
    })
}

/// Value of the input path from its split components.
pub(crate) fn eval_input(side: &InputSide, t: f64, grad: Option<&mut [f64]>) -> f64 {
    let nf = side.fourier_coef.len();
    let mut acc = 0.0;
    let mut g = grad;
    for m in 0..nf {
        let c = (side.fourier_freq[m] * t + side.fourier_phase[m]).cos();
        acc += side.fourier_coef[m] * c;
        if let Some(g) = g.as_deref_mut() {
            g[m] = c;
        }
    }
    for n in 0..side.kernel_coef.len() {
        let d = t - side.kernel_z[n];
        let e = (-side.precision * d * d).exp();
        acc += side.kernel_coef[n] * e;
        if let Some(g) = g.as_deref_mut() {
            g[nf + n] = e;
        }
    }
    acc
}

/// Output `d` of a built sample at `t`, using one workspace per order.
pub(crate) fn eval_output(sample: &BuiltSample, model: &VolterraModel, d: usize, t: f64, ws: &mut [TermWorkspace]) -> f64 {
    let mut f = 0.0;
    for c in 1..=model.order() {
        let k = model.kernel_index(d, c);
        let ks = &sample.kernel_sides[k];
        let at = InputAt::new(&sample.input_side, ks.decay, t);
        f += ws[c - 1].forward(&sample.input_side, &at, ks);
    }
    f
}

fn check_data(model: &VolterraModel, data: &TimeSeriesDataset, batch: &Batch) -> Result<()> {
    if data.num_outputs() != model.outputs() {
        return Err(NvkmError::invalid(format!(
            "dataset has {} outputs, model has {}",
            data.num_outputs(),
            model.outputs()
        )));
    }
    for &(d, i) in &batch.outputs {
        if d >= data.num_outputs() || i >= data.outputs[d].len() {
            return Err(NvkmError::invalid(format!("batch entry ({d}, {i}) out of range")));
        }
    }
    if !batch.inputs.is_empty() {
        if !model.io_mode() {
            return Err(NvkmError::invalid("input observations given to a model without io_mode"));
        }
        let n = data.input.as_ref().map(|s| s.len()).unwrap_or(0);
        if batch.inputs.iter().any(|&j| j >= n) {
            return Err(NvkmError::invalid("input batch index out of range"));
        }
    }
    Ok(())
}

/// Likelihood rescaling factors `N / |batch|` for outputs and inputs.
fn scales(data: &TimeSeriesDataset, batch: &Batch) -> (f64, f64) {
    let out = if batch.outputs.is_empty() {
        0.0
    } else {
        data.total_points() as f64 / batch.outputs.len() as f64
    };
    let inp = if batch.inputs.is_empty() {
        0.0
    } else {
        data.input.as_ref().map(|s| s.len()).unwrap_or(0) as f64 / batch.inputs.len() as f64
    };
    (out, inp)
}

fn log_normal(y: f64, f: f64, sd: f64) -> f64 {
    let r = (y - f) / sd;
    -0.5 * (2.0 * PI).ln() - sd.ln() - 0.5 * r * r
}

/// ELBO estimate with its gradient in the flat layout of [`ParamLayout`].
#[derive(Debug, Clone)]
pub struct ElboGradient {
    pub value: f64,
    pub layout: ParamLayout,
    pub grad: Vec<f64>,
}

impl ElboGradient {
    /// Gradient block of one leaf.
    pub fn leaf(&self, leaf: Leaf) -> Option<&[f64]> {
        self.layout.range(leaf).map(|r| &self.grad[r])
    }

    /// Zeroes every entry not selected by `mask`.
    pub fn restrict(&mut self, mask: &[bool]) {
        for (g, m) in self.grad.iter_mut().zip(mask) {
            if !m {
                *g = 0.0;
            }
        }
    }
}

/// Gradient accumulators of one path's hyperparameters and inducing values.
struct PathAccum {
    amplitude: f64,
    precision: f64,
    gram: DMatrix<f64>,
}

impl PathAccum {
    fn new(m: usize) -> Self {
        PathAccum {
            amplitude: 0.0,
            precision: 0.0,
            gram: DMatrix::zeros(m, m),
        }
    }
}

/// Pulls adjoints of the effective path coefficients back to the kernel
/// hyperparameters and the prior Gram, returning the adjoint of the
/// inducing values.
///
/// `cbar`, `dbar`: adjoints of the cosine coefficients `σ sqrt(2/N_b) w_i`
/// and kernel coefficients `σ² q_j`; `freq_bar`: adjoint of `θ` (`N_b × dim`)
/// or `None` when the frequencies are fixed.
fn path_adjoint(
    built: &BuiltPath,
    gram: &Gram,
    cbar: &[f64],
    dbar: &[f64],
    freq_bar: Option<&[f64]>,
    acc: &mut PathAccum,
) -> DVector<f64> {
    let path = &built.path;
    let basis = path.basis();
    let kernel = path.kernel();
    let sigma = kernel.amplitude;
    let p = kernel.precision;
    let nb = basis.len();
    let dim = basis.dim();
    let z = path.inducing();
    let q = path.coefficients();
    let coef = basis.coefficients();
    let w = basis.weights();

    let mut sbar = 0.0;
    for i in 0..nb {
        sbar += cbar[i] * coef[i] / sigma;
    }
    let s2 = sigma * sigma;
    let qbar = DVector::from_iterator(q.len(), dbar.iter().map(|d| s2 * d));
    sbar += 2.0 * sigma * dbar.iter().zip(q).map(|(d, q)| d * q).sum::<f64>();

    let rbar = gram.cholesky.solve(&qbar);
    for j in 0..q.len() {
        for k in 0..q.len() {
            acc.gram[(j, k)] -= rbar[j] * q[k];
        }
    }

    // Φ̄ = -r̄ wᵀ; Φ_ji = s cos(θ_iᵀ z_j + β_i).
    let mut fbar_total = vec![0.0; nb * dim];
    if let Some(fb) = freq_bar {
        fbar_total.copy_from_slice(fb);
    }
    let scale = basis.feature_scale();
    for j in 0..z.len() {
        let zj = z.row(j);
        for i in 0..nb {
            let phibar = -rbar[j] * w[i];
            if phibar == 0.0 {
                continue;
            }
            sbar += phibar * built.features[(j, i)] / sigma;
            if freq_bar.is_some() {
                let th = basis.frequency(i);
                let arg: f64 = th.iter().zip(zj).map(|(a, b)| a * b).sum::<f64>() + basis.phases()[i];
                let ds = -scale * arg.sin() * phibar;
                for (a, zc) in zj.iter().enumerate() {
                    fbar_total[i * dim + a] += ds * zc;
                }
            }
        }
    }
    if freq_bar.is_some() {
        let mut pbar = 0.0;
        for i in 0..nb {
            for (a, th) in basis.frequency(i).iter().enumerate() {
                pbar += fbar_total[i * dim + a] * th / (2.0 * p);
            }
        }
        acc.precision += pbar;
    }
    acc.amplitude += sbar;
    rbar
}

/// Adds `Σ K̄ ∂K/∂(σ, p)` for `K = σ² (exp(-p ‖Δ‖²) + jitter I)`.
fn gram_adjoint(gram: &Gram, z: &Points, kernel: &SeKernel, gbar: &DMatrix<f64>, acc: &mut PathAccum) {
    let m = z.len();
    let sigma = kernel.amplitude;
    let mut sbar = 0.0;
    let mut pbar = 0.0;
    for j in 0..m {
        for k in 0..m {
            let g = gbar[(j, k)];
            let kv = gram.matrix[(j, k)];
            sbar += g * 2.0 * kv / sigma;
            if j != k {
                pbar -= g * sq_dist(z.row(j), z.row(k)) * kv;
            }
        }
    }
    acc.amplitude += sbar;
    acc.precision += pbar;
}

/// `(ELBO, ∇ELBO)` under fixed draws.
pub(crate) fn elbo_with_grad(
    model: &VolterraModel,
    data: &TimeSeriesDataset,
    batch: &Batch,
    draws: &[SampleDraw],
    want_grad: bool,
) -> Result<ElboGradient> {
    check_data(model, data, batch)?;
    let layout = ParamLayout::new(model);
    let grams = Grams::new(model)?;
    let (out_scale, in_scale) = scales(data, batch);
    let n_samples = draws.len().max(1) as f64;

    let mut value = 0.0;
    let mut input_acc = PathAccum::new(model.input.variational.len());
    let mut kernel_acc: Vec<PathAccum> = model.kernels.iter().map(|s| PathAccum::new(s.variational.len())).collect();
    let mut input_mean = DVector::zeros(model.input.variational.len());
    let mut input_chol = DMatrix::zeros(model.input.variational.len(), model.input.variational.len());
    let mut kernel_mean: Vec<DVector<f64>> = model.kernels.iter().map(|s| DVector::zeros(s.variational.len())).collect();
    let mut kernel_chol: Vec<DMatrix<f64>> = model
        .kernels
        .iter()
        .map(|s| DMatrix::zeros(s.variational.len(), s.variational.len()))
        .collect();
    let mut noise_grad = vec![0.0; model.outputs()];
    let mut input_noise_grad = 0.0;

    // KL terms.
    {
        let g = kl_term_with_grad(&model.input.variational, &grams.input)?;
        value -= g.value;
        if want_grad {
            input_mean -= &g.mean;
            input_chol -= &g.chol;
            input_acc.gram -= &g.gram;
        }
        for (k, spec) in model.kernels.iter().enumerate() {
            let g = kl_term_with_grad(&spec.variational, &grams.kernels[k])?;
            value -= g.value;
            if want_grad {
                kernel_mean[k] -= &g.mean;
                kernel_chol[k] -= &g.chol;
                kernel_acc[k].gram -= &g.gram;
            }
        }
    }

    if !batch.is_empty() {
        let mut ws: Vec<TermWorkspace> = (0..model.order()).map(|_| TermWorkspace::default()).collect();
        for draw in draws {
            let sample = build_sample(model, &grams, draw)?;
            let ku = sample.input_side.len();
            let mut input_coef_bar = vec![0.0; ku];
            let mut kgrads: Vec<KernelSideGrad> = sample.kernel_sides.iter().map(KernelSideGrad::zeros).collect();
            let w = out_scale / n_samples;
            for &(d, i) in &batch.outputs {
                let t = data.outputs[d].times[i];
                let y = data.outputs[d].values[i];
                let sd = model.output_noise[d];
                let f = eval_output(&sample, model, d, t, &mut ws);
                value += w * log_normal(y, f, sd);
                if want_grad {
                    let r = (y - f) / sd;
                    noise_grad[d] += w * (r * r - 1.0);
                    let fbar = w * (y - f) / (sd * sd);
                    for c in 1..=model.order() {
                        let k = model.kernel_index(d, c);
                        ws[c - 1].backward(fbar, &sample.input_side, &sample.kernel_sides[k], &mut input_coef_bar, &mut kgrads[k]);
                    }
                }
            }
            if !batch.inputs.is_empty() {
                let xs = data.input.as_ref().expect("checked above");
                let wx = in_scale / n_samples;
                let sd = model.input_noise;
                let mut feat = vec![0.0; ku];
                for &j in &batch.inputs {
                    let t = xs.times[j];
                    let x = xs.values[j];
                    let u = eval_input(&sample.input_side, t, Some(&mut feat));
                    value += wx * log_normal(x, u, sd);
                    if want_grad {
                        let r = (x - u) / sd;
                        input_noise_grad += wx * (r * r - 1.0);
                        let ubar = wx * (x - u) / (sd * sd);
                        for (g, e) in input_coef_bar.iter_mut().zip(&feat) {
                            *g += ubar * e;
                        }
                    }
                }
            }
            if !want_grad {
                continue;
            }

            let nf = sample.input_side.fourier_coef.len();
            let vbar = path_adjoint(
                &sample.input,
                &grams.input,
                &input_coef_bar[..nf],
                &input_coef_bar[nf..],
                None,
                &mut input_acc,
            );
            accumulate_variational(&vbar, &draw.input_eps, &mut input_mean, &mut input_chol);

            for (k, kg) in kgrads.iter().enumerate() {
                let acc = &mut kernel_acc[k];
                acc.precision += kg.precision;
                let vbar = path_adjoint(&sample.kernels[k], &grams.kernels[k], &kg.fourier_coef, &kg.kernel_coef, Some(&kg.freqs), acc);
                accumulate_variational(&vbar, &draw.kernel_eps[k], &mut kernel_mean[k], &mut kernel_chol[k]);
            }
        }
    }

    let mut grad = vec![0.0; layout.len()];
    if want_grad {
        let gram_bar = input_acc.gram.clone();
        gram_adjoint(&grams.input, &model.input.inducing, &model.input.kernel, &gram_bar, &mut input_acc);
        put(&layout, &mut grad, Leaf::InputMean, input_mean.as_slice());
        pack_chol_grad(model.input.variational.chol(), &input_chol, slot(&layout, &mut grad, Leaf::InputChol));
        slot(&layout, &mut grad, Leaf::InputLogAmplitude)[0] = input_acc.amplitude * model.input.kernel.amplitude;
        for (k, spec) in model.kernels.iter().enumerate() {
            let acc = &mut kernel_acc[k];
            let gram_bar = acc.gram.clone();
            gram_adjoint(&grams.kernels[k], &spec.inducing, &spec.kernel, &gram_bar, acc);
            put(&layout, &mut grad, Leaf::KernelMean(k), kernel_mean[k].as_slice());
            pack_chol_grad(spec.variational.chol(), &kernel_chol[k], slot(&layout, &mut grad, Leaf::KernelChol(k)));
            slot(&layout, &mut grad, Leaf::KernelLogAmplitude(k))[0] = acc.amplitude * spec.kernel.amplitude;
            slot(&layout, &mut grad, Leaf::KernelLogLengthScale(k))[0] = acc.precision * (-2.0 * spec.kernel.precision);
        }
        for (d, g) in noise_grad.iter().enumerate() {
            slot(&layout, &mut grad, Leaf::LogOutputNoise(d))[0] = *g;
        }
        if model.io_mode() {
            slot(&layout, &mut grad, Leaf::LogInputNoise)[0] = input_noise_grad;
        }
    }
    if !value.is_finite() {
        return Err(NvkmError::NonFinite(format!("ELBO estimate {value}")));
    }
    Ok(ElboGradient { value, layout, grad })
}

/// `v = μ + L ε`: `μ̄ += v̄`, `L̄ += v̄ εᵀ` on the lower triangle.
fn accumulate_variational(vbar: &DVector<f64>, eps: &[f64], mean: &mut DVector<f64>, chol: &mut DMatrix<f64>) {
    *mean += vbar;
    for i in 0..vbar.len() {
        for j in 0..=i {
            chol[(i, j)] += vbar[i] * eps[j];
        }
    }
}

fn slot<'g>(layout: &ParamLayout, grad: &'g mut [f64], leaf: Leaf) -> &'g mut [f64] {
    let r = layout.range(leaf).expect("leaf is part of the layout");
    &mut grad[r]
}

fn put(layout: &ParamLayout, grad: &mut [f64], leaf: Leaf, values: &[f64]) {
    slot(layout, grad, leaf).copy_from_slice(values);
}

/// Function values of every sample at the batch points:
/// `(outputs[s][b], inputs[s][b])`.
pub(crate) fn sample_batch_values(
    model: &VolterraModel,
    data: &TimeSeriesDataset,
    batch: &Batch,
    draws: &[SampleDraw],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_data(model, data, batch)?;
    let grams = Grams::new(model)?;
    let mut ws: Vec<TermWorkspace> = (0..model.order()).map(|_| TermWorkspace::default()).collect();
    let mut outs = Vec::with_capacity(draws.len());
    let mut ins = Vec::with_capacity(draws.len());
    for draw in draws {
        let sample = build_sample(model, &grams, draw)?;
        outs.push(
            batch
                .outputs
                .iter()
                .map(|&(d, i)| eval_output(&sample, model, d, data.outputs[d].times[i], &mut ws))
                .collect(),
        );
        let xs = data.input.as_ref();
        ins.push(
            batch
                .inputs
                .iter()
                .map(|&j| eval_input(&sample.input_side, xs.expect("checked").times[j], None))
                .collect(),
        );
    }
    Ok((outs, ins))
}

/// Rescaled mixture log predictive density of the batch and its gradient
/// with respect to the log noise levels, for precomputed sample values.
pub(crate) fn noise_objective(
    model: &VolterraModel,
    data: &TimeSeriesDataset,
    batch: &Batch,
    outs: &[Vec<f64>],
    ins: &[Vec<f64>],
) -> (f64, Vec<f64>, f64) {
    let (out_scale, in_scale) = scales(data, batch);
    let mut value = 0.0;
    let mut grad = vec![0.0; model.outputs()];
    let mut logs = vec![0.0; outs.len()];
    let s_ln = (outs.len() as f64).ln();
    for (b, &(d, i)) in batch.outputs.iter().enumerate() {
        let y = data.outputs[d].values[i];
        let sd = model.output_noise[d];
        let (v, g) = mixture_term(y, sd, outs.iter().map(|s| s[b]), &mut logs, s_ln);
        value += out_scale * v;
        grad[d] += out_scale * g;
    }
    let mut gx = 0.0;
    if !batch.inputs.is_empty() {
        let xs = data.input.as_ref().expect("checked by caller");
        for (b, &j) in batch.inputs.iter().enumerate() {
            let (v, g) = mixture_term(xs.values[j], model.input_noise, ins.iter().map(|s| s[b]), &mut logs, s_ln);
            value += in_scale * v;
            gx += in_scale * g;
        }
    }
    (value, grad, gx)
}

/// `log (1/S) Σ_s N(y; f_s, σ²)` and its derivative in `log σ`.
fn mixture_term(y: f64, sd: f64, f: impl Iterator<Item = f64>, logs: &mut [f64], s_ln: f64) -> (f64, f64) {
    let mut r2 = Vec::with_capacity(logs.len());
    for (l, fv) in logs.iter_mut().zip(f) {
        *l = log_normal(y, fv, sd);
        r2.push(((y - fv) / sd).powi(2));
    }
    let lse = log_sum_exp(logs);
    let g: f64 = logs.iter().zip(&r2).map(|(l, r)| (l - lse).exp() * (r - 1.0)).sum();
    (lse - s_ln, g)
}

/// Stochastic ELBO `(N/|B|) Σ_B (1/S) Σ_s log N(y; f_s, σ²) - KL`, plus the
/// rescaled input likelihood in io mode.
pub fn elbo_estimate<R: Rng + ?Sized>(
    model: &VolterraModel,
    data: &TimeSeriesDataset,
    batch: &Batch,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(NvkmError::invalid("at least one sample is required"));
    }
    let draws = draw_samples(model, samples, rng)?;
    Ok(elbo_with_grad(model, data, batch, &draws, false)?.value)
}

/// Gradient of [`elbo_estimate`] under the same draws (same generator
/// state gives the same draws).
pub fn grad_elbo<R: Rng + ?Sized>(
    model: &VolterraModel,
    data: &TimeSeriesDataset,
    batch: &Batch,
    samples: usize,
    rng: &mut R,
) -> Result<ElboGradient> {
    if samples == 0 {
        return Err(NvkmError::invalid("at least one sample is required"));
    }
    let draws = draw_samples(model, samples, rng)?;
    elbo_with_grad(model, data, batch, &draws, true)
}
