//! Model state: inducing grids, variational posteriors, kernel
//! hyperparameters and noise levels for the NVKM and its input/output
//! variant.

mod checkpoint;
mod kl;
mod params;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{NvkmError, Result};
use crate::kernels::{se_gram, Gram, Points, SeKernel};
use crate::pathwise::VariationalGaussian;

pub use checkpoint::{checkpoint_load, checkpoint_save, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kl::{kl_term, total_kl};
pub(crate) use kl::kl_term_with_grad;
pub use params::{Leaf, ParamLayout};
pub(crate) use params::pack_chol_grad;

/// Inducing points per axis for the order 1 to 4 Volterra kernels.
pub const AXIS_SIZES: [usize; 4] = [15, 10, 6, 4];

/// Highest supported series order.
pub const MAX_ORDER: usize = 4;

/// Declarative model settings. Every field has a default; `time_span` and
/// `points_per_output` are normally filled in from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Series order `C`.
    pub order: usize,
    /// Number of outputs `D`.
    pub outputs: usize,
    /// Half-width of the Volterra-kernel inducing grids.
    pub vk_range: f64,
    /// Optional per-order override of `vk_range`.
    pub vk_range_per_order: Option<Vec<f64>>,
    /// Relative envelope height at the edge of the VK range.
    pub eps_decay: f64,
    /// Random Fourier features per path.
    pub n_basis: usize,
    /// Optional per-order override of the grid axis sizes.
    pub axis_sizes: Option<Vec<usize>>,
    /// Number of input inducing points; defaults to a tenth of the points
    /// per output.
    pub input_inducing: Option<usize>,
    /// Input length scale in units of the input inducing spacing.
    pub input_length_factor: f64,
    /// Initial VK length scale in units of the VK grid spacing.
    pub vk_length_factor: f64,
    pub input_amplitude: f64,
    /// Multiplier on the default VK amplitude `(α/π)^{c/2}`.
    pub vk_amplitude_scale: f64,
    pub mean_init_sd: f64,
    pub chol_init_scale: f64,
    pub output_noise: f64,
    pub input_noise: f64,
    pub relative_jitter: f64,
    pub io_mode: bool,
    pub time_span: Option<[f64; 2]>,
    pub points_per_output: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            order: 1,
            outputs: 1,
            vk_range: 2.0,
            vk_range_per_order: None,
            eps_decay: 0.01,
            n_basis: 50,
            axis_sizes: None,
            input_inducing: None,
            input_length_factor: 1.0,
            vk_length_factor: 2.0,
            input_amplitude: 1.0,
            vk_amplitude_scale: 1.0,
            mean_init_sd: 0.05,
            chol_init_scale: 0.1,
            output_noise: 0.05,
            input_noise: 0.05,
            relative_jitter: 1e-8,
            io_mode: false,
            time_span: None,
            points_per_output: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn vk_range_for(&self, order: usize) -> f64 {
        match &self.vk_range_per_order {
            Some(r) if r.len() >= order => r[order - 1],
            _ => self.vk_range,
        }
    }

    pub fn axis_size_for(&self, order: usize) -> usize {
        match &self.axis_sizes {
            Some(a) if a.len() >= order => a[order - 1],
            _ => AXIS_SIZES[order - 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(NvkmError::invalid("series order must be at least 1"));
        }
        if self.order > MAX_ORDER {
            return Err(NvkmError::UnsupportedOrder(self.order));
        }
        if self.outputs == 0 {
            return Err(NvkmError::invalid("at least one output is required"));
        }
        if self.n_basis == 0 {
            return Err(NvkmError::invalid("n_basis must be positive"));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return Err(NvkmError::invalid("eps_decay must lie in (0, 1)"));
        }
        for c in 1..=self.order {
            if !(self.vk_range_for(c) > 0.0) {
                return Err(NvkmError::invalid("VK ranges must be positive"));
            }
            if self.axis_size_for(c) < 2 {
                return Err(NvkmError::invalid("VK grid axes need at least two points"));
            }
        }
        for (name, v) in [
            ("input_length_factor", self.input_length_factor),
            ("vk_length_factor", self.vk_length_factor),
            ("input_amplitude", self.input_amplitude),
            ("vk_amplitude_scale", self.vk_amplitude_scale),
            ("chol_init_scale", self.chol_init_scale),
            ("output_noise", self.output_noise),
            ("input_noise", self.input_noise),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NvkmError::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.relative_jitter >= 0.0) || !(self.mean_init_sd >= 0.0) {
            return Err(NvkmError::invalid("jitter and mean_init_sd must be non-negative"));
        }
        Ok(())
    }
}

/// `α = ln(1/ε) / r²`, so that `exp(-α r²) = ε`.
pub fn fix_alpha(range: f64, eps_decay: f64) -> f64 {
    (1.0 / eps_decay).ln() / (range * range)
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { b } else { a + step * i as f64 }).collect()
        }
    }
}

/// The `order`-fold Cartesian power of `axis`, last coordinate fastest.
pub fn tensor_grid(axis: &[f64], order: usize) -> Points {
    let m = axis.len().pow(order as u32);
    let mut data = Vec::with_capacity(m * order);
    for idx in 0..m {
        let mut rem = idx;
        let mut row = vec![0.0; order];
        for k in (0..order).rev() {
            row[k] = axis[rem % axis.len()];
            rem /= axis.len();
        }
        data.extend(row);
    }
    Points::new(order, data).expect("grid shape is consistent")
}

/// Symmetric VK grid of half-width `range` with `axis_size` points per axis.
pub fn vk_grid(range: f64, axis_size: usize, order: usize) -> Points {
    tensor_grid(&linspace(-range, range, axis_size), order)
}

/// Prior and variational state of one Volterra kernel `G_{d,c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernelSpec {
    pub order: usize,
    pub range: f64,
    pub inducing: Points,
    pub variational: VariationalGaussian,
    /// SE kernel of the undecayed process `G'`.
    pub kernel: SeKernel,
    pub decay: f64,
}

/// Prior and variational state of the shared input process `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputProcessSpec {
    pub inducing: Points,
    pub variational: VariationalGaussian,
    pub kernel: SeKernel,
}

/// Full model state.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraModel {
    pub config: ModelConfig,
    pub input: InputProcessSpec,
    /// `D × C` specs, output-major: index `d * C + (c - 1)`.
    pub kernels: Vec<VolterraKernelSpec>,
    pub output_noise: Vec<f64>,
    pub input_noise: f64,
    pub standardization: Option<Standardization>,
}

impl VolterraModel {
    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn outputs(&self) -> usize {
        self.config.outputs
    }

    pub fn io_mode(&self) -> bool {
        self.config.io_mode
    }

    pub fn kernel_index(&self, output: usize, order: usize) -> usize {
        output * self.order() + (order - 1)
    }

    pub fn kernel(&self, output: usize, order: usize) -> &VolterraKernelSpec {
        &self.kernels[self.kernel_index(output, order)]
    }

    /// Prior Gram of `u` at its inducing inputs.
    pub fn input_gram(&self) -> Result<Gram> {
        se_gram(&self.input.inducing, &self.input.kernel, self.config.relative_jitter)
    }

    /// Prior Gram of `G'_{d,c}` at its inducing grid.
    pub fn kernel_gram(&self, index: usize) -> Result<Gram> {
        let spec = &self.kernels[index];
        se_gram(&spec.inducing, &spec.kernel, self.config.relative_jitter)
    }

    /// Sets every variational distribution to its prior (`μ = 0`, `L = chol K`).
    pub fn reset_to_prior(&mut self) -> Result<()> {
        let g = self.input_gram()?;
        self.input.variational = VariationalGaussian::from_prior(&g, 1.0);
        for k in 0..self.kernels.len() {
            let g = self.kernel_gram(k)?;
            self.kernels[k].variational = VariationalGaussian::from_prior(&g, 1.0);
        }
        Ok(())
    }
}

fn init_variational(gram: &Gram, config: &ModelConfig, rng: &mut ChaCha8Rng) -> VariationalGaussian {
    let mut q = VariationalGaussian::from_prior(gram, config.chol_init_scale);
    let mean = DVector::from_iterator(gram.size(), (0..gram.size()).map(|_| config.mean_init_sd * rng.sample::<f64, _>(StandardNormal)));
    *q.mean_mut() = mean;
    q
}

/// Builds a model from its configuration. Deterministic in
/// `(config, config.seed)`.
pub fn init_model(config: &ModelConfig) -> Result<VolterraModel> {
    config.validate()?;
    let [t0, t1] = config
        .time_span
        .ok_or_else(|| NvkmError::invalid("model config needs a time span"))?;
    if !(t1 > t0) {
        return Err(NvkmError::invalid(format!("empty time span [{t0}, {t1}]")));
    }
    let m_u = match (config.input_inducing, config.points_per_output) {
        (Some(m), _) => m,
        (None, Some(n)) => ((n as f64 / 10.0).round() as usize).max(2),
        (None, None) => {
            return Err(NvkmError::invalid(
                "model config needs points_per_output or input_inducing",
            ))
        }
    };
    if m_u < 2 {
        return Err(NvkmError::invalid("the input process needs at least two inducing points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let zu = linspace(t0, t1, m_u);
    let spacing = zu[1] - zu[0];
    let input_kernel = SeKernel::from_length_scale(config.input_amplitude, config.input_length_factor * spacing)?;
    let input_inducing = Points::from_scalars(&zu);
    let g = se_gram(&input_inducing, &input_kernel, config.relative_jitter)?;
    let input = InputProcessSpec {
        variational: init_variational(&g, config, &mut rng),
        inducing: input_inducing,
        kernel: input_kernel,
    };

    let mut kernels = Vec::with_capacity(config.outputs * config.order);
    for _d in 0..config.outputs {
        for c in 1..=config.order {
            let range = config.vk_range_for(c);
            let axis = config.axis_size_for(c);
            let inducing = vk_grid(range, axis, c);
            let decay = fix_alpha(range, config.eps_decay);
            let grid_spacing = 2.0 * range / (axis - 1) as f64;
            let amplitude = config.vk_amplitude_scale * (decay / std::f64::consts::PI).powf(0.5 * c as f64);
            let kernel = SeKernel::from_length_scale(amplitude, config.vk_length_factor * grid_spacing)?;
            let g = se_gram(&inducing, &kernel, config.relative_jitter)?;
            kernels.push(VolterraKernelSpec {
                order: c,
                range,
                variational: init_variational(&g, config, &mut rng),
                inducing,
                kernel,
                decay,
            });
        }
    }

    Ok(VolterraModel {
        config: config.clone(),
        input,
        kernels,
        output_noise: vec![config.output_noise; config.outputs],
        input_noise: config.input_noise,
        standardization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ModelConfig {
        ModelConfig {
            time_span: Some([-20.0, 20.0]),
            points_per_output: Some(400),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn grid_sizes_follow_axis_counts() {
        let cfg = ModelConfig {
            order: 2,
            vk_range: 2.0,
            ..base_config()
        };
        let m = init_model(&cfg).unwrap();
        assert_eq!(m.kernel(0, 1).inducing.len(), 15);
        assert_eq!(m.kernel(0, 2).inducing.len(), 100);
        assert_eq!(m.kernel(0, 2).inducing.dim(), 2);
    }

    #[test]
    fn input_inducing_is_a_tenth_of_the_data() {
        let cfg = ModelConfig {
            points_per_output: Some(1200),
            ..base_config()
        };
        let m = init_model(&cfg).unwrap();
        assert_eq!(m.input.inducing.len(), 120);
        let z = m.input.inducing.as_slice();
        assert_eq!(z[0], -20.0);
        assert_eq!(z[119], 20.0);
    }

    #[test]
    fn one_kernel_spec_per_output_and_order() {
        let cfg = ModelConfig {
            order: 1,
            outputs: 3,
            ..base_config()
        };
        let m = init_model(&cfg).unwrap();
        assert_eq!(m.kernels.len(), 3);
        assert_eq!(m.output_noise.len(), 3);
    }

    #[test]
    fn order_above_four_is_unsupported() {
        let cfg = ModelConfig {
            order: 5,
            ..base_config()
        };
        assert!(matches!(init_model(&cfg), Err(NvkmError::UnsupportedOrder(5))));
    }

    #[test]
    fn fix_alpha_values() {
        assert!((fix_alpha(1.0, (-1.0f64).exp()) - 1.0).abs() < 1e-15);
        assert!((fix_alpha(2.0, 0.01) - 100f64.ln() / 4.0).abs() < 1e-15);
        assert!((fix_alpha(2.0, 0.01) - 1.1513).abs() < 1e-4);
        for r in [0.3, 1.7, 5.0, 12.0] {
            let a = fix_alpha(r, 0.01);
            assert!(((-a * r * r).exp() - 0.01).abs() < 1e-14);
        }
    }

    #[test]
    fn grids_are_symmetric() {
        for c in 1..=4 {
            let g = vk_grid(1.5, AXIS_SIZES[c - 1], c);
            assert_eq!(g.len(), AXIS_SIZES[c - 1].pow(c as u32));
            let rows: Vec<Vec<f64>> = g.rows().map(|r| r.to_vec()).collect();
            for r in &rows {
                let neg: Vec<f64> = r.iter().map(|x| -x).collect();
                assert!(rows.iter().any(|s| s.iter().zip(&neg).all(|(a, b)| (a - b).abs() < 1e-12)));
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig {
            order: 2,
            ..base_config()
        };
        assert_eq!(init_model(&cfg).unwrap(), init_model(&cfg).unwrap());
        let other = ModelConfig { seed: 1, ..cfg.clone() };
        assert_ne!(init_model(&cfg).unwrap(), init_model(&other).unwrap());
    }

    #[test]
    fn init_needs_a_time_span() {
        let cfg = ModelConfig::default();
        assert!(init_model(&cfg).is_err());
    }
}
