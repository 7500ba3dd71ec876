//! Doubly stochastic variational inference: ELBO estimates and gradients,
//! Adam, the two-phase training schedule and posterior prediction.

mod adam;
mod evaluate;
mod objective;
mod predict;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Series, TimeSeriesDataset};
use crate::error::{NvkmError, Result};
use crate::model::{ParamLayout, VolterraModel};
use crate::volterra::OutputSample;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use evaluate::{evaluate, Evaluation, SeriesMetrics};
pub use objective::{elbo_estimate, grad_elbo, Batch, ElboGradient};
pub use predict::{draw_path_samples, predict, predict_input, OutputPrediction, PathSample, Prediction};

pub(crate) use objective::{draw_samples, elbo_with_grad};
use objective::{noise_objective, sample_batch_values};

/// Optimiser and sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Samples per ELBO estimate during training.
    pub samples: usize,
    /// Samples used for evaluation-time prediction and NLPD.
    pub eval_samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps with the noise levels frozen.
    pub phase1_steps: usize,
    /// Steps fitting only the noise levels.
    pub phase2_steps: usize,
    /// Noise level held fixed during phase 1.
    pub fixed_noise: f64,
    pub smoothing_window: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            samples: 10,
            eval_samples: 50,
            batch_size: 80,
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            phase1_steps: 10_000,
            phase2_steps: 500,
            fixed_noise: 0.05,
            smoothing_window: 50,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.eval_samples == 0 {
            return Err(NvkmError::invalid("sample counts must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(NvkmError::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NvkmError::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(NvkmError::invalid("Adam betas must lie in [0, 1) and epsilon be positive"));
        }
        if !(self.fixed_noise > 0.0) {
            return Err(NvkmError::invalid("fixed_noise must be positive"));
        }
        if self.smoothing_window == 0 {
            return Err(NvkmError::invalid("smoothing_window must be at least 1"));
        }
        Ok(())
    }
}

/// One optimisation step. Phase 1 rows hold the ELBO estimate, phase 2 rows
/// the rescaled mixture log predictive density that the noise fit ascends.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub phase: u8,
    pub elbo: f64,
    pub output_noise: Vec<f64>,
    pub input_noise: f64,
}

/// Record of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// Seconds since the start of training, per row.
    pub elapsed: Vec<f64>,
    /// Diagnostic if training stopped early on a numerical failure; the
    /// returned model then holds the last good parameters.
    pub aborted: Option<String>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn phase_values(&self, phase: u8) -> Vec<f64> {
        self.rows.iter().filter(|r| r.phase == phase).map(|r| r.elbo).collect()
    }

    /// Mean of the first and of the last `window` values of a phase.
    pub fn smoothed_endpoints(&self, phase: u8, window: usize) -> Option<(f64, f64)> {
        let v = self.phase_values(phase);
        if v.is_empty() || window == 0 {
            return None;
        }
        let w = window.min(v.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&v[..w]), mean(&v[v.len() - w..])))
    }

    /// Writes `step,phase,elbo` rows. Wall-clock times are left out so the
    /// file is reproducible.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("step,phase,elbo\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.step, r.phase, r.elbo));
        }
        std::fs::write(path, out).map_err(|e| NvkmError::io(path, e))
    }
}

fn step_rng(seed: u64, phase: u8, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase as u64) << 40) | step as u64);
    rng
}

fn recoverable(e: &NvkmError) -> bool {
    matches!(
        e,
        NvkmError::NonFinite(_) | NvkmError::IllConditionedGram { .. } | NvkmError::NumericInconsistency(_)
    )
}

/// Two-phase training. Phase 1 freezes the noise levels at
/// `config.fixed_noise` and optimises everything else; phase 2 fits only the
/// noise levels. Every step draws its minibatch and samples from a generator
/// seeded by `(config.seed, phase, step)`.
pub fn train(model: &VolterraModel, data: &TimeSeriesDataset, config: &TrainingConfig) -> Result<(VolterraModel, TrainTrace)> {
    config.validate()?;
    if data.num_outputs() != model.outputs() {
        return Err(NvkmError::invalid(format!(
            "dataset has {} outputs, model has {}",
            data.num_outputs(),
            model.outputs()
        )));
    }
    if model.io_mode() && data.input.is_none() {
        return Err(NvkmError::invalid("io_mode needs an observed input series"));
    }
    let data = if model.io_mode() {
        data.clone()
    } else {
        TimeSeriesDataset { input: None, ..data.clone() }
    };
    let mut model = model.clone();
    let mut trace = TrainTrace::default();
    if config.phase1_steps == 0 && config.phase2_steps == 0 {
        return Ok((model, trace));
    }
    let start = Instant::now();
    let layout = ParamLayout::new(&model);
    let hyper = config.adam();

    if config.phase1_steps > 0 {
        model.output_noise.iter_mut().for_each(|s| *s = config.fixed_noise);
        if model.io_mode() {
            model.input_noise = config.fixed_noise;
        }
    }
    let mask = layout.mask(|l| !l.is_noise());
    let mut params = layout.to_flat(&model)?;
    let mut state = AdamState::new(layout.len());
    for step in 0..config.phase1_steps {
        let mut rng = step_rng(config.seed, 1, step);
        let batch = Batch::sample(&data, config.batch_size, &mut rng);
        let g = match grad_elbo(&model, &data, &batch, config.samples, &mut rng) {
            Ok(g) => g,
            Err(e) if recoverable(&e) => {
                trace.aborted = Some(format!("phase 1 step {step}: {e}"));
                return Ok((model, trace));
            }
            Err(e) => return Err(e),
        };
        let neg: Vec<f64> = g.grad.iter().map(|x| -x).collect();
        let mut next = params.clone();
        let mut next_state = state.clone();
        let applied = adam_step(&mut next, &neg, &mut next_state, &hyper, Some(&mask)).and_then(|_| {
            let mut m = model.clone();
            layout.set_flat(&mut m, &next, Some(&mask))?;
            m.input_gram()?;
            for k in 0..m.kernels.len() {
                m.kernel_gram(k)?;
            }
            Ok(m)
        });
        trace.rows.push(TraceRow {
            step,
            phase: 1,
            elbo: g.value,
            output_noise: model.output_noise.clone(),
            input_noise: model.input_noise,
        });
        trace.elapsed.push(start.elapsed().as_secs_f64());
        match applied {
            Ok(m) => {
                model = m;
                params = next;
                state = next_state;
            }
            Err(e) if recoverable(&e) => {
                trace.aborted = Some(format!("phase 1 step {step}: {e}"));
                return Ok((model, trace));
            }
            Err(e) => return Err(e),
        }
    }

    let mask = layout.mask(|l| l.is_noise());
    let mut state = AdamState::new(layout.len());
    let offset = config.phase1_steps;
    for step in 0..config.phase2_steps {
        let mut rng = step_rng(config.seed, 2, step);
        let batch = Batch::sample(&data, config.batch_size, &mut rng);
        let result = draw_samples(&model, config.samples, &mut rng)
            .and_then(|draws| sample_batch_values(&model, &data, &batch, &draws));
        let (outs, ins) = match result {
            Ok(v) => v,
            Err(e) if recoverable(&e) => {
                trace.aborted = Some(format!("phase 2 step {step}: {e}"));
                return Ok((model, trace));
            }
            Err(e) => return Err(e),
        };
        let (value, gy, gx) = noise_objective(&model, &data, &batch, &outs, &ins);
        let mut neg = vec![0.0; layout.len()];
        for (d, g) in gy.iter().enumerate() {
            let r = layout.range(crate::model::Leaf::LogOutputNoise(d)).expect("noise leaf");
            neg[r.start] = -g;
        }
        if let Some(r) = layout.range(crate::model::Leaf::LogInputNoise) {
            neg[r.start] = -gx;
        }
        trace.rows.push(TraceRow {
            step: offset + step,
            phase: 2,
            elbo: value,
            output_noise: model.output_noise.clone(),
            input_noise: model.input_noise,
        });
        trace.elapsed.push(start.elapsed().as_secs_f64());
        if !value.is_finite() {
            trace.aborted = Some(format!("phase 2 step {step}: non-finite objective {value}"));
            return Ok((model, trace));
        }
        let mut next = layout.to_flat(&model)?;
        match adam_step(&mut next, &neg, &mut state, &hyper, Some(&mask)).and_then(|_| layout.set_flat(&mut model, &next, Some(&mask))) {
            Ok(()) => {}
            Err(e) if recoverable(&e) => {
                trace.aborted = Some(format!("phase 2 step {step}: {e}"));
                return Ok((model, trace));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((model, trace))
}

/// A dataset drawn from one joint sample of a model.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: TimeSeriesDataset,
    /// Noise-free outputs, `[d][i]`.
    pub clean_outputs: Vec<Vec<f64>>,
    /// Noise-free input at the input times.
    pub clean_input: Option<Vec<f64>>,
}

/// Draws one joint sample of `model` and observes it with Gaussian noise
/// (`model.output_noise`, `model.input_noise`).
pub fn simulate<R: Rng + ?Sized>(
    model: &VolterraModel,
    output_times: &[Vec<f64>],
    input_times: Option<&[f64]>,
    rng: &mut R,
) -> Result<SimulatedData> {
    if output_times.len() != model.outputs() {
        return Err(NvkmError::invalid("one time grid per output is required"));
    }
    let paths = draw_path_samples(model, 1, rng)?.pop().expect("one sample");
    let c = model.order();
    let mut outputs = Vec::new();
    let mut clean_outputs = Vec::new();
    for (d, ts) in output_times.iter().enumerate() {
        let sample = OutputSample::new(&paths.input, &paths.kernels[d * c..(d + 1) * c])?;
        let clean = sample.eval_many(ts)?;
        let noisy = clean
            .iter()
            .map(|f| f + model.output_noise[d] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        outputs.push(Series::new(ts.clone(), noisy)?);
        clean_outputs.push(clean);
    }
    let mut dataset = TimeSeriesDataset::new(outputs);
    let mut clean_input = None;
    if let Some(ts) = input_times {
        let clean = paths.input.eval_many(ts)?;
        let noisy = clean
            .iter()
            .map(|u| u + model.input_noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        dataset = dataset.with_input(Series::new(ts.to_vec(), noisy)?);
        clean_input = Some(clean);
    }
    Ok(SimulatedData {
        dataset,
        clean_outputs,
        clean_input,
    })
}

#[cfg(test)]
mod tests;
