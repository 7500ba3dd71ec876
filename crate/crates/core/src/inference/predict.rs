use rand::Rng;

use super::objective::{build_sample, draw_samples, eval_input, eval_output, Grams};
use crate::data::Affine;
use crate::error::{NvkmError, Result};
use crate::model::VolterraModel;
use crate::pathwise::ExplicitPath;
use crate::volterra::TermWorkspace;

/// Predictive summary of one output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPrediction {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation with the observation noise added in
    /// quadrature.
    pub sd: Vec<f64>,
    /// `samples[s][i]`: noise-free function sample `s` at `times[i]`.
    pub samples: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

impl OutputPrediction {
    fn from_samples(times: Vec<f64>, samples: Vec<Vec<f64>>, noise_sd: f64) -> Self {
        let n = times.len();
        let s = samples.len() as f64;
        let mut mean = vec![0.0; n];
        for row in &samples {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s);
        let mut var = vec![0.0; n];
        for row in &samples {
            for ((a, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *a += (v - m).powi(2);
            }
        }
        let sd = var.iter().map(|v| (v / s + noise_sd * noise_sd).sqrt()).collect();
        OutputPrediction {
            times,
            mean,
            sd,
            samples,
            noise_sd,
        }
    }

    /// Maps every quantity back through a standardisation.
    pub fn destandardize(&self, params: &Affine) -> OutputPrediction {
        OutputPrediction {
            times: self.times.clone(),
            mean: self.mean.iter().map(|m| params.inverse(*m)).collect(),
            sd: self.sd.iter().map(|s| s * params.scale).collect(),
            samples: self
                .samples
                .iter()
                .map(|row| row.iter().map(|v| params.inverse(*v)).collect())
                .collect(),
            noise_sd: self.noise_sd * params.scale,
        }
    }
}

/// Predictive summaries for every output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub outputs: Vec<OutputPrediction>,
}

/// Draws `samples` joint posterior samples and evaluates output `d` at
/// `times[d]`.
pub fn predict<R: Rng + ?Sized>(
    model: &VolterraModel,
    times: &[Vec<f64>],
    samples: usize,
    rng: &mut R,
) -> Result<Prediction> {
    if times.len() != model.outputs() {
        return Err(NvkmError::invalid(format!(
            "{} time grids given for {} outputs",
            times.len(),
            model.outputs()
        )));
    }
    if samples == 0 {
        return Err(NvkmError::invalid("at least one sample is required"));
    }
    if let Some(t) = times.iter().flatten().find(|t| !t.is_finite()) {
        return Err(NvkmError::invalid(format!("non-finite prediction time {t}")));
    }
    let draws = draw_samples(model, samples, rng)?;
    let grams = Grams::new(model)?;
    let mut ws: Vec<TermWorkspace> = (0..model.order()).map(|_| TermWorkspace::default()).collect();
    let mut per_output: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(samples); model.outputs()];
    for draw in &draws {
        let sample = build_sample(model, &grams, draw)?;
        for (d, ts) in times.iter().enumerate() {
            let row: Vec<f64> = ts.iter().map(|t| eval_output(&sample, model, d, *t, &mut ws)).collect();
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(NvkmError::NonFinite(format!("predictive sample value {v}")));
            }
            per_output[d].push(row);
        }
    }
    let outputs = per_output
        .into_iter()
        .enumerate()
        .map(|(d, s)| OutputPrediction::from_samples(times[d].clone(), s, model.output_noise[d]))
        .collect();
    Ok(Prediction { outputs })
}

/// Samples of the latent input process at `times`, `[s][i]`.
pub fn predict_input<R: Rng + ?Sized>(model: &VolterraModel, times: &[f64], samples: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let draws = draw_samples(model, samples, rng)?;
    let grams = Grams::new(model)?;
    draws
        .iter()
        .map(|draw| {
            let sample = build_sample(model, &grams, draw)?;
            Ok(times.iter().map(|t| eval_input(&sample.input_side, *t, None)).collect())
        })
        .collect()
}

/// All explicit paths of one joint sample.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub input: ExplicitPath,
    /// Output-major, as in [`VolterraModel::kernels`].
    pub kernels: Vec<ExplicitPath>,
}

/// Draws joint samples of every path from the current variational
/// distributions.
pub fn draw_path_samples<R: Rng + ?Sized>(model: &VolterraModel, samples: usize, rng: &mut R) -> Result<Vec<PathSample>> {
    let draws = draw_samples(model, samples, rng)?;
    let grams = Grams::new(model)?;
    draws
        .iter()
        .map(|draw| {
            let s = build_sample(model, &grams, draw)?;
            Ok(PathSample {
                input: s.input.path,
                kernels: s.kernels.into_iter().map(|b| b.path).collect(),
            })
        })
        .collect()
}
