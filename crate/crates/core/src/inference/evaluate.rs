use rand::Rng;

use super::predict::{predict, predict_input};
use crate::data::{nlpd, nmse, rmse, Affine, TimeSeriesDataset};
use crate::error::{NvkmError, Result};
use crate::model::VolterraModel;

/// Test metrics of one series, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMetrics {
    pub name: String,
    pub points: usize,
    pub nmse: f64,
    pub rmse: f64,
    pub nlpd: f64,
}

/// Metrics of every output plus, in io mode, the observed input.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outputs: Vec<SeriesMetrics>,
    pub input: Option<SeriesMetrics>,
    pub samples: usize,
}

impl Evaluation {
    fn mean_of(&self, f: impl Fn(&SeriesMetrics) -> f64) -> f64 {
        self.outputs.iter().map(f).sum::<f64>() / self.outputs.len() as f64
    }

    pub fn mean_nmse(&self) -> f64 {
        self.mean_of(|m| m.nmse)
    }

    pub fn mean_rmse(&self) -> f64 {
        self.mean_of(|m| m.rmse)
    }

    pub fn mean_nlpd(&self) -> f64 {
        self.mean_of(|m| m.nlpd)
    }

    /// Sum of the per-point NLPD of every output and of the input.
    pub fn combined_nlpd(&self) -> f64 {
        self.outputs.iter().chain(self.input.iter()).map(|m| m.nlpd).sum()
    }
}

fn series_metrics(name: &str, truth: &[f64], samples: &[Vec<f64>], noise_sd: f64, affine: Affine) -> Result<SeriesMetrics> {
    let samples: Vec<Vec<f64>> = samples
        .iter()
        .map(|row| row.iter().map(|v| affine.inverse(*v)).collect())
        .collect();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..truth.len()).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    Ok(SeriesMetrics {
        name: name.to_string(),
        points: truth.len(),
        nmse: nmse(&mean, truth)?,
        rmse: rmse(&mean, truth)?,
        nlpd: nlpd(&samples, noise_sd * affine.scale, truth)?,
    })
}

/// NMSE, RMSE and mixture NLPD of `samples` posterior draws on `data`,
/// which is in original units. Predictions are mapped back through the
/// model's standardisation when it has one. Outputs without points are
/// skipped.
pub fn evaluate<R: Rng + ?Sized>(model: &VolterraModel, data: &TimeSeriesDataset, samples: usize, rng: &mut R) -> Result<Evaluation> {
    if data.num_outputs() != model.outputs() {
        return Err(NvkmError::invalid(format!(
            "dataset has {} outputs, model has {}",
            data.num_outputs(),
            model.outputs()
        )));
    }
    let times: Vec<Vec<f64>> = data.outputs.iter().map(|s| s.times.clone()).collect();
    let pred = predict(model, &times, samples, rng)?;
    let std = model.standardization.as_ref();
    let mut outputs = Vec::new();
    for (d, (series, p)) in data.outputs.iter().zip(&pred.outputs).enumerate() {
        if series.is_empty() {
            continue;
        }
        let affine = std.map_or(Affine::IDENTITY, |s| s.outputs[d]);
        outputs.push(series_metrics(&data.output_names[d], &series.values, &p.samples, p.noise_sd, affine)?);
    }
    if outputs.is_empty() {
        return Err(NvkmError::UndefinedMetric("no test points".into()));
    }
    let input = match (&data.input, model.io_mode()) {
        (Some(series), true) if !series.is_empty() => {
            let draws = predict_input(model, &series.times, samples, rng)?;
            let affine = std.and_then(|s| s.input).unwrap_or(Affine::IDENTITY);
            let name = data.input_name.as_deref().unwrap_or("x");
            Some(series_metrics(name, &series.values, &draws, model.input_noise, affine)?)
        }
        _ => None,
    };
    Ok(Evaluation { outputs, input, samples })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{Series, Standardization};
    use crate::oracle::toy_problem;

    #[test]
    fn metrics_in_original_units() {
        let (mut model, data) = toy_problem(1, 2).unwrap();
        let plain = evaluate(&model, &data, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let affine = Affine { shift: 3.0, scale: 2.0 };
        model.standardization = Some(Standardization {
            outputs: vec![affine],
            input: None,
        });
        let shifted = TimeSeriesDataset::new(vec![Series::new(
            data.outputs[0].times.clone(),
            data.outputs[0].values.iter().map(|v| affine.inverse(*v)).collect(),
        )
        .unwrap()]);
        let e = evaluate(&model, &shifted, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (a, b) = (&plain.outputs[0], &e.outputs[0]);
        assert!((a.nmse - b.nmse).abs() < 1e-12);
        assert!((2.0 * a.rmse - b.rmse).abs() < 1e-12);
        assert!((a.nlpd + 2f64.ln() - b.nlpd).abs() < 1e-10);
        assert_eq!(e.samples, 4);
        assert_eq!(e.combined_nlpd(), b.nlpd);
    }
}
