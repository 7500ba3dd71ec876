//! Datasets: synthetic generation, CSV ingestion and output, splitting,
//! standardisation and evaluation metrics.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NvkmError, Result};
use crate::kernels::SeKernel;
use crate::pathwise::draw_basis;

/// Paired observation times and values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(NvkmError::invalid(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(NvkmError::invalid(format!("non-finite time {t}")));
        }
        Ok(Series { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Series {
        Series {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }

    fn sort_by_time(&mut self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
        *self = self.subset(&idx);
    }
}

/// Per-output observations with an optional observed input series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub output_names: Vec<String>,
    pub outputs: Vec<Series>,
    pub input_name: Option<String>,
    pub input: Option<Series>,
    /// Transform that was applied to reach the stored values, if any.
    pub standardization: Option<Standardization>,
}

impl TimeSeriesDataset {
    pub fn new(outputs: Vec<Series>) -> Self {
        let output_names = (0..outputs.len()).map(|d| format!("y{}", d + 1)).collect();
        TimeSeriesDataset {
            output_names,
            outputs,
            input_name: None,
            input: None,
            standardization: None,
        }
    }

    pub fn with_input(mut self, input: Series) -> Self {
        self.input_name = Some("x".into());
        self.input = Some(input);
        self
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Total number of output observations.
    pub fn total_points(&self) -> usize {
        self.outputs.iter().map(Series::len).sum()
    }

    /// Smallest and largest time over outputs and input.
    pub fn time_span(&self) -> Option<[f64; 2]> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in self.outputs.iter().chain(self.input.iter()) {
            for t in &s.times {
                lo = lo.min(*t);
                hi = hi.max(*t);
            }
        }
        (lo <= hi).then_some([lo, hi])
    }

    /// Largest number of observations of a single output.
    pub fn max_points_per_output(&self) -> usize {
        self.outputs.iter().map(Series::len).max().unwrap_or(0)
    }
}

/// `z = (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }

    fn fit(values: &[f64], what: &str) -> Result<Affine> {
        if values.is_empty() {
            return Err(NvkmError::EmptySeries(what.to_string()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(NvkmError::invalid(format!("`{what}` has zero variance")));
        }
        Ok(Affine { shift: mean, scale: var.sqrt() })
    }
}

/// Per-output (and input) affine maps to zero mean, unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub outputs: Vec<Affine>,
    pub input: Option<Affine>,
}

/// Fits per-series standardisation on `ds` and applies it.
pub fn standardize(ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, Standardization)> {
    let outputs = ds
        .outputs
        .iter()
        .zip(&ds.output_names)
        .map(|(s, name)| Affine::fit(&s.values, name))
        .collect::<Result<Vec<_>>>()?;
    let input = match &ds.input {
        Some(s) => Some(Affine::fit(&s.values, ds.input_name.as_deref().unwrap_or("input"))?),
        None => None,
    };
    let params = Standardization { outputs, input };
    Ok((standardize_with(ds, &params)?, params))
}

/// Applies previously fitted standardisation (e.g. training-set values to
/// a test set).
pub fn standardize_with(ds: &TimeSeriesDataset, params: &Standardization) -> Result<TimeSeriesDataset> {
    if params.outputs.len() != ds.num_outputs() {
        return Err(NvkmError::invalid("standardisation and dataset differ in output count"));
    }
    let mut out = ds.clone();
    for (s, a) in out.outputs.iter_mut().zip(&params.outputs) {
        s.values.iter_mut().for_each(|v| *v = a.forward(*v));
    }
    if let (Some(s), Some(a)) = (out.input.as_mut(), params.input.as_ref()) {
        s.values.iter_mut().for_each(|v| *v = a.forward(*v));
    }
    out.standardization = Some(params.clone());
    Ok(out)
}

/// Maps standardised values back to original units.
pub fn destandardize(values: &[f64], params: &Affine) -> Vec<f64> {
    values.iter().map(|z| params.inverse(*z)).collect()
}

/// Settings of the synthetic nonlinear benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub t_range: [f64; 2],
    pub seed: u64,
    /// Precision `p` of the latent process `g`, whose covariance is
    /// `exp(−p r²)`.
    pub g_precision: f64,
    pub noise_sd: f64,
    /// Random Fourier features used to draw `g`.
    pub g_basis: usize,
    /// Trapezoid points over the filter support.
    pub grid_points: usize,
    /// Half-width of the filter support.
    pub filter_half_width: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 1200,
            t_range: [-20.0, 20.0],
            seed: 0,
            g_precision: 2.0,
            noise_sd: 0.05,
            g_basis: 2000,
            grid_points: 4096,
            filter_half_width: 6.0,
        }
    }
}

/// A generated dataset together with its noise-free targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub dataset: TimeSeriesDataset,
    pub clean: Vec<f64>,
}

/// Single-output benchmark with soft and hard nonlinearities:
/// `y = min(5 f₁ f₂ + 5 f₃³, 1) + ε` with `f_i = ∫ e^{-2τ²} h_i(τ) g(t-τ) dτ`,
/// `h₁ = sin 6τ`, `h₂ = sin² 5τ`, `h₃ = cos 4τ` and `g` an SE sample.
pub fn gen_synthetic(n: usize, t_range: [f64; 2], seed: u64) -> Result<TimeSeriesDataset> {
    let cfg = SyntheticConfig {
        n,
        t_range,
        seed,
        ..SyntheticConfig::default()
    };
    Ok(gen_synthetic_with(&cfg)?.dataset)
}

pub fn gen_synthetic_with(cfg: &SyntheticConfig) -> Result<SyntheticSample> {
    if cfg.n < 2 {
        return Err(NvkmError::invalid("the synthetic generator needs at least two points"));
    }
    if !(cfg.t_range[1] > cfg.t_range[0]) {
        return Err(NvkmError::invalid("empty synthetic time range"));
    }
    if cfg.grid_points < 2 || cfg.g_basis == 0 || !(cfg.filter_half_width > 0.0) || !(cfg.noise_sd >= 0.0) {
        return Err(NvkmError::invalid("invalid synthetic generator settings"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = SeKernel::new(1.0, cfg.g_precision)?;
    let basis = draw_basis(&g, 1, cfg.g_basis, &mut rng)?;
    let coef = basis.coefficients();

    // g(t-τ) = Σ_k c_k [cos(θ_k t + β_k) cos(θ_k τ) + sin(θ_k t + β_k) sin(θ_k τ)],
    // so each filter needs only the moments ∫ e^{-2τ²} h(τ) {cos, sin}(θ_k τ) dτ.
    let h = cfg.filter_half_width;
    let m = cfg.grid_points;
    let step = 2.0 * h / (m - 1) as f64;
    let filters: [fn(f64) -> f64; 3] = [|x| (6.0 * x).sin(), |x| (5.0 * x).sin().powi(2), |x| (4.0 * x).cos()];
    let mut moments = vec![[0.0f64; 2]; 3 * basis.len()];
    for j in 0..m {
        let tau = -h + step * j as f64;
        let w = if j == 0 || j == m - 1 { 0.5 * step } else { step };
        let env = (-2.0 * tau * tau).exp() * w;
        let hv: Vec<f64> = filters.iter().map(|f| env * f(tau)).collect();
        for k in 0..basis.len() {
            let (s, c) = (basis.frequency(k)[0] * tau).sin_cos();
            for (i, hvi) in hv.iter().enumerate() {
                let mo = &mut moments[i * basis.len() + k];
                mo[0] += hvi * c;
                mo[1] += hvi * s;
            }
        }
    }

    let times = crate::model::linspace(cfg.t_range[0], cfg.t_range[1], cfg.n);
    let mut clean = Vec::with_capacity(cfg.n);
    for t in &times {
        let mut f = [0.0; 3];
        for k in 0..basis.len() {
            let (s, c) = (basis.frequency(k)[0] * t + basis.phases()[k]).sin_cos();
            for (i, fi) in f.iter_mut().enumerate() {
                let mo = moments[i * basis.len() + k];
                *fi += coef[k] * (c * mo[0] + s * mo[1]);
            }
        }
        clean.push((5.0 * f[0] * f[1] + 5.0 * f[2].powi(3)).min(1.0));
    }
    let values = clean
        .iter()
        .map(|c| c + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let dataset = TimeSeriesDataset::new(vec![Series::new(times, values)?]);
    Ok(SyntheticSample { dataset, clean })
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub time_column: String,
    /// Output columns; empty means every column other than time and input.
    pub output_columns: Vec<String>,
    pub input_column: Option<String>,
    pub delimiter: char,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_column: "t".into(),
            output_columns: Vec::new(),
            input_column: None,
            delimiter: ',',
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null")
}

/// Reads a dataset from delimited text with a header row. Missing cells
/// (empty, `NA`, `NaN`, `null`) are dropped from their own series only;
/// rows are sorted by time.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| NvkmError::io(path, e))?;
    read_csv(file, schema, &path.display().to_string())
}

/// [`load_csv`] over any reader; `source` names the input in errors.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema, source: &str) -> Result<TimeSeriesDataset> {
    if !schema.delimiter.is_ascii() {
        return Err(NvkmError::invalid("CSV delimiter must be an ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| NvkmError::parse(format!("{source} line 1"), e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NvkmError::parse(format!("{source} line 1"), format!("no column named `{name}`")))
    };
    let time_idx = col(&schema.time_column)?;
    let input_idx = schema.input_column.as_deref().map(col).transpose()?;
    let output_names: Vec<String> = if schema.output_columns.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx && Some(*i) != input_idx)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.output_columns.clone()
    };
    if output_names.is_empty() {
        return Err(NvkmError::parse(format!("{source} line 1"), "no output columns"));
    }
    let output_idx = output_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;

    let mut outputs = vec![Series::default(); output_names.len()];
    let mut input = Series::default();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            NvkmError::parse(format!("{source} line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let at = |msg: String| NvkmError::parse(format!("{source} line {line}"), msg);
        let cell = |i: usize| -> Result<Option<f64>> {
            let raw = record.get(i).unwrap_or("");
            if is_missing(raw) {
                return Ok(None);
            }
            raw.parse::<f64>()
                .map(Some)
                .map_err(|_| at(format!("cannot parse `{raw}` in column `{}`", &header[i])))
        };
        let t = cell(time_idx)?.ok_or_else(|| at("missing time value".into()))?;
        if !t.is_finite() {
            return Err(at(format!("non-finite time {t}")));
        }
        for (s, &i) in outputs.iter_mut().zip(&output_idx) {
            if let Some(v) = cell(i)? {
                s.times.push(t);
                s.values.push(v);
            }
        }
        if let Some(i) = input_idx {
            if let Some(v) = cell(i)? {
                input.times.push(t);
                input.values.push(v);
            }
        }
    }
    for (s, name) in outputs.iter_mut().zip(&output_names) {
        if s.is_empty() {
            return Err(NvkmError::EmptySeries(name.clone()));
        }
        s.sort_by_time();
    }
    let input = match &schema.input_column {
        Some(name) => {
            if input.is_empty() {
                return Err(NvkmError::EmptySeries(name.clone()));
            }
            input.sort_by_time();
            Some(input)
        }
        None => None,
    };
    Ok(TimeSeriesDataset {
        output_names,
        outputs,
        input_name: schema.input_column.clone(),
        input,
        standardization: None,
    })
}

/// Writes a dataset in the schema read by [`load_csv`]: a time column,
/// one column per output and the input column if present. Times missing
/// from a series are left blank.
pub fn write_csv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| NvkmError::invalid(format!("{}: {e}", path.display())))?;
    let series: Vec<&Series> = ds.outputs.iter().chain(ds.input.iter()).collect();
    let mut header = vec!["t".to_string()];
    header.extend(ds.output_names.iter().cloned());
    if ds.input.is_some() {
        header.push(ds.input_name.clone().unwrap_or_else(|| "x".into()));
    }
    let mut times: Vec<f64> = series.iter().flat_map(|s| s.times.iter().copied()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let lookup: Vec<HashMap<u64, f64>> = series
        .iter()
        .map(|s| s.times.iter().zip(&s.values).map(|(t, v)| (t.to_bits(), *v)).collect())
        .collect();
    let to_err = |e: csv::Error| NvkmError::invalid(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(to_err)?;
    for t in times {
        let mut row = vec![format!("{t}")];
        for l in &lookup {
            row.push(l.get(&t.to_bits()).map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| NvkmError::io(path, e))
}

/// One held-out contiguous block of an output series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub output: usize,
    /// Start index; `None` centres the block in the series.
    pub start: Option<usize>,
    pub len: usize,
}

/// How to split a dataset into training and test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitSpec {
    /// A uniformly random `fraction` of each output goes to training.
    RandomFraction { fraction: f64, seed: u64 },
    /// The listed blocks form the test set; everything else trains.
    ContiguousBlock { blocks: Vec<Block> },
}

/// Splits the outputs into disjoint training and test parts. An observed
/// input series stays with the training part.
pub fn split(ds: &TimeSeriesDataset, spec: &SplitSpec) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let d = ds.num_outputs();
    let mut test_sets: Vec<Vec<bool>> = ds.outputs.iter().map(|s| vec![false; s.len()]).collect();
    match spec {
        SplitSpec::RandomFraction { fraction, seed } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(NvkmError::invalid(format!("split fraction {fraction} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for (s, is_test) in ds.outputs.iter().zip(test_sets.iter_mut()) {
                let n = s.len();
                let n_train = (fraction * n as f64).round() as usize;
                is_test.iter_mut().for_each(|b| *b = true);
                for i in sample_indices(&mut rng, n, n_train) {
                    is_test[i] = false;
                }
            }
        }
        SplitSpec::ContiguousBlock { blocks } => {
            for b in blocks {
                if b.output >= d {
                    return Err(NvkmError::invalid(format!("block names output {} of {d}", b.output)));
                }
                let n = ds.outputs[b.output].len();
                let start = b.start.unwrap_or((n.saturating_sub(b.len)) / 2);
                if b.len > n || start + b.len > n {
                    return Err(NvkmError::invalid(format!(
                        "block [{start}, {}) lies outside output {} of length {n}",
                        start + b.len,
                        b.output
                    )));
                }
                test_sets[b.output][start..start + b.len].iter_mut().for_each(|x| *x = true);
            }
        }
    }
    let mut train = ds.clone();
    let mut test = ds.clone();
    test.input = None;
    for (k, is_test) in test_sets.iter().enumerate() {
        let tr: Vec<usize> = (0..is_test.len()).filter(|&i| !is_test[i]).collect();
        let te: Vec<usize> = (0..is_test.len()).filter(|&i| is_test[i]).collect();
        train.outputs[k] = ds.outputs[k].subset(&tr);
        test.outputs[k] = ds.outputs[k].subset(&te);
    }
    Ok((train, test))
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(NvkmError::invalid("prediction and target lengths differ"));
    }
    if truth.is_empty() {
        return Err(NvkmError::UndefinedMetric("no test points".into()));
    }
    Ok(())
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / truth.len() as f64
}

/// `mean((ŷ - y)²) / var(y)` with the population variance of the targets.
pub fn nmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(NvkmError::UndefinedMetric("targets have zero variance".into()));
    }
    Ok(mse(pred, truth) / var)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(mse(pred, truth).sqrt())
}

/// Per-point mean of `-log (1/S) Σ_s N(y_i; f_s(t_i), σ²)`.
/// `samples[s][i]` is sample `s` at test point `i`.
pub fn nlpd(samples: &[Vec<f64>], noise_sd: f64, truth: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(NvkmError::invalid("nlpd needs at least one sample"));
    }
    for s in samples {
        check_pair(s, truth)?;
    }
    if !(noise_sd > 0.0) {
        return Err(NvkmError::UndefinedMetric(format!("noise level {noise_sd}")));
    }
    let s_count = samples.len() as f64;
    let norm = 0.5 * (2.0 * PI * noise_sd * noise_sd).ln();
    let mut total = 0.0;
    for (i, y) in truth.iter().enumerate() {
        let logs: Vec<f64> = samples
            .iter()
            .map(|s| -0.5 * ((y - s[i]) / noise_sd).powi(2))
            .collect();
        let lse = log_sum_exp(&logs);
        let v = norm + s_count.ln() - lse;
        if !v.is_finite() {
            return Err(NvkmError::UndefinedMetric(format!("non-finite density at point {i}")));
        }
        total += v;
    }
    Ok(total / truth.len() as f64)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
