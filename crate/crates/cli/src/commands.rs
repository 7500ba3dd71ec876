use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nvkm::data::TimeSeriesDataset;
use nvkm::inference::{draw_path_samples, evaluate as evaluate_model, predict as predict_model, train as train_model, Evaluation, TrainTrace};
use nvkm::model::{checkpoint_load, checkpoint_save, init_model, linspace, VolterraModel};
use nvkm::oracle::{run_validation, IntegralFns, ValidationLevel};
use nvkm::volterra::OutputSample;

use crate::config::{load_dataset, prepare_data, resolve, PreparedData, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.nvkm";
pub const TRACE_FILE: &str = "trace.csv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const EVALUATION_FILE: &str = "evaluation.toml";
pub const SEARCH_FILE: &str = "range_search.csv";

/// Failures detected by the runner itself rather than the library.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn fit(cfg: &RunConfig, data: &PreparedData) -> Result<(VolterraModel, TrainTrace)> {
    let mut model = init_model(&cfg.model)?;
    model.standardization = data.standardization.clone();
    Ok(train_model(&model, &data.train, &cfg.training)?)
}

/// Candidate VK ranges: the configured list, or `k` draws from the bounds
/// rounded to three decimals so the echoed choice is exact.
fn search_candidates(cfg: &RunConfig, k: usize) -> Result<Vec<f64>> {
    if !cfg.search.ranges.is_empty() {
        return Ok(cfg.search.ranges.clone());
    }
    let [lo, hi] = cfg.search.range_bounds;
    if !(hi > lo && lo > 0.0) {
        return Err(CommandError::Usage(format!("search.range_bounds [{lo}, {hi}] must be positive and increasing")).into());
    }
    if k == 0 {
        return Err(CommandError::Usage("--range-search needs at least one candidate".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..k).map(|_| (rng.random_range(lo..hi) * 1000.0).round() / 1000.0).collect())
}

pub fn train(config: &Path, out: Option<&Path>, range_search: Option<usize>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let full = load_dataset(&cfg.data)?;
    let data = prepare_data(&cfg.data, &full)?;
    let mut resolved = resolve(&cfg, &full, &data.train);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| resolved.output_dir.clone());
    create_dir(&dir)?;

    let (model, trace) = match range_search {
        None => fit(&resolved, &data)?,
        Some(k) => {
            let mut table = String::from("candidate,vk_range,train_nlpd\n");
            let mut best: Option<(f64, RunConfig, VolterraModel, TrainTrace)> = None;
            for (i, range) in search_candidates(&resolved, k)?.into_iter().enumerate() {
                let mut candidate = resolved.clone();
                candidate.model.vk_range = range;
                candidate.model.vk_range_per_order = None;
                let (m, t) = fit(&candidate, &data)?;
                let mut rng = ChaCha8Rng::seed_from_u64(candidate.seed);
                let score = evaluate_model(&m, &data.train_raw, candidate.training.eval_samples, &mut rng)?.combined_nlpd();
                writeln!(table, "{i},{range},{score}")?;
                println!("candidate {i}: vk_range {range} training NLPD {score:.4}");
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, candidate, m, t));
                }
            }
            write_file(&dir.join(SEARCH_FILE), table)?;
            let (score, chosen, m, t) = best.expect("at least one candidate");
            println!("selected vk_range {} (training NLPD {score:.4})", chosen.model.vk_range);
            resolved = chosen;
            (m, t)
        }
    };

    checkpoint_save(&model, dir.join(CHECKPOINT_FILE))?;
    trace.write_csv(dir.join(TRACE_FILE))?;
    let mut echo = resolved.clone();
    echo.output_dir = dir.clone();
    write_file(&dir.join(CONFIG_ECHO_FILE), echo.to_toml())?;
    if let Some(last) = trace.rows.last() {
        println!("trained {} steps, final objective {:.4}", trace.len(), last.elbo);
    }
    println!("wrote {}", dir.display());
    if let Some(reason) = trace.aborted {
        return Err(CommandError::Numeric(format!("training stopped early, last good model saved: {reason}")).into());
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let usage = || CommandError::Usage(format!("--grid expects start:end:count, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(usage().into());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| usage())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| usage())?;
    let n: usize = parts[2].trim().parse().map_err(|_| usage())?;
    if n == 0 || !a.is_finite() || !b.is_finite() || (n > 1 && !(b > a)) {
        return Err(usage().into());
    }
    Ok(if n == 1 { vec![a] } else { linspace(a, b, n) })
}

fn read_times(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(t) if t.is_finite() => times.push(t),
            _ if i == 0 => {}
            _ => {
                return Err(CommandError::Data(format!("{} line {}: `{line}` is not a time", path.display(), i + 1)).into());
            }
        }
    }
    if times.is_empty() {
        return Err(CommandError::Data(format!("{} holds no times", path.display())).into());
    }
    Ok(times)
}

pub fn predict(checkpoint: &Path, grid: Option<&str>, times_file: Option<&Path>, samples: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let times = match (grid, times_file) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(f)) => read_times(f)?,
        (None, None) => return Err(CommandError::Usage("give --grid or --times-file".into()).into()),
    };
    let model = checkpoint_load(checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = predict_model(&model, &vec![times; model.outputs()], samples, &mut rng)?;
    let mut csv = String::from("output,t,mean,sd,lower2sd,upper2sd\n");
    for (d, p) in pred.outputs.iter().enumerate() {
        let p = match &model.standardization {
            Some(s) => p.destandardize(&s.outputs[d]),
            None => p.clone(),
        };
        for i in 0..p.times.len() {
            let (m, s) = (p.mean[i], p.sd[i]);
            writeln!(csv, "{d},{},{m},{s},{},{}", p.times[i], m - 2.0 * s, m + 2.0 * s)?;
        }
    }
    match out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MetricRow {
    name: String,
    points: usize,
    nmse: f64,
    rmse: f64,
    nlpd: f64,
}

#[derive(Serialize)]
struct Aggregate {
    nmse: f64,
    rmse: f64,
    nlpd: f64,
}

#[derive(Serialize)]
struct Report {
    samples: usize,
    seed: u64,
    aggregate: Aggregate,
    outputs: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<MetricRow>,
}

fn report(e: &Evaluation, seed: u64) -> Report {
    let row = |m: &nvkm::inference::SeriesMetrics| MetricRow {
        name: m.name.clone(),
        points: m.points,
        nmse: m.nmse,
        rmse: m.rmse,
        nlpd: m.nlpd,
    };
    Report {
        samples: e.samples,
        seed,
        aggregate: Aggregate {
            nmse: e.mean_nmse(),
            rmse: e.mean_rmse(),
            nlpd: e.mean_nlpd(),
        },
        outputs: e.outputs.iter().map(row).collect(),
        input: e.input.as_ref().map(row),
    }
}

pub fn evaluate(config: &Path, checkpoint: Option<&Path>, samples: Option<usize>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let full = load_dataset(&cfg.data)?;
    let data = prepare_data(&cfg.data, &full)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let model = checkpoint_load(&ckpt)?;
    let samples = samples.unwrap_or(cfg.training.eval_samples);
    let seed = seed.unwrap_or(cfg.seed);
    let test: TimeSeriesDataset = data.test;
    let e = evaluate_model(&model, &test, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let text = toml::to_string(&report(&e, seed))?;
    print!("{text}");
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(EVALUATION_FILE));
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&dest, text)
}

pub fn validate(level: ValidationLevel, mutation_check: bool, seed: u64) -> Result<()> {
    let report = run_validation(level, &IntegralFns::default(), seed)?;
    print!("{}", report.render());
    if !report.passed() {
        return Err(CommandError::Numeric("validation failed".into()).into());
    }
    if mutation_check {
        let mutated = run_validation(level, &IntegralFns::with_i1a_sign_error(), seed)?;
        println!("with a sign error injected into I1a:");
        print!("{}", mutated.render());
        if mutated.passed() {
            return Err(CommandError::Numeric("mutation check: the suite did not detect the injected error".into()).into());
        }
        println!("mutation check: injected error detected");
    }
    Ok(())
}

fn sample_table(header: &str, rows: impl Iterator<Item = (String, Vec<f64>)>, samples: usize) -> String {
    let mut out = String::from(header);
    for s in 0..samples {
        write!(out, ",sample_{s}").expect("string write");
    }
    out.push('\n');
    for (key, values) in rows {
        out.push_str(&key);
        for v in values {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn sample_prior(config: &Path, samples: usize, points: usize, out: Option<&Path>) -> Result<()> {
    if samples == 0 || points < 2 {
        return Err(CommandError::Usage("need at least one sample and two points".into()).into());
    }
    let cfg = RunConfig::load(config)?;
    let mut resolved = cfg.clone();
    resolved.model.seed = cfg.seed;
    resolved.model.io_mode = cfg.io_mode;
    if resolved.model.time_span.is_none() || resolved.model.points_per_output.is_none() {
        let full = load_dataset(&cfg.data)?;
        let data = prepare_data(&cfg.data, &full)?;
        resolved = resolve(&cfg, &full, &data.train);
    }
    let mut model = init_model(&resolved.model)?;
    model.reset_to_prior()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let paths = draw_path_samples(&model, samples, &mut rng)?;
    let [t0, t1] = resolved.model.time_span.expect("resolved");
    let times = linspace(t0, t1, points);
    let dir: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| resolved.output_dir.clone());
    create_dir(&dir)?;

    let input_rows = times.iter().map(|t| {
        let v = paths.iter().map(|p| p.input.eval(&[*t])).collect::<nvkm::Result<Vec<f64>>>();
        (t.to_string(), v)
    });
    let mut rows = Vec::new();
    for (key, v) in input_rows {
        rows.push((key, v?));
    }
    write_file(&dir.join("prior_input.csv"), sample_table("t", rows.into_iter(), samples))?;

    let c_max = model.order();
    let mut rows = Vec::new();
    for d in 0..model.outputs() {
        for c in 1..=c_max {
            let k = model.kernel_index(d, c);
            let r = model.kernels[k].range;
            for s in linspace(-r, r, 101) {
                let v = paths.iter().map(|p| p.kernels[k].eval(&vec![s; c])).collect::<nvkm::Result<Vec<f64>>>()?;
                rows.push((format!("{d},{c},{s}"), v));
            }
        }
    }
    write_file(&dir.join("prior_kernels.csv"), sample_table("output,order,s", rows.into_iter(), samples))?;

    let mut rows = Vec::new();
    let per_sample: Vec<Vec<Vec<f64>>> = paths
        .iter()
        .map(|p| {
            (0..model.outputs())
                .map(|d| OutputSample::new(&p.input, &p.kernels[d * c_max..(d + 1) * c_max])?.eval_many(&times))
                .collect::<nvkm::Result<Vec<_>>>()
        })
        .collect::<nvkm::Result<Vec<_>>>()?;
    for d in 0..model.outputs() {
        for (i, t) in times.iter().enumerate() {
            rows.push((format!("{d},{t}"), per_sample.iter().map(|s| s[d][i]).collect()));
        }
    }
    write_file(&dir.join("prior_outputs.csv"), sample_table("output,t", rows.into_iter(), samples))?;
    println!("wrote {} prior samples to {}", samples, dir.display());
    Ok(())
}
