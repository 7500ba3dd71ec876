//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nvkm::data::{gen_synthetic, split, standardize, SplitSpec, TimeSeriesDataset};
use nvkm::inference::{evaluate, simulate, train, TrainingConfig};
use nvkm::kernels::{dse_cov, se_cov, DseKernel, Points, SeKernel};
use nvkm::model::{init_model, kl_term, linspace, write_checkpoint, ModelConfig, VolterraModel};
use nvkm::oracle::{
    gradient_check, integral_checks, kl_check, random_kl_instance, toy_problem, volterra_check, IntegralFns,
    GRADIENT_TOLERANCE,
};
use nvkm::pathwise::{draw_basis, eval_path, ExplicitPath, VariationalGaussian};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn volterra_equivalence() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let checks = [volterra_check(1, 100, 101)?, volterra_check(2, 100, 101)?, volterra_check(3, 20, 101)?];
    let secs = start.elapsed().as_secs_f64();
    let detail = checks
        .iter()
        .map(|c| format!("c={}: worst {:.2e} (tol {:.0e}, {:.1}s)", &c.name[c.name.len() - 1..], c.worst, c.tolerance, c.seconds))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(outcome(
        checks.iter().all(|c| c.passed) && secs < 1800.0,
        format!("{detail}; total {secs:.1}s"),
    ))
}

fn elementary_integrals() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let checks = integral_checks(&IntegralFns::default(), 1000, 202)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    Ok(outcome(
        checks.iter().all(|c| c.passed) && secs < 60.0,
        format!("5 integrals x 1000 draws, worst {worst:.2e} (tol 1e-6), {secs:.1}s"),
    ))
}

fn matheron_interpolation() -> nvkm::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let l = rng.random_range(0.5..1.5);
        let kernel = SeKernel::from_length_scale(rng.random_range(0.5..2.0), l)?;
        let z = if i % 2 == 0 {
            let m = rng.random_range(2..=30);
            let mut x = 0.0;
            let pts: Vec<f64> = (0..m)
                .map(|_| {
                    x += l * rng.random_range(0.8..1.5);
                    x
                })
                .collect();
            Points::from_scalars(&pts)
        } else {
            let k = rng.random_range(2..=5);
            let h = l * rng.random_range(1.0..1.5);
            let mut rows = Vec::new();
            for a in 0..k {
                for b in 0..k {
                    rows.push(vec![a as f64 * h + 0.1 * l * rng.random::<f64>(), b as f64 * h]);
                }
            }
            Points::from_rows(&rows)?
        };
        let basis = draw_basis(&kernel, z.dim(), 50, &mut rng)?;
        let v: Vec<f64> = (0..z.len()).map(|_| kernel.amplitude * rng.sample::<f64, _>(StandardNormal)).collect();
        let path = ExplicitPath::condition(basis, z.clone(), &v, kernel, 1e-8, 0.0)?;
        for (j, vj) in v.iter().enumerate() {
            let err = (eval_path(&path, z.row(j))? - vj).abs() / (1.0 + vj.abs());
            worst = worst.max(err);
        }
    }
    Ok(outcome(worst < 1e-6, format!("50 paths, M <= 30, worst {worst:.2e} (tol 1e-6)")))
}

fn dse_identity() -> nvkm::Result<Outcome> {
    let dse = DseKernel::new(1.3, 0.4, 0.7)?;
    let se = SeKernel::new(1.3, 0.7)?;
    let grid = linspace(-3.0, 3.0, 20);
    let mut worst: f64 = 0.0;
    for a in &grid {
        for b in &grid {
            let lhs = dse_cov(&[*a], &[*b], &dse)?;
            let rhs = (-0.4 * (a * a + b * b)).exp() * se_cov(&[*a], &[*b], &se)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(outcome(worst < 1e-12, format!("20x20 grid, max error {worst:.2e} (tol 1e-12)")))
}

fn kl_correctness() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let mc = kl_check(20, 1_000_000, 505)?;
    let mut rng = ChaCha8Rng::seed_from_u64(506);
    let mut prior_worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(2..=20);
        let (_, gram) = random_kl_instance(m, &mut rng)?;
        prior_worst = prior_worst.max(kl_term(&VariationalGaussian::from_prior(&gram, 1.0), &gram)?);
    }
    Ok(outcome(
        mc.passed && prior_worst < 1e-10,
        format!(
            "20 instances x 1e6 draws, worst {:.2} standard errors (tol 3); KL(prior) max {prior_worst:.1e}; {:.1}s",
            mc.worst,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn gradient_fidelity() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let (model, data) = toy_problem(2, 606)?;
    let check = gradient_check(&model, &data, 2, 607, 1e-4)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = check.worst();
    Ok(outcome(
        worst < GRADIENT_TOLERANCE && secs < 300.0,
        format!("{} leaves, worst relative error {worst:.2e} (tol 1e-4), {secs:.1}s", check.leaves.len()),
    ))
}

struct Prepared {
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    model: VolterraModel,
}

fn prepare_synthetic(order: usize, seed: u64) -> nvkm::Result<Prepared> {
    let ds = gen_synthetic(1200, [-20.0, 20.0], seed)?;
    let (train, test) = split(&ds, &SplitSpec::RandomFraction { fraction: 1.0 / 3.0, seed })?;
    let (train, params) = standardize(&train)?;
    let config = ModelConfig {
        order,
        time_span: ds.time_span(),
        points_per_output: Some(train.max_points_per_output()),
        seed,
        ..ModelConfig::default()
    };
    let mut model = init_model(&config)?;
    model.standardization = Some(params);
    Ok(Prepared { train, test, model })
}

fn synthetic_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        phase1_steps: 1500,
        phase2_steps: 100,
        learning_rate: 1e-2,
        seed,
        ..TrainingConfig::default()
    }
}

fn synthetic_ordering() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let mut by_order = Vec::new();
    for order in [1, 2] {
        let mut scores = Vec::new();
        for seed in 0..3 {
            let p = prepare_synthetic(order, seed)?;
            let (trained, _) = train(&p.model, &p.train, &synthetic_config(seed))?;
            let e = evaluate(&trained, &p.test, 50, &mut ChaCha8Rng::seed_from_u64(seed))?;
            scores.push(e.mean_nmse());
        }
        by_order.push(scores);
    }
    let secs = start.elapsed().as_secs_f64();
    let (m1, m2) = (median(by_order[0].clone()), median(by_order[1].clone()));
    let all_below = by_order.iter().flatten().all(|v| *v < 1.0);
    Ok(outcome(
        m2 < m1 && all_below && secs < 3600.0,
        format!(
            "test NMSE C=1 {:?}, C=2 {:?}; medians {m1:.3} vs {m2:.3}; {secs:.0}s",
            by_order[0].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            by_order[1].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn toy_training(seed: u64, steps: usize) -> TrainingConfig {
    TrainingConfig {
        samples: 2,
        batch_size: 24,
        phase1_steps: steps,
        phase2_steps: 0,
        learning_rate: 1e-2,
        fixed_noise: 0.1,
        seed,
        ..TrainingConfig::default()
    }
}

fn elbo_ascent() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let mut ascended = 0;
    let mut gains = Vec::new();
    for seed in 0..10 {
        let (model, data) = toy_problem(2, seed)?;
        let (_, trace) = train(&model, &data, &toy_training(seed, 300))?;
        let (first, last) = trace.smoothed_endpoints(1, 50).expect("phase 1 ran");
        if last > first {
            ascended += 1;
        }
        gains.push(last - first);
    }
    Ok(outcome(
        ascended >= 8,
        format!(
            "{ascended}/10 seeds ascend (need 8), median gain {:.1}, {:.1}s",
            median(gains),
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn reproducibility() -> nvkm::Result<Outcome> {
    let run = || -> nvkm::Result<(Vec<u8>, String)> {
        let p = prepare_synthetic(2, 9)?;
        let cfg = TrainingConfig {
            phase1_steps: 40,
            phase2_steps: 10,
            seed: 9,
            ..TrainingConfig::default()
        };
        let (trained, trace) = train(&p.model, &p.train, &cfg)?;
        let e = evaluate(&trained, &p.test, 20, &mut ChaCha8Rng::seed_from_u64(9))?;
        let report = format!(
            "{:?} {:?}",
            e.outputs.iter().map(|m| (m.nmse.to_bits(), m.rmse.to_bits(), m.nlpd.to_bits())).collect::<Vec<_>>(),
            trace.rows.iter().map(|r| r.elbo.to_bits()).collect::<Vec<_>>()
        );
        Ok((write_checkpoint(&trained)?, report))
    };
    let (a, ra) = run()?;
    let (b, rb) = run()?;
    Ok(outcome(
        a == b && ra == rb,
        format!("checkpoints {} bytes, identical: {}; reports identical: {}", a.len(), a == b, ra == rb),
    ))
}

fn io_rmse(seed: u64) -> nvkm::Result<(f64, f64)> {
    let truth_cfg = ModelConfig {
        order: 2,
        n_basis: 50,
        axis_sizes: Some(vec![10, 6]),
        input_inducing: Some(30),
        vk_range: 1.5,
        time_span: Some([-15.0, 15.0]),
        output_noise: 0.05,
        input_noise: 0.05,
        io_mode: true,
        seed: 1000 + seed,
        ..ModelConfig::default()
    };
    let mut truth = init_model(&truth_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let draw = |gram: nvkm::kernels::Gram, rng: &mut ChaCha8Rng| -> nvkm::Result<VariationalGaussian> {
        let m = gram.size();
        let eps = nalgebra::DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        VariationalGaussian::new(gram.cholesky.l() * eps, gram.cholesky.l() * 1e-3)
    };
    truth.input.variational = draw(truth.input_gram()?, &mut rng)?;
    for k in 0..truth.kernels.len() {
        truth.kernels[k].variational = draw(truth.kernel_gram(k)?, &mut rng)?;
    }
    let sim = simulate(&truth, &[linspace(-15.0, 15.0, 300)], Some(&linspace(-15.0, 15.0, 300)), &mut rng)?;
    let (train_set, test_set) = split(&sim.dataset, &SplitSpec::RandomFraction { fraction: 0.5, seed })?;
    let cfg = ModelConfig {
        seed,
        ..truth_cfg.clone()
    };
    let model = init_model(&cfg)?;
    let untrained = evaluate(&model, &test_set, 50, &mut ChaCha8Rng::seed_from_u64(seed))?.mean_rmse();
    let tcfg = TrainingConfig {
        phase1_steps: 600,
        phase2_steps: 100,
        learning_rate: 1e-2,
        seed,
        ..TrainingConfig::default()
    };
    let (trained, _) = train(&model, &train_set, &tcfg)?;
    let after = evaluate(&trained, &test_set, 50, &mut ChaCha8Rng::seed_from_u64(seed))?.mean_rmse();
    Ok((untrained, after))
}

fn io_plumbing() -> nvkm::Result<Outcome> {
    let start = Instant::now();
    let mut ratios = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..3 {
        let (before, after) = io_rmse(seed)?;
        ratios.push(before / after);
        detail.push(format!("{before:.3}->{after:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let m = median(ratios);
    Ok(outcome(
        m >= 2.0 && secs < 1800.0,
        format!("test RMSE untrained->trained {}; median ratio {m:.2} (need 2); {secs:.0}s", detail.join(", ")),
    ))
}

type Criterion = (usize, &'static str, fn() -> nvkm::Result<Outcome>);

const CRITERIA: [Criterion; 10] = [
    (1, "closed form vs quadrature", volterra_equivalence),
    (2, "elementary integrals", elementary_integrals),
    (3, "Matheron interpolation", matheron_interpolation),
    (4, "DSE identity", dse_identity),
    (5, "KL correctness", kl_correctness),
    (6, "gradient fidelity", gradient_fidelity),
    (7, "synthetic ordering", synthetic_ordering),
    (8, "ELBO ascent", elbo_ascent),
    (9, "reproducibility", reproducibility),
    (10, "IO-NVKM plumbing", io_plumbing),
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // `cargo test -- --list` style invocations carry no criterion numbers.
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in CRITERIA {
            println!("criterion_{n}: test ({name})");
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let line = match run() {
            Ok(o) => {
                if !o.passed {
                    failed += 1;
                }
                format!("{} criterion {n:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(e) => {
                failed += 1;
                format!("FAIL criterion {n:>2} {name}: error: {e}")
            }
        };
        println!("{line}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
