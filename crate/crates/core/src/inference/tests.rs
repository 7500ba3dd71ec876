use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{init_model, linspace, total_kl, Leaf, ModelConfig};
use crate::oracle::{finite_diff_grad, gradient_check, toy_problem};

fn io_toy(seed: u64) -> (VolterraModel, TimeSeriesDataset) {
    let config = ModelConfig {
        order: 2,
        n_basis: 10,
        axis_sizes: Some(vec![5, 4]),
        input_inducing: Some(5),
        vk_range: 1.5,
        time_span: Some([-4.0, 4.0]),
        output_noise: 0.1,
        input_noise: 0.1,
        io_mode: true,
        seed,
        ..ModelConfig::default()
    };
    let model = init_model(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = simulate(&model, &[linspace(-3.0, 3.0, 10)], Some(&linspace(-3.5, 3.5, 8)), &mut rng).unwrap();
    (model, sim.dataset)
}

#[test]
fn gradient_matches_finite_differences() {
    for order in [1, 2] {
        let (model, data) = toy_problem(order, 11).unwrap();
        let check = gradient_check(&model, &data, 2, 5, 1e-5).unwrap();
        for (leaf, err) in &check.leaves {
            assert!(*err < 1e-4, "order {order} {}: {err:e}", leaf.name());
        }
    }
}

#[test]
fn io_gradient_matches_finite_differences() {
    let (model, data) = io_toy(3);
    let check = gradient_check(&model, &data, 2, 9, 1e-5).unwrap();
    assert!(check.leaves.iter().any(|(l, _)| *l == Leaf::LogInputNoise));
    for (leaf, err) in &check.leaves {
        assert!(*err < 1e-4, "{}: {err:e}", leaf.name());
    }
}

#[test]
fn empty_batch_is_negative_kl() {
    let (model, data) = toy_problem(2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = grad_elbo(&model, &data, &Batch::default(), 2, &mut rng).unwrap();
    let kl = total_kl(&model).unwrap();
    assert!((g.value + kl).abs() < 1e-10 * kl.max(1.0));
    let layout = ParamLayout::new(&model);
    let x0 = layout.to_flat(&model).unwrap();
    let mut work = model.clone();
    let numeric = finite_diff_grad(
        |x| {
            layout.set_flat(&mut work, x, None).unwrap();
            -total_kl(&work).unwrap()
        },
        &x0,
        1e-6,
    );
    for (a, n) in g.grad.iter().zip(&numeric) {
        assert!((a - n).abs() < 1e-5 * n.abs().max(1.0), "{a} vs {n}");
    }
    for d in 0..model.outputs() {
        assert_eq!(g.leaf(Leaf::LogOutputNoise(d)).unwrap(), &[0.0]);
    }
}

#[test]
fn estimates_are_deterministic() {
    let (model, data) = toy_problem(2, 1).unwrap();
    let batch = Batch::full(&data);
    let a = grad_elbo(&model, &data, &batch, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let b = grad_elbo(&model, &data, &batch, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.grad, b.grad);
    let e = elbo_estimate(&model, &data, &batch, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(e.to_bits(), a.value.to_bits());
    assert!(elbo_estimate(&model, &data, &batch, 0, &mut ChaCha8Rng::seed_from_u64(8)).is_err());
}

#[test]
fn minibatch_estimate_is_unbiased() {
    let (model, data) = toy_problem(1, 2).unwrap();
    let small = TimeSeriesDataset::new(vec![data.outputs[0].subset(&[0, 4, 8, 12, 16, 20])]);
    let draws = draw_samples(&model, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let full = elbo_with_grad(&model, &small, &Batch::full(&small), &draws, true).unwrap();
    let mut value = 0.0;
    let mut grad = vec![0.0; full.grad.len()];
    let mut count = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            let batch = Batch {
                outputs: vec![(0, i), (0, j)],
                inputs: vec![],
            };
            let g = elbo_with_grad(&model, &small, &batch, &draws, true).unwrap();
            value += g.value;
            grad.iter_mut().zip(&g.grad).for_each(|(a, b)| *a += b);
            count += 1.0;
        }
    }
    assert!((value / count - full.value).abs() < 1e-9 * full.value.abs().max(1.0));
    for (a, b) in grad.iter().zip(&full.grad) {
        assert!((a / count - b).abs() < 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn batch_sampling() {
    let (_, data) = toy_problem(1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = Batch::sample(&data, 5, &mut rng);
    assert_eq!(b.outputs.len(), 5);
    assert!(b.outputs.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(Batch::sample(&data, 1000, &mut rng), Batch::full(&data));
}

fn short_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        samples: 2,
        batch_size: 8,
        phase1_steps: 6,
        phase2_steps: 4,
        learning_rate: 1e-2,
        seed,
        ..TrainingConfig::default()
    }
}

#[test]
fn training_is_reproducible_and_phases_respect_masks() {
    let (model, data) = toy_problem(2, 3).unwrap();
    let cfg = short_config(4);
    let (a, ta) = train(&model, &data, &cfg).unwrap();
    let (b, tb) = train(&model, &data, &cfg).unwrap();
    let layout = ParamLayout::new(&model);
    let fa = layout.to_flat(&a).unwrap();
    let fb = layout.to_flat(&b).unwrap();
    assert!(fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(ta.rows, tb.rows);
    assert!(ta.aborted.is_none());
    assert_eq!(ta.len(), 10);
    assert_eq!(ta.rows[6].step, 6);
    assert!(ta.rows[..6].iter().all(|r| r.output_noise == vec![cfg.fixed_noise]));

    let phase1 = TrainingConfig { phase2_steps: 0, ..cfg.clone() };
    let (p1, _) = train(&model, &data, &phase1).unwrap();
    let f1 = layout.to_flat(&p1).unwrap();
    for leaf in layout.leaves() {
        let r = layout.range(leaf).unwrap();
        let same = f1[r.clone()].iter().zip(&fa[r]).all(|(x, y)| x.to_bits() == y.to_bits());
        assert_eq!(same, !leaf.is_noise(), "{}", leaf.name());
    }
    assert_eq!(p1.output_noise, vec![cfg.fixed_noise]);
}

#[test]
fn zero_steps_return_the_model() {
    let (model, data) = toy_problem(1, 3).unwrap();
    let cfg = TrainingConfig {
        phase1_steps: 0,
        phase2_steps: 0,
        ..TrainingConfig::default()
    };
    let (m, trace) = train(&model, &data, &cfg).unwrap();
    let layout = ParamLayout::new(&model);
    assert_eq!(layout.to_flat(&m).unwrap(), layout.to_flat(&model).unwrap());
    assert!(trace.is_empty());
}

#[test]
fn training_rejects_mismatched_data() {
    let (model, data) = toy_problem(1, 3).unwrap();
    let two = TimeSeriesDataset::new(vec![data.outputs[0].clone(), data.outputs[0].clone()]);
    assert!(train(&model, &two, &short_config(0)).is_err());
    let (io, io_data) = io_toy(1);
    let no_input = TimeSeriesDataset { input: None, ..io_data };
    assert!(train(&io, &no_input, &short_config(0)).is_err());
}

#[test]
fn single_sample_prediction_has_noise_sd() {
    let (model, _) = toy_problem(2, 6).unwrap();
    let times = vec![linspace(-2.0, 2.0, 7)];
    let p = predict(&model, &times, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let out = &p.outputs[0];
    assert_eq!(out.samples.len(), 1);
    assert_eq!(out.mean, out.samples[0]);
    assert!(out.sd.iter().all(|s| *s == model.output_noise[0]));
    assert!(predict(&model, &times, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!(predict(&model, &[vec![f64::NAN]], 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn prediction_matches_two_branch_sampler() {
    let (model, _) = toy_problem(2, 7).unwrap();
    let times = linspace(-2.0, 2.0, 5);
    let p = predict(&model, &[times.clone()], 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let paths = draw_path_samples(&model, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for (s, path) in paths.iter().enumerate() {
        let sample = OutputSample::new(&path.input, &path.kernels).unwrap();
        let direct = sample.eval_many(&times).unwrap();
        for (a, b) in direct.iter().zip(&p.outputs[0].samples[s]) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn zero_variational_mean_shrinks_towards_zero() {
    let (mut model, _) = toy_problem(1, 8).unwrap();
    model.reset_to_prior().unwrap();
    let p = predict_input(&model, &[0.0, 1.0], 400, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mean: f64 = p.iter().map(|s| s[0]).sum::<f64>() / 400.0;
    assert!(mean.abs() < 0.2, "{mean}");
}

#[test]
fn simulated_shapes() {
    let (model, data) = io_toy(5);
    assert_eq!(data.outputs[0].len(), 10);
    assert_eq!(data.input.as_ref().unwrap().len(), 8);
    let sim = simulate(&model, &[vec![0.0, 1.0]], None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(sim.clean_outputs[0].len(), 2);
    assert!(sim.clean_input.is_none());
}

#[test]
fn trace_smoothing() {
    let rows = (0..10)
        .map(|i| TraceRow {
            step: i,
            phase: 1,
            elbo: i as f64,
            output_noise: vec![0.1],
            input_noise: 0.1,
        })
        .collect();
    let t = TrainTrace {
        rows,
        ..TrainTrace::default()
    };
    assert_eq!(t.smoothed_endpoints(1, 3), Some((1.0, 8.0)));
    assert_eq!(t.smoothed_endpoints(1, 50), Some((4.5, 4.5)));
    assert_eq!(t.smoothed_endpoints(2, 3), None);
}
