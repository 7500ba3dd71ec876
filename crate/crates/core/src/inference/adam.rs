use serde::{Deserialize, Serialize};

use crate::error::{NvkmError, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step that descends `grads`. Entries with a
/// `false` mask keep their value and moments. A non-finite gradient aborts
/// the step without touching `params` or `state`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hyper: &AdamConfig,
    mask: Option<&[bool]>,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n || mask.is_some_and(|m| m.len() != n) {
        return Err(NvkmError::invalid("Adam parameter, gradient and state sizes differ"));
    }
    if let Some(i) = grads
        .iter()
        .enumerate()
        .position(|(i, g)| !g.is_finite() && mask.is_none_or(|m| m[i]))
    {
        return Err(NvkmError::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.t += 1;
    let b1t = 1.0 - hyper.beta1.powf(state.t as f64);
    let b2t = 1.0 - hyper.beta2.powf(state.t as f64);
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        params[i] -= hyper.learning_rate * mhat / (vhat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default(), None).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let hyper = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        for _ in 0..500 {
            let before = p.clone();
            adam_step(&mut p, &[3.0, -0.01], &mut s, &hyper, None).unwrap();
            assert!((before[0] - p[0] - hyper.learning_rate).abs() < 1e-6);
            assert!((p[1] - before[1] - hyper.learning_rate).abs() < 1e-4);
        }
    }

    #[test]
    fn quadratic_bowl() {
        let hyper = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut x = vec![1.5, -0.7, 3.0];
        let mut s = AdamState::new(3);
        let mut steps = 0;
        while x.iter().map(|v| v * v).sum::<f64>() > 1e-6 && steps < 5000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam_step(&mut x, &g, &mut s, &hyper, None).unwrap();
            steps += 1;
        }
        assert!(x.iter().map(|v| v * v).sum::<f64>() <= 1e-6, "after {steps} steps: {x:?}");
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let r = adam_step(&mut p, &[f64::NAN, 0.0], &mut s, &AdamConfig::default(), None);
        assert!(matches!(r, Err(NvkmError::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn masked_entries_are_untouched() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[1.0, 1.0], &mut s, &AdamConfig::default(), Some(&[true, false])).unwrap();
        assert_ne!(p[0], 1.0);
        assert_eq!(p[1], 2.0);
        assert_eq!(s.m[1], 0.0);
    }
}
