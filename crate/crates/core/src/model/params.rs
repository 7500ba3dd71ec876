//! Flat, unconstrained view of the trainable parameters.
//!
//! Positive quantities are stored as logs and Cholesky factors as their
//! lower triangle (row by row) with a log diagonal.

use nalgebra::{DMatrix, DVector};

use super::VolterraModel;
use crate::error::{NvkmError, Result};
use crate::kernels::{length_scale_from_precision, precision_from_length_scale, SeKernel};

/// One trainable block of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leaf {
    InputMean,
    InputChol,
    InputLogAmplitude,
    KernelMean(usize),
    KernelChol(usize),
    KernelLogAmplitude(usize),
    KernelLogLengthScale(usize),
    LogOutputNoise(usize),
    LogInputNoise,
}

impl Leaf {
    pub fn is_noise(&self) -> bool {
        matches!(self, Leaf::LogOutputNoise(_) | Leaf::LogInputNoise)
    }

    pub fn name(&self) -> String {
        match self {
            Leaf::InputMean => "input.mean".into(),
            Leaf::InputChol => "input.chol".into(),
            Leaf::InputLogAmplitude => "input.log_amplitude".into(),
            Leaf::KernelMean(k) => format!("vk[{k}].mean"),
            Leaf::KernelChol(k) => format!("vk[{k}].chol"),
            Leaf::KernelLogAmplitude(k) => format!("vk[{k}].log_amplitude"),
            Leaf::KernelLogLengthScale(k) => format!("vk[{k}].log_length_scale"),
            Leaf::LogOutputNoise(d) => format!("noise.output[{d}]"),
            Leaf::LogInputNoise => "noise.input".into(),
        }
    }
}

/// Offsets of every leaf in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    entries: Vec<(Leaf, usize, usize)>,
    len: usize,
}

fn tri_len(m: usize) -> usize {
    m * (m + 1) / 2
}

impl ParamLayout {
    pub fn new(model: &VolterraModel) -> Self {
        let mut entries = Vec::new();
        let mut off = 0;
        let mut push = |leaf: Leaf, n: usize| {
            entries.push((leaf, off, n));
            off += n;
        };
        let mu = model.input.variational.len();
        push(Leaf::InputMean, mu);
        push(Leaf::InputChol, tri_len(mu));
        push(Leaf::InputLogAmplitude, 1);
        for (k, spec) in model.kernels.iter().enumerate() {
            let m = spec.variational.len();
            push(Leaf::KernelMean(k), m);
            push(Leaf::KernelChol(k), tri_len(m));
            push(Leaf::KernelLogAmplitude(k), 1);
            push(Leaf::KernelLogLengthScale(k), 1);
        }
        for d in 0..model.outputs() {
            push(Leaf::LogOutputNoise(d), 1);
        }
        if model.io_mode() {
            push(Leaf::LogInputNoise, 1);
        }
        ParamLayout { entries, len: off }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn leaves(&self) -> impl Iterator<Item = Leaf> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// `(offset, length)` of a leaf.
    pub fn range(&self, leaf: Leaf) -> Option<std::ops::Range<usize>> {
        self.entries
            .iter()
            .find(|e| e.0 == leaf)
            .map(|&(_, off, n)| off..off + n)
    }

    /// Per-entry mask selecting the leaves for which `select` is true.
    pub fn mask(&self, select: impl Fn(Leaf) -> bool) -> Vec<bool> {
        let mut mask = vec![false; self.len];
        for &(leaf, off, n) in &self.entries {
            if select(leaf) {
                mask[off..off + n].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    fn check(&self, model: &VolterraModel) -> Result<()> {
        if *self != ParamLayout::new(model) {
            return Err(NvkmError::invalid("parameter layout does not match the model"));
        }
        Ok(())
    }

    /// Reads the trainable parameters out of `model`.
    pub fn to_flat(&self, model: &VolterraModel) -> Result<Vec<f64>> {
        self.check(model)?;
        let mut out = vec![0.0; self.len];
        for &(leaf, off, n) in &self.entries {
            let dst = &mut out[off..off + n];
            match leaf {
                Leaf::InputMean => dst.copy_from_slice(model.input.variational.mean().as_slice()),
                Leaf::InputChol => pack_chol(model.input.variational.chol(), dst),
                Leaf::InputLogAmplitude => dst[0] = model.input.kernel.amplitude.ln(),
                Leaf::KernelMean(k) => dst.copy_from_slice(model.kernels[k].variational.mean().as_slice()),
                Leaf::KernelChol(k) => pack_chol(model.kernels[k].variational.chol(), dst),
                Leaf::KernelLogAmplitude(k) => dst[0] = model.kernels[k].kernel.amplitude.ln(),
                Leaf::KernelLogLengthScale(k) => {
                    dst[0] = length_scale_from_precision(model.kernels[k].kernel.precision).ln()
                }
                Leaf::LogOutputNoise(d) => dst[0] = model.output_noise[d].ln(),
                Leaf::LogInputNoise => dst[0] = model.input_noise.ln(),
            }
        }
        Ok(out)
    }

    /// Writes back every leaf whose entries are all selected by `mask`
    /// (or every leaf when `mask` is `None`). Unselected leaves are left
    /// untouched bit for bit.
    pub fn set_flat(&self, model: &mut VolterraModel, flat: &[f64], mask: Option<&[bool]>) -> Result<()> {
        self.check(model)?;
        if flat.len() != self.len || mask.is_some_and(|m| m.len() != self.len) {
            return Err(NvkmError::invalid("flat parameter vector has the wrong length"));
        }
        if let Some(bad) = flat.iter().position(|x| !x.is_finite()) {
            return Err(NvkmError::NonFinite(format!("parameter entry {bad}")));
        }
        for &(leaf, off, n) in &self.entries {
            if let Some(m) = mask {
                if !m[off..off + n].iter().all(|b| *b) {
                    continue;
                }
            }
            let src = &flat[off..off + n];
            match leaf {
                Leaf::InputMean => *model.input.variational.mean_mut() = DVector::from_column_slice(src),
                Leaf::InputChol => unpack_chol(src, model.input.variational.chol_mut()),
                Leaf::InputLogAmplitude => {
                    model.input.kernel = SeKernel::new(src[0].exp(), model.input.kernel.precision)?
                }
                Leaf::KernelMean(k) => *model.kernels[k].variational.mean_mut() = DVector::from_column_slice(src),
                Leaf::KernelChol(k) => unpack_chol(src, model.kernels[k].variational.chol_mut()),
                Leaf::KernelLogAmplitude(k) => {
                    let spec = &mut model.kernels[k];
                    spec.kernel = SeKernel::new(src[0].exp(), spec.kernel.precision)?;
                }
                Leaf::KernelLogLengthScale(k) => {
                    let spec = &mut model.kernels[k];
                    spec.kernel = SeKernel::new(spec.kernel.amplitude, precision_from_length_scale(src[0].exp()))?;
                }
                Leaf::LogOutputNoise(d) => model.output_noise[d] = src[0].exp(),
                Leaf::LogInputNoise => model.input_noise = src[0].exp(),
            }
        }
        Ok(())
    }
}

fn pack_chol(l: &DMatrix<f64>, dst: &mut [f64]) {
    let mut k = 0;
    for i in 0..l.nrows() {
        for j in 0..=i {
            dst[k] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
            k += 1;
        }
    }
}

fn unpack_chol(src: &[f64], l: &mut DMatrix<f64>) {
    let mut k = 0;
    for i in 0..l.nrows() {
        for j in 0..=i {
            l[(i, j)] = if i == j { src[k].exp() } else { src[k] };
            k += 1;
        }
    }
}

/// Packs a gradient with respect to the lower factor into the flat layout,
/// applying the chain rule for the log diagonal.
pub(crate) fn pack_chol_grad(l: &DMatrix<f64>, grad: &DMatrix<f64>, dst: &mut [f64]) {
    let mut k = 0;
    for i in 0..l.nrows() {
        for j in 0..=i {
            dst[k] += if i == j { grad[(i, i)] * l[(i, i)] } else { grad[(i, j)] };
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    fn model(io: bool) -> VolterraModel {
        init_model(&ModelConfig {
            order: 2,
            outputs: 2,
            io_mode: io,
            axis_sizes: Some(vec![5, 4]),
            time_span: Some([0.0, 10.0]),
            input_inducing: Some(6),
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn flat_round_trip() {
        let m = model(true);
        let layout = ParamLayout::new(&m);
        let flat = layout.to_flat(&m).unwrap();
        assert_eq!(flat.len(), layout.len());
        let mut m2 = m.clone();
        layout.set_flat(&mut m2, &flat, None).unwrap();
        let again = layout.to_flat(&m2).unwrap();
        for (a, b) in flat.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_write_leaves_other_leaves_bit_exact() {
        let m = model(false);
        let layout = ParamLayout::new(&m);
        let mut flat = layout.to_flat(&m).unwrap();
        flat.iter_mut().for_each(|x| *x += 0.1);
        let mask = layout.mask(|l| l.is_noise());
        let mut m2 = m.clone();
        layout.set_flat(&mut m2, &flat, Some(&mask)).unwrap();
        assert_eq!(m2.kernels, m.kernels);
        assert_eq!(m2.input, m.input);
        assert_ne!(m2.output_noise, m.output_noise);
    }

    #[test]
    fn input_noise_only_in_io_mode() {
        assert!(ParamLayout::new(&model(false)).range(Leaf::LogInputNoise).is_none());
        assert!(ParamLayout::new(&model(true)).range(Leaf::LogInputNoise).is_some());
    }
}
