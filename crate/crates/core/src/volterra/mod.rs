//! Closed-form Volterra-series output samples.

mod integrals;
mod term;

pub use integrals::{eval_i1a, eval_i1b, eval_i2a, eval_i2b, gauss_integral, ComplexValue};
pub use term::{eval_output_sample, eval_term, OutputSample, VolterraTermInputs, REALNESS_TOLERANCE};

pub(crate) use term::{InputAt, InputSide, KernelSide, KernelSideGrad, TermWorkspace};
