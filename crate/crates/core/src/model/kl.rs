use nalgebra::{DMatrix, DVector};

use super::VolterraModel;
use crate::error::{NvkmError, Result};
use crate::kernels::Gram;
use crate::pathwise::VariationalGaussian;

/// `KL[N(μ, L Lᵀ) ‖ N(0, K)]`
/// `= ½ (log|K| - log|L Lᵀ| - M + tr(K⁻¹ L Lᵀ) + μᵀ K⁻¹ μ)`.
pub fn kl_term(q: &VariationalGaussian, prior: &Gram) -> Result<f64> {
    check_sizes(q, prior)?;
    let m = q.len();
    let chol = q.chol();
    let log_det_q: f64 = 2.0 * (0..m).map(|i| chol[(i, i)].ln()).sum::<f64>();
    // tr(K⁻¹ L Lᵀ) = ‖K_L⁻¹ L‖_F² with K = K_L K_Lᵀ.
    let half = prior.cholesky.l().solve_lower_triangular(chol).expect("non-singular factor");
    let trace = half.norm_squared();
    let mu = prior.cholesky.l().solve_lower_triangular(q.mean()).expect("non-singular factor");
    let quad = mu.norm_squared();
    let kl = 0.5 * (prior.log_det() - log_det_q - m as f64 + trace + quad);
    // Rounding can leave a tiny negative value when q equals the prior.
    Ok(kl.max(0.0))
}

fn check_sizes(q: &VariationalGaussian, prior: &Gram) -> Result<()> {
    if q.len() != prior.size() {
        return Err(NvkmError::invalid(format!(
            "variational dimension {} does not match prior Gram of size {}",
            q.len(),
            prior.size()
        )));
    }
    Ok(())
}

/// Sum of the KL terms of every Volterra-kernel spec and the input process.
pub fn total_kl(model: &VolterraModel) -> Result<f64> {
    let mut total = kl_term(&model.input.variational, &model.input_gram()?)?;
    for k in 0..model.kernels.len() {
        total += kl_term(&model.kernels[k].variational, &model.kernel_gram(k)?)?;
    }
    Ok(total)
}

/// KL value with its gradients with respect to `μ`, the lower factor `L`
/// and the prior Gram `K`.
#[derive(Debug, Clone)]
pub(crate) struct KlGrad {
    pub value: f64,
    pub mean: DVector<f64>,
    /// Lower triangular.
    pub chol: DMatrix<f64>,
    /// Symmetric.
    pub gram: DMatrix<f64>,
}

pub(crate) fn kl_term_with_grad(q: &VariationalGaussian, prior: &Gram) -> Result<KlGrad> {
    check_sizes(q, prior)?;
    let m = q.len();
    let value = {
        let chol = q.chol();
        let log_det_q: f64 = 2.0 * (0..m).map(|i| chol[(i, i)].ln()).sum::<f64>();
        let half = prior.cholesky.l().solve_lower_triangular(chol).expect("non-singular factor");
        let mu = prior.cholesky.l().solve_lower_triangular(q.mean()).expect("non-singular factor");
        0.5 * (prior.log_det() - log_det_q - m as f64 + half.norm_squared() + mu.norm_squared())
    };
    let kinv = prior.cholesky.inverse();
    let kinv_mu = &kinv * q.mean();
    let kinv_l = &kinv * q.chol();
    let mut chol_grad = kinv_l.clone();
    for i in 0..m {
        chol_grad[(i, i)] -= 1.0 / q.chol()[(i, i)];
        for j in i + 1..m {
            chol_grad[(i, j)] = 0.0;
        }
    }
    // ½ (K⁻¹ - K⁻¹ (Σ + μ μᵀ) K⁻¹)
    let outer = &kinv_l * kinv_l.transpose() + &kinv_mu * kinv_mu.transpose();
    let gram_grad = (&kinv - outer) * 0.5;
    Ok(KlGrad {
        value,
        mean: kinv_mu,
        chol: chol_grad,
        gram: gram_grad,
    })
}
