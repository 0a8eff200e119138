//! Pointwise PU losses and full-objective evaluators.
//!
//! The objectives never enumerate the unlabeled entries. The data term is
//! split into a dense part, evaluated on the factored model through
//! `‖W Hᵀ‖_F² = trace((WᵀW)(HᵀH))`, and a correction over the revealed ones,
//! so one evaluation costs `O((m + n) k² + |Ω₁| k)`.

use serde::{Deserialize, Serialize};

use crate::error::{PumcError, Result};
use crate::linalg::{accumulate_outer, axpy, DenseMatrix};
use crate::model::{check_alpha, check_rho, check_unit_open, LowRankFactors, MatrixModel, ObservedOnes};
use crate::spectral::nuclear_norm;

/// Which pointwise loss a solver is minimizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    /// Unbiased estimator of the squared loss against the clean matrix.
    Shifted { rho: f64 },
    /// Label-dependent weighting of revealed ones and unlabeled entries.
    AlphaWeighted { alpha: f64 },
    PlainSquared,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Shifted { rho } => check_rho(rho),
            LossKind::AlphaWeighted { alpha } => check_unit_open("alpha", alpha),
            LossKind::PlainSquared => Ok(()),
        }
    }

    pub fn eval(&self, x: f64, a: bool) -> Result<f64> {
        match *self {
            LossKind::Shifted { rho } => tilde_loss(x, a, rho),
            LossKind::AlphaWeighted { alpha } => alpha_loss(x, a, alpha),
            LossKind::PlainSquared => Ok(if a { (x - 1.0) * (x - 1.0) } else { x * x }),
        }
    }
}

/// Unbiased loss: `((x-1)² - ρx²)/(1-ρ)` on a revealed one, `x²` otherwise.
/// Negative values are possible and intended.
pub fn tilde_loss(x: f64, a: bool, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(if a {
        ((x - 1.0) * (x - 1.0) - rho * x * x) / (1.0 - rho)
    } else {
        x * x
    })
}

/// The revealed-one branch of [`tilde_loss`] written as a shifted square:
/// `(x - 1/(1-ρ))² - ρ/(1-ρ)²`.
pub fn tilde_loss_shifted_form(x: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let target = 1.0 / (1.0 - rho);
    Ok((x - target) * (x - target) - rho * target * target)
}

pub fn alpha_loss(x: f64, a: bool, alpha: f64) -> Result<f64> {
    check_unit_open("alpha", alpha)?;
    Ok(if a {
        alpha * (x - 1.0) * (x - 1.0)
    } else {
        (1.0 - alpha) * x * x
    })
}

/// The weight that makes the α-weighted error an affine function of the
/// recovery error: `(1 + ρ) / 2`.
pub fn alpha_star(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok((1.0 + rho) / 2.0)
}

/// `max(1/q², 1/(1-q)²)`.
pub fn eta_constant(q: f64) -> Result<f64> {
    check_unit_open("q", q)?;
    Ok((1.0 / (q * q)).max(1.0 / ((1.0 - q) * (1.0 - q))))
}

/// Regularizer added to a data term. The two nuclear variants only agree at
/// optimality with enough rank, so callers always choose explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    None,
    /// `(λ/2)(‖W‖_F² + ‖H‖_F²)`.
    FactorRidge,
    /// `λ‖W Hᵀ‖_*`, computed from the factors.
    Nuclear,
}

fn regularizer_value(model: &LowRankFactors, lambda: f64, reg: Regularizer) -> Result<f64> {
    if lambda < 0.0 {
        return Err(PumcError::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(match reg {
        Regularizer::None => 0.0,
        Regularizer::FactorRidge => 0.5 * lambda * model.factor_frobenius_sq(),
        Regularizer::Nuclear => lambda * nuclear_norm(model)?,
    })
}

pub(crate) fn check_dims(model: &LowRankFactors, obs: &ObservedOnes) -> Result<()> {
    if model.rows() != obs.rows() || model.cols() != obs.cols() {
        return Err(PumcError::DimensionMismatch(format!(
            "model is {}x{} but observations are {}x{}",
            model.rows(),
            model.cols(),
            obs.rows(),
            obs.cols()
        )));
    }
    Ok(())
}

/// Predictions of the model on every revealed one, in entry order.
pub(crate) fn predictions_on_observed(model: &LowRankFactors, obs: &ObservedOnes) -> Vec<f64> {
    obs.entries()
        .iter()
        .map(|&(i, j)| model.predict_unchecked(i, j))
        .collect()
}

/// Weighted squared data term
/// `w_on Σ_{Ω₁} (x - target)² + w_off Σ_{not Ω₁} x²`, evaluated as
/// `w_off ‖X‖_F² + Σ_{Ω₁} [w_on (x - target)² - w_off x²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedData {
    pub weight_on: f64,
    pub weight_off: f64,
    pub target_on: f64,
}

impl WeightedData {
    pub fn bias(alpha: f64) -> Self {
        Self {
            weight_on: alpha,
            weight_off: 1.0 - alpha,
            target_on: 1.0,
        }
    }

    pub fn shifted(rho: f64) -> Self {
        Self {
            weight_on: 1.0,
            weight_off: 1.0,
            target_on: 1.0 / (1.0 - rho),
        }
    }

    pub fn plain() -> Self {
        Self {
            weight_on: 1.0,
            weight_off: 1.0,
            target_on: 1.0,
        }
    }

    pub fn evaluate(&self, model: &LowRankFactors, obs: &ObservedOnes) -> Result<f64> {
        check_dims(model, obs)?;
        let dense = self.weight_off * model.product_frobenius_sq();
        let correction: f64 = predictions_on_observed(model, obs)
            .into_iter()
            .map(|x| self.weight_on * (x - self.target_on).powi(2) - self.weight_off * x * x)
            .sum();
        Ok(dense + correction)
    }
}

/// Biased objective `f_b(X) + λ·reg`, with
/// `f_b(X) = (1-α)‖X - A‖_F² + (2α-1) Σ_{Ω₁} (X_ij - 1)²`.
pub fn objective_bias(
    model: &LowRankFactors,
    obs: &ObservedOnes,
    alpha: f64,
    lambda: f64,
    reg: Regularizer,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_dims(model, obs)?;
    let preds = predictions_on_observed(model, obs);
    let sum_x: f64 = preds.iter().sum();
    let sum_sq_resid: f64 = preds.iter().map(|x| (x - 1.0) * (x - 1.0)).sum();
    // ‖X - A‖² = ‖X‖² - 2 Σ_{Ω₁} x + s̄
    let dense = model.product_frobenius_sq() - 2.0 * sum_x + obs.len() as f64;
    let data = (1.0 - alpha) * dense + (2.0 * alpha - 1.0) * sum_sq_resid;
    Ok(data + regularizer_value(model, lambda, reg)?)
}

/// Shifted objective: targets `1/(1-ρ)` on revealed ones, zero elsewhere,
/// plus `λ·reg`.
pub fn objective_shift(
    model: &LowRankFactors,
    obs: &ObservedOnes,
    rho: f64,
    lambda: f64,
    reg: Regularizer,
) -> Result<f64> {
    check_rho(rho)?;
    let data = WeightedData::shifted(rho).evaluate(model, obs)?;
    Ok(data + regularizer_value(model, lambda, reg)?)
}

/// `∇_W f_b = 2(1-α)(W HᵀH - A H) + 2(2α-1) R_Ω H`, where `R_Ω` holds
/// `X_ij - 1` on the revealed ones and zero elsewhere.
pub fn gradient_w_bias(model: &LowRankFactors, obs: &ObservedOnes, alpha: f64) -> Result<DenseMatrix> {
    check_alpha(alpha)?;
    check_dims(model, obs)?;
    let mut grad = model.w.matmul(&model.h.gram())?;
    grad.scale(2.0 * (1.0 - alpha));
    for &(i, j) in obs.entries() {
        let r = model.predict_unchecked(i, j) - 1.0;
        let coef = -2.0 * (1.0 - alpha) + 2.0 * (2.0 * alpha - 1.0) * r;
        axpy(coef, model.h.row(j), grad.row_mut(i));
    }
    Ok(grad)
}

/// Hessian of the ridge-regularized biased objective in row `i` of `W`:
/// `2(1-α) HᵀH + 2(2α-1) Σ_{j∈Ω_i} h_j h_jᵀ + λ I`.
pub fn row_hessian_bias(
    model: &LowRankFactors,
    obs: &ObservedOnes,
    alpha: f64,
    lambda: f64,
    i: usize,
) -> Result<DenseMatrix> {
    check_alpha(alpha)?;
    check_dims(model, obs)?;
    if i >= obs.rows() {
        return Err(PumcError::DimensionMismatch(format!("row {i} out of range for {} rows", obs.rows())));
    }
    let mut hess = model.h.gram();
    hess.scale(2.0 * (1.0 - alpha));
    for &j in obs.row_cols(i) {
        accumulate_outer(&mut hess, model.h.row(j), 2.0 * (2.0 * alpha - 1.0));
    }
    for a in 0..hess.rows() {
        hess.set(a, a, hess.get(a, a) + lambda);
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use proptest::prelude::*;

    #[test]
    fn gradient_matches_dense_formula() {
        let obs = ObservedOnes::new(4, 3, vec![(0, 0), (1, 2), (3, 1), (3, 2)]).unwrap();
        let w = DenseMatrix::from_fn(4, 2, |i, c| 0.3 * i as f64 - 0.2 * c as f64 + 0.1);
        let h = DenseMatrix::from_fn(3, 2, |j, c| 0.5 - 0.4 * j as f64 + 0.25 * c as f64);
        let model = LowRankFactors::new(w.clone(), h.clone()).unwrap();
        let alpha = 0.7;
        let x = w.matmul_t(&h).unwrap();
        let a = obs.to_dense();
        let mut inner = DenseMatrix::from_fn(4, 3, |i, j| 2.0 * (1.0 - alpha) * (x.get(i, j) - a.get(i, j)));
        for &(i, j) in obs.entries() {
            inner.set(i, j, inner.get(i, j) + 2.0 * (2.0 * alpha - 1.0) * (x.get(i, j) - 1.0));
        }
        let dense = inner.matmul(&h).unwrap();
        let grad = gradient_w_bias(&model, &obs, alpha).unwrap();
        assert!(grad.max_abs_diff(&dense) < 1e-12);
        let hess = row_hessian_bias(&model, &obs, alpha, 0.3, 3).unwrap();
        assert_eq!(hess.rows(), 2);
        assert!(row_hessian_bias(&model, &obs, alpha, 0.3, 4).is_err());
    }

    #[test]
    fn tilde_loss_values() {
        assert!((tilde_loss(0.3, false, 0.7).unwrap() - 0.09).abs() < 1e-15);
        assert!((tilde_loss(0.5, true, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!((tilde_loss(1.0, true, 0.5).unwrap() + 1.0).abs() < 1e-15);
        assert!(tilde_loss(0.5, true, 1.0).is_err());
    }

    #[test]
    fn shifted_form_values() {
        assert!((tilde_loss_shifted_form(0.5, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!((tilde_loss_shifted_form(0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(tilde_loss_shifted_form(0.0, 1.2).is_err());
    }

    #[test]
    fn alpha_loss_values() {
        assert_eq!(alpha_loss(1.0, true, 0.3).unwrap(), 0.0);
        assert!((alpha_loss(0.5, true, 0.95).unwrap() - 0.2375).abs() < 1e-15);
        assert!((alpha_loss(0.5, false, 0.95).unwrap() - 0.0125).abs() < 1e-15);
        assert!(alpha_loss(0.5, false, 1.0).is_err());
        assert!(alpha_loss(0.5, false, 0.0).is_err());
    }

    #[test]
    fn alpha_star_and_eta() {
        assert!((alpha_star(0.9).unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(alpha_star(0.0).unwrap(), 0.5);
        assert_eq!(alpha_star(0.5).unwrap(), 0.75);
        assert!(alpha_star(1.0).is_err());
        assert_eq!(eta_constant(0.5).unwrap(), 4.0);
        assert!((eta_constant(0.1).unwrap() - 100.0).abs() < 1e-9);
        assert!((eta_constant(0.9).unwrap() - 100.0).abs() < 1e-9);
        assert!(eta_constant(1.0).is_err());
        assert!(eta_constant(0.0).is_err());
    }

    #[test]
    fn loss_kind_dispatch() {
        assert_eq!(LossKind::PlainSquared.eval(0.5, true).unwrap(), 0.25);
        assert_eq!(
            LossKind::Shifted { rho: 0.5 }.eval(1.0, true).unwrap(),
            tilde_loss(1.0, true, 0.5).unwrap()
        );
        assert!(LossKind::AlphaWeighted { alpha: 1.5 }.validate().is_err());
    }

    fn exact_model(obs: &ObservedOnes) -> LowRankFactors {
        // X = A through W = A, H = I
        LowRankFactors::new(obs.to_dense(), DenseMatrix::identity(obs.cols())).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_objective() {
        let obs = ObservedOnes::new(3, 4, vec![(0, 1), (2, 3), (1, 1)]).unwrap();
        let model = exact_model(&obs);
        for alpha in [0.3, 0.95, 1.0] {
            let v = objective_bias(&model, &obs, alpha, 0.0, Regularizer::None).unwrap();
            assert!(v.abs() < 1e-12, "alpha {alpha}: {v}");
        }
    }

    #[test]
    fn zero_model_counts_positive_terms() {
        let obs = ObservedOnes::new(5, 5, vec![(0, 0), (1, 3), (4, 2), (2, 2)]).unwrap();
        let zero = LowRankFactors::zeros(5, 5, 2);
        let v = objective_bias(&zero, &obs, 0.95, 0.0, Regularizer::None).unwrap();
        assert!((v - 0.95 * 4.0).abs() < 1e-12);
        let s = objective_shift(&zero, &obs, 0.5, 0.0, Regularizer::None).unwrap();
        assert!((s - 16.0).abs() < 1e-12);
    }

    #[test]
    fn shift_with_zero_rho_is_plain_squared() {
        let obs = ObservedOnes::new(4, 3, vec![(0, 0), (3, 2), (1, 1)]).unwrap();
        let w = DenseMatrix::from_fn(4, 2, |i, j| 0.1 * (i + 2 * j) as f64 - 0.2);
        let h = DenseMatrix::from_fn(3, 2, |i, j| 0.3 * (i as f64) - 0.1 * j as f64);
        let model = LowRankFactors::new(w, h).unwrap();
        let x = model.materialize(100).unwrap();
        let a = obs.to_dense();
        let expected = x.distance(&a).powi(2);
        let got = objective_shift(&model, &obs, 0.0, 0.0, Regularizer::None).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let obs = ObservedOnes::new(4, 3, vec![(0, 0)]).unwrap();
        let zero = LowRankFactors::zeros(3, 3, 1);
        assert!(objective_bias(&zero, &obs, 0.9, 0.0, Regularizer::None).is_err());
    }

    proptest! {
        #[test]
        fn shifted_form_is_identical(x in -5.0f64..5.0, rho in 0.0f64..0.999) {
            let a = tilde_loss(x, true, rho).unwrap();
            let b = tilde_loss_shifted_form(x, rho).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
