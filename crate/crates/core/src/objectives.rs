//! Training objectives over predicted probabilities.
//!
//! Every loss here is a sum over samples; the trainer divides by batch size.
//! Probabilities are clamped to `[eps, 1 - eps]` before any logarithm, with
//! `eps = max(1e-12, machine epsilon)`.
//!
//! Each loss exists twice: as a plain function over slices, and as a tape
//! builder over a `B x 1` probability column so it can be differentiated.

use std::f64::consts::LN_2;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TensorResult, Var};
use crate::metrics::entropy;
use crate::scalar::Scalar;

/// Clamp bound applied before every logarithm.
pub fn prob_epsilon<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon())
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = prob_epsilon::<T>();
    p.max(eps).min(T::one() - eps)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossConfigError {
    #[error("{name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("{name} = {value} must be non-negative and finite")]
    NonNegative { name: &'static str, value: f64 },
}

/// Loss kind with exactly the hyperparameters it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossConfig {
    Bce {},
    Ls { alpha: f64 },
    Erl { beta: f64 },
    Fl { gamma: f64 },
    Wfl { alpha: f64, gamma: f64 },
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Bce {}
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossConfigError> {
        let prob = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(LossConfigError::Probability { name, value })
            }
        };
        let nonneg = |name, value: f64| {
            if value >= 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(LossConfigError::NonNegative { name, value })
            }
        };
        match *self {
            LossConfig::Bce {} => Ok(()),
            LossConfig::Ls { alpha } => prob("alpha_ls", alpha),
            LossConfig::Erl { beta } => nonneg("beta", beta),
            LossConfig::Fl { gamma } => nonneg("gamma_fl", gamma),
            LossConfig::Wfl { alpha, gamma } => {
                prob("alpha_fl", alpha)?;
                nonneg("gamma_fl", gamma)
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            LossConfig::Bce {} => "BCE".into(),
            LossConfig::Ls { alpha } => format!("LS(alpha={alpha})"),
            LossConfig::Erl { beta } => format!("ERL(beta={beta})"),
            LossConfig::Fl { gamma } => format!("FL(gamma={gamma})"),
            LossConfig::Wfl { alpha, gamma } => format!("WFL(alpha={alpha},gamma={gamma})"),
        }
    }

    /// Evaluates the loss on plain slices.
    pub fn evaluate<T: Scalar>(&self, y: &[T], p: &[T]) -> T {
        match *self {
            LossConfig::Bce {} => bce(y, p),
            LossConfig::Ls { alpha } => ls_loss(y, p, T::lit(alpha)),
            LossConfig::Erl { beta } => erl_loss(y, p, T::lit(beta)),
            LossConfig::Fl { gamma } => focal_loss(y, p, T::lit(gamma)),
            LossConfig::Wfl { alpha, gamma } => weighted_focal_loss(y, p, T::lit(alpha), T::lit(gamma)),
        }
    }

    /// Records the loss on the tape of `p`; `y` is a `B x 1` label column.
    pub fn record<'t, T: Scalar>(&self, p: Var<'t, T>, y: &Array2<T>) -> TensorResult<Var<'t, T>> {
        match *self {
            LossConfig::Bce {} => bce_var(p, y),
            LossConfig::Ls { alpha } => ls_var(p, y, T::lit(alpha)),
            LossConfig::Erl { beta } => erl_var(p, y, T::lit(beta)),
            LossConfig::Fl { gamma } => weighted_focal_var(p, y, T::one(), T::one(), T::lit(gamma)),
            LossConfig::Wfl { alpha, gamma } => {
                let a = T::lit(alpha);
                weighted_focal_var(p, y, a, T::one() - a, T::lit(gamma))
            }
        }
    }
}

fn check_lengths<T>(y: &[T], p: &[T]) {
    assert_eq!(y.len(), p.len(), "labels and probabilities differ in length");
}

/// `sum -y ln p - (1 - y) ln(1 - p)`.
pub fn bce<T: Scalar>(y: &[T], p: &[T]) -> T {
    check_lengths(y, p);
    y.iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            -y * p.ln() - (T::one() - y) * (T::one() - p).ln()
        })
        .sum()
}

/// `y (1 - alpha) + alpha / 2`.
pub fn smooth_labels<T: Scalar>(y: &[T], alpha: T) -> Vec<T> {
    let half = T::lit(0.5);
    y.iter().map(|&y| y * (T::one() - alpha) + alpha * half).collect()
}

pub fn ls_loss<T: Scalar>(y: &[T], p: &[T], alpha: T) -> T {
    bce(&smooth_labels(y, alpha), p)
}

/// `bce - beta * sum H(p)`.
pub fn erl_loss<T: Scalar>(y: &[T], p: &[T], beta: T) -> T {
    bce(y, p) - beta * p.iter().map(|&p| entropy(p)).sum::<T>()
}

pub fn focal_loss<T: Scalar>(y: &[T], p: &[T], gamma: T) -> T {
    focal_weighted(y, p, T::one(), T::one(), gamma)
}

pub fn weighted_focal_loss<T: Scalar>(y: &[T], p: &[T], alpha: T, gamma: T) -> T {
    focal_weighted(y, p, alpha, T::one() - alpha, gamma)
}

fn focal_weighted<T: Scalar>(y: &[T], p: &[T], pos: T, neg: T, gamma: T) -> T {
    check_lengths(y, p);
    y.iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            let q = T::one() - p;
            -pos * y * q.powf(gamma) * p.ln() - neg * (T::one() - y) * p.powf(gamma) * q.ln()
        })
        .sum()
}

/// `coefficient * sum ||W||_F^2` over weight matrices.
pub fn l2_penalty<'a, T: Scalar + 'a>(weights: impl IntoIterator<Item = &'a Array2<T>>, coefficient: T) -> T {
    coefficient
        * weights
            .into_iter()
            .map(|w| w.iter().map(|&v| v * v).sum::<T>())
            .sum::<T>()
}

/// `KL(U || P)` for a Bernoulli `P = (p, 1 - p)` and uniform `U`.
pub fn kl_uniform_to_pred<T: Scalar>(p: T) -> T {
    let p = clamp_prob(p);
    let half = T::lit(0.5);
    -half * (p.ln() + (T::one() - p).ln()) - T::lit(LN_2)
}

/// `KL(P || U)`, which equals `ln 2 - H(p)`.
pub fn kl_pred_to_uniform<T: Scalar>(p: T) -> T {
    let q = T::one() - p;
    let plogp = |x: T| if x > T::zero() { x * x.ln() } else { T::zero() };
    plogp(p) + plogp(q) + T::lit(LN_2)
}

/// `L_LS - [(1 - alpha) L_BCE + alpha sum KL(U || P)]`.
///
/// The result does not depend on `p`: it equals `alpha * n * ln 2`.
pub fn diagnostic_ls_kl_identity<T: Scalar>(y: &[T], p: &[T], alpha: T) -> T {
    let kl: T = p.iter().map(|&p| kl_uniform_to_pred(p)).sum();
    ls_loss(y, p, alpha) - ((T::one() - alpha) * bce(y, p) + alpha * kl)
}

/// `L_ERL - [L_BCE + beta sum KL(P || U)]`, which equals `-beta * n * ln 2`.
pub fn diagnostic_erl_kl_identity<T: Scalar>(y: &[T], p: &[T], beta: T) -> T {
    let kl: T = p.iter().map(|&p| kl_pred_to_uniform(p)).sum();
    erl_loss(y, p, beta) - (bce(y, p) + beta * kl)
}

/// `-y p ln p - (1 - y)(1 - p) ln(1 - p)`.
pub fn asymmetric_entropy<T: Scalar>(y: T, p: T) -> T {
    let p = clamp_prob(p);
    let q = T::one() - p;
    -y * p * p.ln() - (T::one() - y) * q * q.ln()
}

/// `|L_FL - (L_BCE - gamma sum H_asym)|`: error of the first-order reading of
/// focal loss as BCE with an asymmetric entropy bonus.
pub fn diagnostic_fl_asymmetric_entropy<T: Scalar>(y: &[T], p: &[T], gamma: T) -> T {
    let h: T = y.iter().zip(p).map(|(&y, &p)| asymmetric_entropy(y, p)).sum();
    (focal_loss(y, p, gamma) - (bce(y, p) - gamma * h)).abs()
}

fn clamped<'t, T: Scalar>(p: Var<'t, T>) -> TensorResult<Var<'t, T>> {
    let eps = prob_epsilon::<T>();
    p.clamp(eps, T::one() - eps)
}

fn labels<'t, T: Scalar>(tape: &'t Tape<T>, y: &Array2<T>) -> TensorResult<(Var<'t, T>, Var<'t, T>)> {
    let pos = tape.constant(y.clone())?;
    let neg = tape.constant(y.mapv(|v| T::one() - v))?;
    Ok((pos, neg))
}

pub fn bce_var<'t, T: Scalar>(p: Var<'t, T>, y: &Array2<T>) -> TensorResult<Var<'t, T>> {
    let pc = clamped(p)?;
    let (pos, neg) = labels(p.tape(), y)?;
    let a = pos.mul(pc.log()?)?;
    let b = neg.mul(pc.one_minus()?.log()?)?;
    a.add(b)?.sum()?.neg()
}

pub fn ls_var<'t, T: Scalar>(p: Var<'t, T>, y: &Array2<T>, alpha: T) -> TensorResult<Var<'t, T>> {
    let half = T::lit(0.5);
    bce_var(p, &y.mapv(|v| v * (T::one() - alpha) + alpha * half))
}

pub fn erl_var<'t, T: Scalar>(p: Var<'t, T>, y: &Array2<T>, beta: T) -> TensorResult<Var<'t, T>> {
    let pc = clamped(p)?;
    let qc = pc.one_minus()?;
    let h = pc.mul(pc.log()?)?.add(qc.mul(qc.log()?)?)?.sum()?.neg()?;
    bce_var(p, y)?.sub(h.scalar_mul(beta)?)
}

/// `sum -a y (1 - p)^g ln p - b (1 - y) p^g ln(1 - p)`.
pub fn weighted_focal_var<'t, T: Scalar>(
    p: Var<'t, T>,
    y: &Array2<T>,
    pos_weight: T,
    neg_weight: T,
    gamma: T,
) -> TensorResult<Var<'t, T>> {
    let pc = clamped(p)?;
    let qc = pc.one_minus()?;
    let (pos, neg) = labels(p.tape(), y)?;
    let a = pos.mul(qc.powf(gamma)?)?.mul(pc.log()?)?.scalar_mul(pos_weight)?;
    let b = neg.mul(pc.powf(gamma)?)?.mul(qc.log()?)?.scalar_mul(neg_weight)?;
    a.add(b)?.sum()?.neg()
}
