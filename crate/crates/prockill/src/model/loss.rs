//! Training objectives: plain mean squared error and the kill-aware loss.
//!
//! The kill-aware loss adds two terms to the squared error: a penalty on
//! positive predictions scaled by how much of the process's lifetime has
//! already elapsed, and a label-dependent term that shrinks as more of the
//! lifetime remains. It rewards early true positives and punishes false
//! positives, which plain MSE cannot express.
//!
//! Three readings of the penalty terms are selectable so their effects can
//! be compared: `Default` uses `(p - y)^2` for the first term, `Literal`
//! uses `(p - t)^2`, and `Prose` swaps the last two terms for a flat
//! false-positive penalty plus an earliness-scaled true-positive term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which base loss a model trains with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Modified(ModifiedVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModifiedVariant {
    Default,
    Literal,
    Prose,
}

/// How the non-differentiable `round(p)` factor is handled during training.
///
/// `StraightThrough` keeps the hard round in the forward value and treats it
/// as identity in the backward pass. `SteepSigmoid` replaces the round with
/// `sigmoid(k·(p - 0.5))` in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundSurrogate {
    #[default]
    StraightThrough,
    SteepSigmoid { steepness: f64 },
}

/// Flat false-positive penalty used by the prose variant.
pub const PROSE_FP_PENALTY: f64 = 1.0;

fn check_lengths(p: &[f64], y: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if p.len() != y.len() {
        return Err(Error::input(format!(
            "prediction/label length mismatch: {} vs {}",
            p.len(),
            y.len()
        )));
    }
    Ok(())
}

fn check_times(t: &[f64]) -> Result<()> {
    for (i, &ti) in t.iter().enumerate() {
        if !(0.0..=1.0).contains(&ti) {
            return Err(Error::input(format!(
                "time_left[{i}] = {ti} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Mean of `(p_i - y_i)^2`.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

/// Kill-aware loss with a hard round, in the requested variant.
///
/// Per sample:
/// - `Default`: `(p - y)^2 + round(p)·(1 - t) + y/(t + 1)`
/// - `Literal`: `(p - t)^2 + round(p)·(1 - t) + y/(t + 1)`
/// - `Prose`:   `(p - y)^2 + (1 - y)·round(p)·c + y·round(p)/(t + 1)`
pub fn modified_loss(
    predictions: &[f64],
    labels: &[f64],
    time_left: &[f64],
    variant: ModifiedVariant,
) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if predictions.len() != time_left.len() {
        return Err(Error::input(format!(
            "prediction/time_left length mismatch: {} vs {}",
            predictions.len(),
            time_left.len()
        )));
    }
    check_times(time_left)?;

    let n = predictions.len() as f64;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .zip(time_left)
        .map(|((&p, &y), &t)| modified_term(p, y, t, variant, p.round()))
        .sum();
    Ok(total / n)
}

fn modified_term(p: f64, y: f64, t: f64, variant: ModifiedVariant, rounded: f64) -> f64 {
    match variant {
        ModifiedVariant::Default => (p - y) * (p - y) + rounded * (1.0 - t) + y / (t + 1.0),
        ModifiedVariant::Literal => (p - t) * (p - t) + rounded * (1.0 - t) + y / (t + 1.0),
        ModifiedVariant::Prose => {
            (p - y) * (p - y) + (1.0 - y) * rounded * PROSE_FP_PENALTY + y * rounded / (t + 1.0)
        }
    }
}

/// Loss selection carried by a model's hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub surrogate: RoundSurrogate,
}

impl LossSpec {
    pub fn mse() -> Self {
        LossSpec {
            kind: LossKind::Mse,
            surrogate: RoundSurrogate::StraightThrough,
        }
    }

    pub fn modified(variant: ModifiedVariant) -> Self {
        LossSpec {
            kind: LossKind::Modified(variant),
            surrogate: RoundSurrogate::StraightThrough,
        }
    }

    /// Loss value for a batch.
    pub fn value(&self, p: &[f64], y: &[f64], t: &[f64]) -> Result<f64> {
        match self.kind {
            LossKind::Mse => mse_loss(p, y),
            LossKind::Modified(variant) => match self.surrogate {
                RoundSurrogate::StraightThrough => modified_loss(p, y, t, variant),
                RoundSurrogate::SteepSigmoid { steepness } => {
                    check_lengths(p, y)?;
                    check_times(t)?;
                    let n = p.len() as f64;
                    let total: f64 = p
                        .iter()
                        .zip(y)
                        .zip(t)
                        .map(|((&p, &y), &t)| {
                            modified_term(p, y, t, variant, soft_round(p, steepness))
                        })
                        .sum();
                    Ok(total / n)
                }
            },
        }
    }

    /// Loss value and per-prediction gradient `dL/dp_i` for a batch.
    ///
    /// With `StraightThrough` the gradient of the round factor is taken as
    /// identity, so the gradient corresponds to the relaxed loss in which
    /// `round(p)` is replaced by `p`.
    pub fn value_and_grad(&self, p: &[f64], y: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>)> {
        let value = self.value(p, y, t)?;
        let n = p.len() as f64;
        let mut grad = vec![0.0; p.len()];
        for i in 0..p.len() {
            let (pi, yi, ti) = (p[i], y[i], t[i]);
            let g = match self.kind {
                LossKind::Mse => 2.0 * (pi - yi),
                LossKind::Modified(variant) => {
                    let (_, round_grad) = self.round_and_grad(pi);
                    match variant {
                        ModifiedVariant::Default => 2.0 * (pi - yi) + round_grad * (1.0 - ti),
                        ModifiedVariant::Literal => 2.0 * (pi - ti) + round_grad * (1.0 - ti),
                        ModifiedVariant::Prose => {
                            2.0 * (pi - yi)
                                + (1.0 - yi) * round_grad * PROSE_FP_PENALTY
                                + yi * round_grad / (ti + 1.0)
                        }
                    }
                }
            };
            grad[i] = g / n;
        }
        Ok((value, grad))
    }

    fn round_and_grad(&self, p: f64) -> (f64, f64) {
        match self.surrogate {
            RoundSurrogate::StraightThrough => (p.round(), 1.0),
            RoundSurrogate::SteepSigmoid { steepness } => {
                let s = soft_round(p, steepness);
                (s, steepness * s * (1.0 - s))
            }
        }
    }
}

fn soft_round(p: f64, steepness: f64) -> f64 {
    crate::model::sigmoid(steepness * (p - 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.5], &[1.0]).unwrap(), 0.25);
    }

    #[test]
    fn mse_empty_batch_errors() {
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn modified_default_hand_values() {
        let v = |p, y, t| modified_loss(&[p], &[y], &[t], ModifiedVariant::Default).unwrap();
        assert_eq!(v(0.0, 0.0, 0.5), 0.0);
        assert_eq!(v(1.0, 1.0, 1.0), 0.5);
        // 0.36 + round(0.6)*0.75 + 0
        assert!((v(0.6, 0.0, 0.25) - 1.11).abs() < 1e-12);
    }

    #[test]
    fn modified_default_decreases_in_time_left_for_true_positive() {
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let v = modified_loss(&[1.0], &[1.0], &[t], ModifiedVariant::Default).unwrap();
            assert!(v < prev, "loss not decreasing at t={t}");
            prev = v;
        }
    }

    #[test]
    fn time_left_out_of_range_errors() {
        let err = modified_loss(&[0.5], &[1.0], &[1.5], ModifiedVariant::Default).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn variants_disagree_somewhere() {
        let (p, y, t) = (0.4, 1.0, 0.25);
        let d = modified_loss(&[p], &[y], &[t], ModifiedVariant::Default).unwrap();
        let l = modified_loss(&[p], &[y], &[t], ModifiedVariant::Literal).unwrap();
        let pr = modified_loss(&[p], &[y], &[t], ModifiedVariant::Prose).unwrap();
        assert_ne!(d, l);
        assert_ne!(d, pr);
    }

    #[test]
    fn modified_default_reduces_to_mse_on_all_zero() {
        let p = [0.0, 0.0, 0.0];
        let y = [0.0, 0.0, 0.0];
        let t = [0.2, 0.5, 0.9];
        let m = modified_loss(&p, &y, &t, ModifiedVariant::Default).unwrap();
        assert_eq!(m, mse_loss(&p, &y).unwrap());
    }

    #[test]
    fn straight_through_grad_matches_relaxed_loss() {
        // gradient of the relaxed loss (round -> identity), by hand:
        // d/dp [(p-y)^2 + p(1-t)] = 2(p-y) + (1-t)
        let spec = LossSpec::modified(ModifiedVariant::Default);
        let (_, g) = spec.value_and_grad(&[0.7], &[0.0], &[0.25]).unwrap();
        assert!((g[0] - (2.0 * 0.7 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn steep_sigmoid_surrogate_is_smooth_and_self_consistent() {
        let soft = LossSpec {
            kind: LossKind::Modified(ModifiedVariant::Default),
            surrogate: RoundSurrogate::SteepSigmoid { steepness: 24.0 },
        };
        let hard = LossSpec::modified(ModifiedVariant::Default);
        // the surrogate replaces the hard step, so values differ near 0.5
        let v_soft = soft.value(&[0.45], &[0.0], &[0.5]).unwrap();
        let v_hard = hard.value(&[0.45], &[0.0], &[0.5]).unwrap();
        assert_ne!(v_soft, v_hard);

        // being a true differentiable replacement, its gradient must match
        // central differences of its own value function
        let (y, t) = (0.0, 0.25);
        for p in [0.2, 0.45, 0.55, 0.9] {
            let (_, g) = soft.value_and_grad(&[p], &[y], &[t]).unwrap();
            let h = 1e-6;
            let up = soft.value(&[p + h], &[y], &[t]).unwrap();
            let down = soft.value(&[p - h], &[y], &[t]).unwrap();
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (g[0] - numeric).abs() / numeric.abs().max(1.0) < 1e-6,
                "p={p}: {} vs {}",
                g[0],
                numeric
            );
        }
    }
}
