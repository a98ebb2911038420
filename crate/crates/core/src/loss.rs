//! Segmentation losses on `[H, W]` logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    /// Dice smoothing.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_bce: 1.0,
            lambda_dice: 1.0,
            epsilon: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda_bce", self.lambda_bce),
            ("lambda_dice", self.lambda_dice),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field,
                    reason: format!("{v} must be finite and non-negative"),
                });
            }
        }
        if self.lambda_bce == 0.0 && self.lambda_dice == 0.0 {
            return Err(Error::Config {
                field: "lambda_bce",
                reason: "lambda_bce and lambda_dice cannot both be zero".into(),
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config {
                field: "epsilon",
                reason: format!("{} must be positive", self.epsilon),
            });
        }
        Ok(())
    }
}

fn check(t: &Tape, z: Var, target: &Tensor) -> Result<()> {
    if t.shape(z) != target.shape() {
        return Err(Error::shape(
            "loss",
            format!("logits {:?} vs target {:?}", t.shape(z), target.shape()),
        ));
    }
    if target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("loss target must be binary"));
    }
    Ok(())
}

/// Mean binary cross-entropy, as `mean(softplus(z) - t z)`.
pub fn bce_loss(t: &mut Tape, z: Var, target: &Tensor) -> Result<Var> {
    check(t, z, target)?;
    let n = target.numel() as f64;
    let tv = t.constant(target.clone());
    let sp = t.softplus(z)?;
    let tz = t.mul(tv, z)?;
    let diff = t.sub(sp, tz)?;
    let s = t.sum(diff)?;
    t.scale(s, 1.0 / n)
}

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` with `p = sigmoid(z)`.
pub fn dice_loss(t: &mut Tape, z: Var, target: &Tensor, epsilon: f64) -> Result<Var> {
    check(t, z, target)?;
    let tsum: f64 = target.data().iter().sum();
    let tv = t.constant(target.clone());
    let p = t.sigmoid(z)?;
    let pt = t.mul(p, tv)?;
    let inter = t.sum(pt)?;
    let num = t.scale(inter, 2.0)?;
    let num = t.add_scalar(num, epsilon)?;
    let psum = t.sum(p)?;
    let den = t.add_scalar(psum, tsum + epsilon)?;
    let inv = t.recip(den)?;
    let ratio = t.mul(num, inv)?;
    let neg = t.scale(ratio, -1.0)?;
    t.add_scalar(neg, 1.0)
}

pub fn combined_loss(t: &mut Tape, z: Var, target: &Tensor, w: &LossWeights) -> Result<Var> {
    let bce = bce_loss(t, z, target)?;
    let dice = dice_loss(t, z, target, w.epsilon)?;
    let a = t.scale(bce, w.lambda_bce)?;
    let b = t.scale(dice, w.lambda_dice)?;
    t.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_of_zero_logits_is_ln2() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[2, 2]));
        let target = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = bce_loss(&mut t, z, &target).unwrap();
        assert!((t.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_soft_targets() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[1, 2]));
        let target = Tensor::new(&[1, 2], vec![0.5, 1.0]).unwrap();
        assert!(bce_loss(&mut t, z, &target).is_err());
    }
}
