//! Focal-loss distortion and the rate-distortion objective.

use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before the logarithm.
pub const PREDICTION_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {gamma} must be non-negative")));
        }
        Ok(FocalParams { alpha, gamma })
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.75,
            gamma: 2.0,
        }
    }
}

fn check(x: &Tensor4D, x_tilde: &Tensor4D) -> Result<()> {
    if x.shape() != x_tilde.shape() {
        return Err(Error::Shape(format!(
            "occupancy {:?} and prediction {:?} differ",
            x.shape(),
            x_tilde.shape()
        )));
    }
    Ok(())
}

/// `-sum alpha_t (1 - p_t)^gamma ln p_t` where `p_t` is the predicted
/// probability of the true label and `alpha_t` is `alpha` for occupied voxels,
/// `1 - alpha` otherwise.
pub fn focal_loss(x: &Tensor4D, x_tilde: &Tensor4D, p: FocalParams) -> Result<f64> {
    Ok(focal_loss_and_gradient(x, x_tilde, p)?.0)
}

/// Focal loss and its gradient with respect to the prediction.
pub fn focal_loss_and_gradient(
    x: &Tensor4D,
    x_tilde: &Tensor4D,
    p: FocalParams,
) -> Result<(f64, Tensor4D)> {
    check(x, x_tilde)?;
    let mut loss = 0.0;
    let mut grad = Tensor4D::zeros(x.shape());
    for (i, (&label, &pred)) in x.data().iter().zip(x_tilde.data()).enumerate() {
        let clamped = pred.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
        let inside = pred == clamped;
        let occupied = label >= 0.5;
        let (pt, alpha_t, sign) = if occupied {
            (clamped, p.alpha, 1.0)
        } else {
            (1.0 - clamped, 1.0 - p.alpha, -1.0)
        };
        let q = 1.0 - pt;
        let ln_pt = pt.ln();
        let modulator = if p.gamma == 0.0 { 1.0 } else { q.powf(p.gamma) };
        loss -= alpha_t * modulator * ln_pt;
        if inside {
            // d/dpt of -(1-pt)^g ln pt = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt
            let d_modulator = if p.gamma == 0.0 {
                0.0
            } else {
                p.gamma * q.powf(p.gamma - 1.0)
            };
            let dpt = alpha_t * (d_modulator * ln_pt - modulator / pt);
            grad.data_mut()[i] = sign * dpt;
        }
    }
    Ok((loss, grad))
}

/// Joint objective `R + lambda * D`.
pub fn rd_loss(rate_bits: f64, distortion: f64, lambda: f64) -> f64 {
    rate_bits + lambda * distortion
}
