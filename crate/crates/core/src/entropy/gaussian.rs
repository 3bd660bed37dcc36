//! Zero-mean Gaussian conditional with per-element scales.

use statrs::function::erf::erfc;

use super::cdf::SymbolModel;
use super::rate::floored;
use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

/// Default lower bound on predicted scales.
pub const DEFAULT_SCALE_BOUND: f64 = 0.11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianConditional {
    scale_bound: f64,
}

impl Default for GaussianConditional {
    fn default() -> Self {
        GaussianConditional {
            scale_bound: DEFAULT_SCALE_BOUND,
        }
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal cumulative.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

impl GaussianConditional {
    pub fn new(scale_bound: f64) -> Result<Self> {
        if !(scale_bound > 0.0 && scale_bound.is_finite()) {
            return Err(Error::Config(format!(
                "scale bound {scale_bound} must be positive"
            )));
        }
        Ok(GaussianConditional { scale_bound })
    }

    pub fn scale_bound(&self) -> f64 {
        self.scale_bound
    }

    pub fn bounded(&self, sigma: f64) -> f64 {
        if sigma > self.scale_bound {
            sigma
        } else {
            self.scale_bound
        }
    }

    /// Unfloored mass of the unit bin around `v`, using the lower tail for accuracy.
    pub fn mass(&self, v: f64, sigma: f64) -> f64 {
        let s = self.bounded(sigma);
        let a = v.abs();
        std_normal_cdf((0.5 - a) / s) - std_normal_cdf((-0.5 - a) / s)
    }

    /// `(mass, d mass / d v, d mass / d sigma)`; the sigma derivative is zero
    /// below the bound.
    fn mass_with_gradients(&self, v: f64, sigma: f64) -> (f64, f64, f64) {
        let s = self.bounded(sigma);
        let a = v.abs();
        let hi = (0.5 - a) / s;
        let lo = (-0.5 - a) / s;
        let p = std_normal_cdf(hi) - std_normal_cdf(lo);
        let (phi_hi, phi_lo) = (std_normal_pdf(hi), std_normal_pdf(lo));
        let dp_da = -(phi_hi - phi_lo) / s;
        let dp_dv = if v > 0.0 {
            dp_da
        } else if v < 0.0 {
            -dp_da
        } else {
            0.0
        };
        let dp_ds = if sigma > self.scale_bound {
            -(hi * phi_hi - lo * phi_lo) / s
        } else {
            0.0
        };
        (p, dp_dv, dp_ds)
    }

    pub fn model(&self, sigma: f64) -> GaussianModel {
        GaussianModel {
            conditional: *self,
            sigma,
        }
    }

    /// Total bits with gradients with respect to `y` and `sigma`.
    pub fn rate_and_gradients(
        &self,
        y: &Tensor4D,
        sigma: &Tensor4D,
    ) -> Result<(f64, Tensor4D, Tensor4D)> {
        check_shapes(y, sigma)?;
        let ln2 = std::f64::consts::LN_2;
        let mut bits = 0.0;
        let mut dy = Tensor4D::zeros(y.shape());
        let mut ds = Tensor4D::zeros(y.shape());
        for (i, (&v, &s)) in y.data().iter().zip(sigma.data()).enumerate() {
            let (p, dp_dv, dp_ds) = self.mass_with_gradients(v, s);
            let (p, keep) = floored(p);
            bits -= p.log2();
            let scale = -keep / (p * ln2);
            dy.data_mut()[i] = scale * dp_dv;
            ds.data_mut()[i] = scale * dp_ds;
        }
        Ok((bits, dy, ds))
    }
}

fn check_shapes(y: &Tensor4D, sigma: &Tensor4D) -> Result<()> {
    if y.shape() != sigma.shape() {
        return Err(Error::Shape(format!(
            "latents {:?} and scales {:?} differ",
            y.shape(),
            sigma.shape()
        )));
    }
    Ok(())
}

/// Floored per-element masses of `y` under scales `sigma`.
pub fn gaussian_likelihood(
    y: &Tensor4D,
    sigma: &Tensor4D,
    gc: &GaussianConditional,
) -> Result<Tensor4D> {
    check_shapes(y, sigma)?;
    let data = y
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&v, &s)| floored(gc.mass(v, s)).0)
        .collect();
    Tensor4D::from_vec(y.shape(), data)
}

/// Gaussian with a fixed scale, as a symbol model.
pub struct GaussianModel {
    conditional: GaussianConditional,
    sigma: f64,
}

impl SymbolModel for GaussianModel {
    fn mass(&self, symbol: i32) -> f64 {
        self.conditional.mass(f64::from(symbol), self.sigma)
    }

    fn below(&self, symbol: i32) -> f64 {
        std_normal_cdf((f64::from(symbol) + 0.5) / self.conditional.bounded(self.sigma))
    }

    fn above(&self, symbol: i32) -> f64 {
        std_normal_cdf((0.5 - f64::from(symbol)) / self.conditional.bounded(self.sigma))
    }
}
