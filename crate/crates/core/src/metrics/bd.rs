//! Bjøntegaard-delta PSNR between rate-distortion curves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    /// Bits per input point.
    pub bpp: f64,
    pub psnr_db: f64,
}

/// At least four points with strictly increasing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

pub const MIN_CURVE_POINTS: usize = 4;

impl RdCurve {
    /// Sorts by rate and validates.
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < MIN_CURVE_POINTS {
            return Err(Error::Domain(format!(
                "an RD curve needs {MIN_CURVE_POINTS} points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.bpp > 0.0 && p.bpp.is_finite() && p.psnr_db.is_finite()))
        {
            return Err(Error::Domain(format!("invalid RD point {p:?}")));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::Domain("RD curve has repeated rates".into()));
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    /// Range of `log10(bpp)`.
    pub fn log_rate_range(&self) -> (f64, f64) {
        (
            self.points[0].bpp.log10(),
            self.points[self.points.len() - 1].bpp.log10(),
        )
    }

    /// The same curve without its lowest-rate point, when enough remain.
    pub fn without_lowest_rate(&self) -> Result<RdCurve> {
        RdCurve::new(self.points[1..].to_vec())
    }
}

/// Least-squares cubic `c0 + c1 x + c2 x^2 + c3 x^3` through `(x, y)`.
pub fn fit_cubic(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::Domain(format!(
            "cubic fit needs 4 matching samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let a = DMatrix::from_fn(x.len(), 4, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let c = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Domain(format!("cubic fit failed: {e}")))?;
    Ok([c[0], c[1], c[2], c[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let f =
        |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    f(hi) - f(lo)
}

fn curve_fit(curve: &RdCurve) -> Result<[f64; 4]> {
    let x: Vec<f64> = curve.points.iter().map(|p| p.bpp.log10()).collect();
    let y: Vec<f64> = curve.points.iter().map(|p| p.psnr_db).collect();
    fit_cubic(&x, &y)
}

/// Mean PSNR gap of `test` over `reference` across their common
/// `log10(bpp)` interval; positive means `test` is better.
pub fn bd_psnr(test: &RdCurve, reference: &RdCurve) -> Result<f64> {
    let (t_lo, t_hi) = test.log_rate_range();
    let (r_lo, r_hi) = reference.log_rate_range();
    let lo = t_lo.max(r_lo);
    let hi = t_hi.min(r_hi);
    if !(hi > lo) {
        return Err(Error::Domain("RD curves do not overlap in rate".into()));
    }
    let ct = curve_fit(test)?;
    let cr = curve_fit(reference)?;
    Ok((integral(&ct, lo, hi) - integral(&cr, lo, hi)) / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(rates: &[f64], psnr: &[f64]) -> RdCurve {
        RdCurve::new(
            rates
                .iter()
                .zip(psnr)
                .map(|(&bpp, &psnr_db)| RdPoint { bpp, psnr_db })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_and_shifted_curves() {
        let a = curve(&[0.05, 0.1, 0.3, 0.8, 1.5], &[55.0, 58.5, 63.0, 66.2, 68.0]);
        assert_eq!(bd_psnr(&a, &a).unwrap(), 0.0);
        let shifted = curve(&[0.05, 0.1, 0.3, 0.8, 1.5], &[56.0, 59.5, 64.0, 67.2, 69.0]);
        assert!((bd_psnr(&shifted, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((bd_psnr(&a, &shifted).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn antisymmetric() {
        let a = curve(&[0.05, 0.1, 0.3, 0.8], &[55.0, 58.5, 63.0, 66.2]);
        let b = curve(&[0.07, 0.2, 0.4, 1.1], &[54.0, 59.0, 62.0, 67.5]);
        assert_eq!(bd_psnr(&a, &b).unwrap(), -bd_psnr(&b, &a).unwrap());
    }

    #[test]
    fn matches_trapezoid_quadrature() {
        let a = curve(&[0.05, 0.1, 0.3, 0.8], &[55.0, 58.5, 63.0, 66.2]);
        let b = curve(&[0.07, 0.2, 0.4, 1.1], &[54.0, 59.0, 62.0, 67.5]);
        let fa = curve_fit(&a).unwrap();
        let fb = curve_fit(&b).unwrap();
        let lo = 0.07f64.log10();
        let hi = 0.8f64.log10();
        let eval = |c: &[f64; 4], x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let n = 10_000;
        let h = (hi - lo) / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * (eval(&fa, x) - eval(&fb, x));
        }
        let oracle = sum * h / (hi - lo);
        assert!((bd_psnr(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn cubic_fit_is_exact_on_cubics() {
        let x = [0.0, 0.5, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.0 - 2.0 * v + 0.5 * v * v + 0.25 * v * v * v)
            .collect();
        let c = fit_cubic(&x, &y).unwrap();
        for (got, want) in c.iter().zip([1.0, -2.0, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        let a = curve(&[0.01, 0.02, 0.03, 0.04], &[1.0, 2.0, 3.0, 4.0]);
        let b = curve(&[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 3.0, 4.0]);
        assert!(bd_psnr(&a, &b).is_err());
        let three = vec![
            RdPoint {
                bpp: 0.1,
                psnr_db: 1.0
            };
            3
        ];
        assert!(RdCurve::new(three).is_err());
        let repeated = vec![
            RdPoint {
                bpp: 0.1,
                psnr_db: 1.0
            };
            4
        ];
        assert!(RdCurve::new(repeated).is_err());
        let unsorted = curve(&[0.4, 0.1, 0.3, 0.2], &[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(unsorted.points()[0].bpp, 0.1);
    }
}
