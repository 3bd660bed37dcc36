//! Learned per-channel univariate density.
//!
//! Each channel owns a monotone map `R -> R` built from three hidden stages of
//! width 3. A stage computes `u = H f + b` followed by
//! `g(u) = u + tanh(a) * tanh(u)`; the final stage is affine only. The
//! cumulative is the logistic sigmoid of the map. Matrices are kept
//! non-negative, which keeps the map non-decreasing.

use rand::Rng;

use super::cdf::SymbolModel;
use super::rate::floored;
use crate::error::{Error, Result};
use crate::nn::conv::sigmoid;
use crate::tensor::Tensor4D;

const WIDTH: usize = 3;
const H1: usize = 0;
const H2: usize = H1 + WIDTH;
const H3: usize = H2 + WIDTH * WIDTH;
const H4: usize = H3 + WIDTH * WIDTH;
const B1: usize = H4 + WIDTH;
const B2: usize = B1 + WIDTH;
const B3: usize = B2 + WIDTH;
const B4: usize = B3 + WIDTH;
const A1: usize = B4 + 1;
const A2: usize = A1 + WIDTH;
const A3: usize = A2 + WIDTH;
/// Parameters per channel.
pub const CHANNEL_PARAMS: usize = A3 + WIDTH;

const MATRIX_RANGES: [(usize, usize); 4] = [(H1, H2), (H2, H3), (H3, H4), (H4, B1)];

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDensity {
    channels: usize,
    params: Vec<f64>,
}

/// Intermediate values of one scalar evaluation.
struct Trace {
    x: f64,
    u: [[f64; WIDTH]; 3],
    f: [[f64; WIDTH]; 3],
}

impl FactorizedDensity {
    /// Wide initial density: slopes `1 / (10^(1/4) * width_out)`, biases in
    /// `(-1/2, 1/2)`, no nonlinearity.
    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let scale = 10f64.powf(0.25);
        let mut params = vec![0.0; channels * CHANNEL_PARAMS];
        for c in 0..channels {
            let p = &mut params[c * CHANNEL_PARAMS..(c + 1) * CHANNEL_PARAMS];
            for (idx, &(lo, hi)) in MATRIX_RANGES.iter().enumerate() {
                let width_out = if idx == 3 { 1 } else { WIDTH };
                p[lo..hi].fill(1.0 / (scale * width_out as f64));
            }
            for v in &mut p[B1..A1] {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        FactorizedDensity { channels, params }
    }

    /// Density whose cumulative is the logistic sigmoid with unit scale.
    pub fn logistic(channels: usize) -> Self {
        let mut params = vec![0.0; channels * CHANNEL_PARAMS];
        for c in 0..channels {
            let p = &mut params[c * CHANNEL_PARAMS..(c + 1) * CHANNEL_PARAMS];
            p[H1] = 1.0;
            p[H2] = 1.0;
            p[H3] = 1.0;
            p[H4] = 1.0;
        }
        FactorizedDensity { channels, params }
    }

    pub fn from_params(channels: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != channels * CHANNEL_PARAMS {
            return Err(Error::Shape(format!(
                "{} density parameters for {channels} channels",
                params.len()
            )));
        }
        let mut d = FactorizedDensity { channels, params };
        d.project();
        Ok(d)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Clamps matrix entries to be non-negative.
    pub fn project(&mut self) {
        for c in 0..self.channels {
            let p = &mut self.params[c * CHANNEL_PARAMS..(c + 1) * CHANNEL_PARAMS];
            for &(lo, hi) in &MATRIX_RANGES {
                for v in &mut p[lo..hi] {
                    if !(*v >= 0.0) {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    fn channel(&self, c: usize) -> &[f64] {
        &self.params[c * CHANNEL_PARAMS..(c + 1) * CHANNEL_PARAMS]
    }

    fn trace(&self, c: usize, x: f64) -> (f64, Trace) {
        let p = self.channel(c);
        let mut t = Trace {
            x,
            u: [[0.0; WIDTH]; 3],
            f: [[0.0; WIDTH]; 3],
        };
        for j in 0..WIDTH {
            t.u[0][j] = p[H1 + j] * x + p[B1 + j];
        }
        stage(&mut t, 0, p[A1..A1 + WIDTH].try_into().unwrap());
        for s in 1..3 {
            let (h, b, a) = match s {
                1 => (H2, B2, A2),
                _ => (H3, B3, A3),
            };
            for j in 0..WIDTH {
                let mut acc = p[b + j];
                for i in 0..WIDTH {
                    acc += p[h + j * WIDTH + i] * t.f[s - 1][i];
                }
                t.u[s][j] = acc;
            }
            stage(&mut t, s, p[a..a + WIDTH].try_into().unwrap());
        }
        let mut out = p[B4];
        for i in 0..WIDTH {
            out += p[H4 + i] * t.f[2][i];
        }
        (out, t)
    }

    /// Logit of the cumulative at `x` for channel `c`.
    pub fn logit(&self, c: usize, x: f64) -> f64 {
        self.trace(c, x).0
    }

    pub fn cdf(&self, c: usize, x: f64) -> f64 {
        sigmoid(self.logit(c, x))
    }

    /// Backpropagates `dout` (gradient on the logit) into `dparams` (this
    /// channel's slice) and returns the derivative with respect to `x`.
    fn backward(&self, c: usize, t: &Trace, dout: f64, dparams: &mut [f64]) -> f64 {
        let p = self.channel(c);
        dparams[B4] += dout;
        let mut df = [0.0; WIDTH];
        for i in 0..WIDTH {
            dparams[H4 + i] += dout * t.f[2][i];
            df[i] = dout * p[H4 + i];
        }
        for s in (0..3).rev() {
            let (h, b, a) = [(H1, B1, A1), (H2, B2, A2), (H3, B3, A3)][s];
            let mut du = [0.0; WIDTH];
            for j in 0..WIDTH {
                let ta = p[a + j].tanh();
                let tu = t.u[s][j].tanh();
                du[j] = df[j] * (1.0 + ta * (1.0 - tu * tu));
                dparams[a + j] += df[j] * tu * (1.0 - ta * ta);
                dparams[b + j] += du[j];
            }
            if s == 0 {
                let mut dx = 0.0;
                for j in 0..WIDTH {
                    dparams[h + j] += du[j] * t.x;
                    dx += du[j] * p[h + j];
                }
                return dx;
            }
            let mut dprev = [0.0; WIDTH];
            for j in 0..WIDTH {
                for i in 0..WIDTH {
                    dparams[h + j * WIDTH + i] += du[j] * t.f[s - 1][i];
                    dprev[i] += du[j] * p[h + j * WIDTH + i];
                }
            }
            df = dprev;
        }
        unreachable!("loop returns at the first stage")
    }

    /// Mass of the unit bin around `v`, computed on the tail nearer to zero.
    pub fn mass(&self, c: usize, v: f64) -> f64 {
        let lower = self.logit(c, v - 0.5);
        let upper = self.logit(c, v + 0.5);
        bin_mass(lower, upper)
    }

    fn check(&self, y: &Tensor4D) -> Result<()> {
        if y.channels() != self.channels {
            return Err(Error::Shape(format!(
                "density has {} channels, tensor has {}",
                self.channels,
                y.channels()
            )));
        }
        Ok(())
    }

    /// Floored per-element bin masses.
    pub fn likelihood(&self, y: &Tensor4D) -> Result<Tensor4D> {
        self.check(y)?;
        let c = self.channels;
        let data = y
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| floored(self.mass(i % c, v)).0)
            .collect();
        Tensor4D::from_vec(y.shape(), data)
    }

    /// Total bits, gradient with respect to `y` and gradient with respect to
    /// the parameters.
    pub fn rate_and_gradients(&self, y: &Tensor4D) -> Result<(f64, Tensor4D, Vec<f64>)> {
        self.check(y)?;
        let c = self.channels;
        let mut bits = 0.0;
        let mut dy = Tensor4D::zeros(y.shape());
        let mut dparams = vec![0.0; self.params.len()];
        let ln2 = std::f64::consts::LN_2;
        for (i, &v) in y.data().iter().enumerate() {
            let ch = i % c;
            let (lower, tl) = self.trace(ch, v - 0.5);
            let (upper, tu) = self.trace(ch, v + 0.5);
            let (p, keep) = floored(bin_mass(lower, upper));
            bits -= p.log2();
            if keep == 0.0 {
                continue;
            }
            // d(-log2 p) = -dp / (p ln 2); dp/dupper = s'(upper), dp/dlower = -s'(lower).
            let scale = -1.0 / (p * ln2);
            let d_upper = scale * sigmoid_slope(upper);
            let d_lower = -scale * sigmoid_slope(lower);
            let slice = &mut dparams[ch * CHANNEL_PARAMS..(ch + 1) * CHANNEL_PARAMS];
            let dx_u = self.backward(ch, &tu, d_upper, slice);
            let dx_l = self.backward(ch, &tl, d_lower, slice);
            dy.data_mut()[i] = dx_u + dx_l;
        }
        Ok((bits, dy, dparams))
    }

    /// Single-channel view usable for table construction.
    pub fn channel_model(&self, c: usize) -> ChannelModel<'_> {
        ChannelModel {
            density: self,
            channel: c,
        }
    }
}

fn stage(t: &mut Trace, s: usize, a: [f64; WIDTH]) {
    for j in 0..WIDTH {
        t.f[s][j] = t.u[s][j] + a[j].tanh() * t.u[s][j].tanh();
    }
}

#[inline]
fn sigmoid_slope(v: f64) -> f64 {
    sigmoid(v) * sigmoid(-v)
}

/// `sigmoid(upper) - sigmoid(lower)`, evaluated on the side where both are small.
fn bin_mass(lower: f64, upper: f64) -> f64 {
    let sign = if lower + upper > 0.0 { -1.0 } else { 1.0 };
    (sigmoid(sign * upper) - sigmoid(sign * lower)).abs()
}

pub struct ChannelModel<'a> {
    density: &'a FactorizedDensity,
    channel: usize,
}

impl SymbolModel for ChannelModel<'_> {
    fn mass(&self, symbol: i32) -> f64 {
        self.density.mass(self.channel, f64::from(symbol))
    }

    fn below(&self, symbol: i32) -> f64 {
        self.density.cdf(self.channel, f64::from(symbol) + 0.5)
    }

    fn above(&self, symbol: i32) -> f64 {
        sigmoid(-self.density.logit(self.channel, f64::from(symbol) - 0.5))
    }
}

/// Floored bin masses of `y` under `model`.
pub fn factorized_likelihood(y: &Tensor4D, model: &FactorizedDensity) -> Result<Tensor4D> {
    model.likelihood(y)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_density(seed: u64, channels: usize) -> FactorizedDensity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = FactorizedDensity::init(channels, &mut rng);
        for v in d.params_mut() {
            *v = *v * rng.gen_range(0.5..1.5) + rng.gen_range(-0.1..0.1);
        }
        d.project();
        d
    }

    #[test]
    fn logistic_unit_bin() {
        let d = FactorizedDensity::logistic(1);
        let oracle = 1.0 / (1.0 + (-0.5f64).exp()) - 1.0 / (1.0 + 0.5f64.exp());
        assert!((d.mass(0, 0.0) - oracle).abs() < 1e-15);
        assert!((d.mass(0, 0.0) - 0.2449).abs() < 5e-5);
    }

    #[test]
    fn masses_sum_to_one_and_cdf_monotone() {
        for seed in 0..5 {
            let d = random_density(seed, 3);
            for c in 0..3 {
                let total: f64 = (-2000..=2000).map(|v| d.mass(c, f64::from(v))).sum();
                assert!((total - 1.0).abs() < 1e-3, "channel {c}: {total}");
                let mut prev = 0.0;
                for i in -400..=400 {
                    let v = d.cdf(c, f64::from(i) * 0.25);
                    assert!(v >= prev);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn likelihood_entries_in_unit_interval() {
        let d = random_density(9, 2);
        let y = Tensor4D::from_vec(
            [2, 2, 2, 2],
            (0..16).map(|i| f64::from(i) * 7.3 - 50.0).collect(),
        )
        .unwrap();
        let p = factorized_likelihood(&y, &d).unwrap();
        assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(d.likelihood(&Tensor4D::zeros([1, 1, 1, 3])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = random_density(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Tensor4D::from_vec(
            [2, 2, 1, 2],
            (0..8).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        )
        .unwrap();
        let (bits, dy, dp) = d.rate_and_gradients(&y).unwrap();
        let rate = |d: &FactorizedDensity, y: &Tensor4D| d.rate_and_gradients(y).unwrap().0;
        assert!((bits - rate(&d, &y)).abs() < 1e-12);
        let eps = 1e-6;
        for i in 0..y.len() {
            let mut p = y.clone();
            p.data_mut()[i] += eps;
            let mut m = y.clone();
            m.data_mut()[i] -= eps;
            let fd = (rate(&d, &p) - rate(&d, &m)) / (2.0 * eps);
            assert!(
                (fd - dy.data()[i]).abs() <= 1e-6 + 1e-3 * fd.abs(),
                "y {i}: {fd} vs {}",
                dy.data()[i]
            );
        }
        for i in 0..d.params().len() {
            let mut p = d.clone();
            p.params_mut()[i] += eps;
            let mut m = d.clone();
            m.params_mut()[i] -= eps;
            let fd = (rate(&p, &y) - rate(&m, &y)) / (2.0 * eps);
            assert!(
                (fd - dp[i]).abs() <= 1e-6 + 1e-3 * fd.abs(),
                "param {i}: {fd} vs {}",
                dp[i]
            );
        }
    }
}
