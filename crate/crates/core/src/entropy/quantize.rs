use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

/// Integer tensor holding quantized latents, same layout as [`Tensor4D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    shape: [usize; 4],
    data: Vec<i32>,
}

impl QuantizedTensor {
    pub fn from_vec(shape: [usize; 4], data: Vec<i32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} symbols for shape {shape:?}",
                data.len()
            )));
        }
        Ok(QuantizedTensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn min_max(&self) -> Option<(i32, i32)> {
        let min = *self.data.iter().min()?;
        let max = *self.data.iter().max()?;
        Some((min, max))
    }

    pub fn to_tensor(&self) -> Tensor4D {
        Tensor4D::from_vec(
            self.shape,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked at construction")
    }
}

/// Rounds half away from zero. Values beyond the i32 range saturate.
pub fn quantize(y: &Tensor4D) -> QuantizedTensor {
    QuantizedTensor {
        shape: y.shape(),
        data: y.data().iter().map(|&v| v.round() as i32).collect(),
    }
}

/// Adds i.i.d. uniform noise on the open interval (-1/2, 1/2).
pub fn noise_proxy(y: &Tensor4D, seed: u64) -> Tensor4D {
    add_uniform_noise(y, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn add_uniform_noise<R: Rng>(y: &Tensor4D, rng: &mut R) -> Tensor4D {
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let u: f64 = rng.sample(Open01);
            v + u - 0.5
        })
        .collect();
    Tensor4D::from_vec(y.shape(), data).expect("same shape")
}
