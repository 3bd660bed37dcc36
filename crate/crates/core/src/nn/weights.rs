//! Parameter containers for the transforms and their binary serialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::conv::Kernel;
use super::transform::{TransformName, TransformSpec};
use crate::bytes::{put_f32, put_u16, put_u32, Reader};
use crate::error::{Error, Result};

/// Kernel and bias of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Kernel,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros_like(&self) -> ConvParams {
        ConvParams {
            kernel: Kernel::zeros(self.kernel.size, self.kernel.c_in, self.kernel.c_out),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn param_count(&self) -> usize {
        self.kernel.data.len() + self.bias.len()
    }
}

/// Truncated normal (two standard deviations) with the given std.
fn truncated_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Weights of one transform: per layer, one convolution or the three
/// convolutions of a residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformWeights {
    pub layers: Vec<Vec<ConvParams>>,
}

impl TransformWeights {
    /// Seeded truncated-normal kernels with std `1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng>(spec: &TransformSpec, rng: &mut R) -> TransformWeights {
        let mut channels = spec.input_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let transposed = layer.kind.is_transposed();
            let mut convs = Vec::new();
            let conv_count = if layer.kind.is_block() { 3 } else { 1 };
            for i in 0..conv_count {
                let c_in = if i == 0 { channels } else { layer.filters };
                let stride = if i == 0 { layer.stride } else { 1 };
                let k = if layer.kind.is_block() {
                    3
                } else {
                    layer.kernel
                };
                let taps = k * k * k;
                let (kernel_in, kernel_out, fan_in) = if transposed {
                    (
                        layer.filters,
                        c_in,
                        (taps * c_in) as f64 / stride.pow(3) as f64,
                    )
                } else {
                    (c_in, layer.filters, (taps * c_in) as f64)
                };
                let std = 1.0 / fan_in.sqrt();
                let data = (0..taps * kernel_in * kernel_out)
                    .map(|_| truncated_normal(rng, std))
                    .collect();
                convs.push(ConvParams {
                    kernel: Kernel {
                        size: k,
                        c_in: kernel_in,
                        c_out: kernel_out,
                        data,
                    },
                    bias: vec![0.0; layer.filters],
                });
            }
            channels = layer.filters;
            layers.push(convs);
        }
        TransformWeights { layers }
    }

    pub fn zeros_like(&self) -> TransformWeights {
        TransformWeights {
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(ConvParams::zeros_like).collect())
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(ConvParams::param_count)
            .sum()
    }

    pub fn to_flat(&self, out: &mut Vec<f64>) {
        for conv in self.layers.iter().flatten() {
            out.extend_from_slice(&conv.kernel.data);
            out.extend_from_slice(&conv.bias);
        }
    }

    /// Reads parameters back in [`to_flat`](Self::to_flat) order; returns the count consumed.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.param_count() {
            return Err(Error::Shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for conv in self.layers.iter_mut().flatten() {
            let n = conv.kernel.data.len();
            conv.kernel.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            let n = conv.bias.len();
            conv.bias.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(pos)
    }

    /// Checks layer and channel structure against a spec.
    pub fn check(&self, spec: &TransformSpec) -> Result<()> {
        let mut channels = spec.input_channels;
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{}: {} weight layers for {} spec layers",
                spec.name,
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, convs)) in spec.layers.iter().zip(&self.layers).enumerate() {
            let expected = if layer.kind.is_block() { 3 } else { 1 };
            let k = if layer.kind.is_block() {
                3
            } else {
                layer.kernel
            };
            if convs.len() != expected {
                return Err(Error::Shape(format!(
                    "{} layer {i}: wrong conv count",
                    spec.name
                )));
            }
            for (j, conv) in convs.iter().enumerate() {
                let c_in = if j == 0 { channels } else { layer.filters };
                let (ki, ko) = if layer.kind.is_transposed() {
                    (layer.filters, c_in)
                } else {
                    (c_in, layer.filters)
                };
                if conv.kernel.size != k
                    || conv.kernel.c_in != ki
                    || conv.kernel.c_out != ko
                    || conv.bias.len() != layer.filters
                    || conv.kernel.data.len() != k * k * k * ki * ko
                {
                    return Err(Error::Shape(format!(
                        "{} layer {i} conv {j}: kernel {}^3 x {} x {} does not match spec",
                        spec.name, conv.kernel.size, conv.kernel.c_in, conv.kernel.c_out
                    )));
                }
            }
            channels = layer.filters;
        }
        Ok(())
    }
}

/// Weights of several transforms keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    transforms: BTreeMap<TransformName, TransformWeights>,
}

const MAGIC: &[u8; 4] = b"PCGW";
const VERSION: u8 = 1;

impl WeightStore {
    pub fn new() -> Self {
        WeightStore::default()
    }

    /// Initializes every spec from one seeded stream, in the given order.
    pub fn init<R: Rng>(specs: &[TransformSpec], rng: &mut R) -> WeightStore {
        let mut store = WeightStore::new();
        for spec in specs {
            store.insert(spec.name, TransformWeights::init(spec, rng));
        }
        store
    }

    pub fn insert(&mut self, name: TransformName, weights: TransformWeights) {
        self.transforms.insert(name, weights);
    }

    pub fn get(&self, name: TransformName) -> Result<&TransformWeights> {
        self.transforms
            .get(&name)
            .ok_or_else(|| Error::ModelMismatch(format!("no weights for {name}")))
    }

    pub fn get_mut(&mut self, name: TransformName) -> Result<&mut TransformWeights> {
        self.transforms
            .get_mut(&name)
            .ok_or_else(|| Error::ModelMismatch(format!("no weights for {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = TransformName> + '_ {
        self.transforms.keys().copied()
    }

    pub fn zeros_like(&self) -> WeightStore {
        WeightStore {
            transforms: self
                .transforms
                .iter()
                .map(|(k, v)| (*k, v.zeros_like()))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.transforms
            .values()
            .map(TransformWeights::param_count)
            .sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.transforms.values() {
            w.to_flat(&mut out);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for w in self.transforms.values_mut() {
            pos += w.load_flat(&flat[pos..])?;
        }
        Ok(())
    }

    /// Adds `g` to the weights of `name`, elementwise.
    pub fn accumulate(&mut self, name: TransformName, g: &TransformWeights) -> Result<()> {
        let w = self.get_mut(name)?;
        if w.param_count() != g.param_count() || w.layers.len() != g.layers.len() {
            return Err(Error::Shape(format!(
                "gradient for {name} does not match its weights"
            )));
        }
        for (a, b) in w.layers.iter_mut().flatten().zip(g.layers.iter().flatten()) {
            for (x, y) in a.kernel.data.iter_mut().zip(&b.kernel.data) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Versioned binary form with per-layer shape headers and f32 payloads.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.transforms.len() as u8);
        for (name, w) in &self.transforms {
            out.push(name.tag());
            put_u16(out, w.layers.len() as u16);
            for layer in &w.layers {
                out.push(layer.len() as u8);
                for conv in layer {
                    out.push(conv.kernel.size as u8);
                    put_u32(out, conv.kernel.c_in as u32);
                    put_u32(out, conv.kernel.c_out as u32);
                    put_u32(out, conv.bias.len() as u32);
                    for &v in conv.kernel.data.iter().chain(&conv.bias) {
                        put_f32(out, v as f32);
                    }
                }
            }
        }
    }

    pub(crate) fn read_from(reader: &mut Reader) -> Result<WeightStore> {
        if reader.take(4)? != MAGIC {
            return Err(Error::decoding("weight store magic mismatch"));
        }
        let version = reader.u8()?;
        if version != VERSION {
            return Err(Error::decoding(format!(
                "unsupported weight store version {version}"
            )));
        }
        let count = reader.u8()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let tag = reader.u8()?;
            let name = TransformName::from_tag(tag)
                .ok_or_else(|| Error::decoding(format!("unknown transform tag {tag}")))?;
            let n_layers = reader.u16()? as usize;
            let mut layers = Vec::with_capacity(n_layers.min(64));
            for _ in 0..n_layers {
                let n_convs = reader.u8()? as usize;
                let mut convs = Vec::with_capacity(n_convs);
                for _ in 0..n_convs {
                    let size = reader.u8()? as usize;
                    let c_in = reader.u32()? as usize;
                    let c_out = reader.u32()? as usize;
                    let bias_len = reader.u32()? as usize;
                    let n = size
                        .checked_pow(3)
                        .and_then(|t| t.checked_mul(c_in))
                        .and_then(|t| t.checked_mul(c_out))
                        .filter(|&n| {
                            n.saturating_add(bias_len).saturating_mul(4) <= reader.remaining()
                        })
                        .ok_or_else(|| Error::decoding("weight payload truncated"))?;
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push(f64::from(reader.f32()?));
                    }
                    let mut bias = Vec::with_capacity(bias_len);
                    for _ in 0..bias_len {
                        bias.push(f64::from(reader.f32()?));
                    }
                    let kernel = Kernel::new(size, c_in, c_out, data)
                        .map_err(|e| Error::decoding(e.to_string()))?;
                    convs.push(ConvParams { kernel, bias });
                }
                layers.push(convs);
            }
            store.insert(name, TransformWeights { layers });
        }
        Ok(store)
    }

    /// Rounds every parameter to f32 precision, matching a save/load cycle.
    pub fn snap_to_f32(&mut self) {
        let flat: Vec<f64> = self
            .to_flat()
            .iter()
            .map(|&v| f64::from(v as f32))
            .collect();
        self.load_flat(&flat).expect("same parameter count");
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn specs() -> Vec<TransformSpec> {
        vec![
            TransformSpec::analysis_v2(2),
            TransformSpec::synthesis_v2(2),
            TransformSpec::hyper_analysis(2),
            TransformSpec::hyper_synthesis(2),
        ]
    }

    #[test]
    fn init_matches_spec_and_is_seeded() {
        let specs = specs();
        let a = WeightStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(1));
        let b = WeightStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        for spec in &specs {
            a.get(spec.name).unwrap().check(spec).unwrap();
        }
        let c = WeightStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(2));
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_follows_fan_in() {
        let spec = TransformSpec::analysis_v1(16);
        let w = TransformWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let k = &w.layers[1][0].kernel.data;
        let fan_in = 125.0 * 16.0;
        let bound = 2.0 / f64::sqrt(fan_in);
        assert!(k.iter().all(|v| v.abs() <= bound));
        let var = k.iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
        // Truncation at two sigma shrinks the variance by about 0.774.
        let expected = 0.774 / fan_in;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
        assert!(w
            .layers
            .iter()
            .flatten()
            .all(|c| c.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn flat_roundtrip() {
        let mut store = WeightStore::init(&specs(), &mut ChaCha8Rng::seed_from_u64(4));
        let flat = store.to_flat();
        assert_eq!(flat.len(), store.param_count());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        store.load_flat(&doubled).unwrap();
        assert_eq!(store.to_flat(), doubled);
        assert!(store.load_flat(&doubled[1..]).is_err());
    }

    #[test]
    fn serialization_roundtrip_snaps_to_f32() {
        let store = WeightStore::init(&specs(), &mut ChaCha8Rng::seed_from_u64(5));
        let mut bytes = Vec::new();
        store.write_to(&mut bytes);
        let back = WeightStore::read_from(&mut Reader::new(&bytes)).unwrap();
        let mut snapped = store.clone();
        snapped.snap_to_f32();
        assert_eq!(back, snapped);
        let mut again = Vec::new();
        back.write_to(&mut again);
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_serialization_is_decoding_error() {
        let store = WeightStore::init(&specs(), &mut ChaCha8Rng::seed_from_u64(6));
        let mut bytes = Vec::new();
        store.write_to(&mut bytes);
        for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                WeightStore::read_from(&mut Reader::new(&bytes[..cut])),
                Err(Error::Decoding { .. })
            ));
        }
    }
}
