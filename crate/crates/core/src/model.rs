//! The end-to-end compression model: transforms plus entropy models.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bytes::{put_f32, put_u32, Reader};
use crate::entropy::{
    add_uniform_noise, quantize, FactorizedDensity, GaussianConditional, QuantizedTensor,
};
use crate::error::{Error, Result};
use crate::loss::{focal_loss_and_gradient, FocalParams};
use crate::nn::{
    apply_transform, backward_transform, forward_transform, TransformSpec, WeightStore,
};
use crate::tensor::Tensor4D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Latents coded with the learned factorized density.
    Baseline,
    /// Latents coded with Gaussian scales predicted from side information.
    Hyperprior,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Baseline => 0,
            ModelKind::Hyperprior => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Baseline),
            1 => Some(ModelKind::Hyperprior),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Hyperprior => "hyperprior",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    /// Plain strided convolutions.
    V1,
    /// Residual blocks with a progressive filter count.
    V2,
}

impl TransformKind {
    pub fn tag(self) -> u8 {
        match self {
            TransformKind::V1 => 1,
            TransformKind::V2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(TransformKind::V1),
            2 => Some(TransformKind::V2),
            _ => None,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::V1 => "v1",
            TransformKind::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub transform_kind: TransformKind,
    /// Latent channels: filter count for v1, last-stage filter count for v2.
    pub channels: usize,
    pub block_size: usize,
}

/// Per-axis downsampling of the analysis transforms.
pub const ANALYSIS_SCALE: usize = 8;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config(
                "model needs at least one latent channel".into(),
            ));
        }
        let min_block = match self.model_kind {
            ModelKind::Baseline => ANALYSIS_SCALE,
            ModelKind::Hyperprior => 2 * ANALYSIS_SCALE,
        };
        if !self.block_size.is_power_of_two()
            || self.block_size < min_block
            || self.block_size > 1 << 12
        {
            return Err(Error::Config(format!(
                "block size {} must be a power of two in [{min_block}, 4096] for a {} model",
                self.block_size, self.model_kind
            )));
        }
        Ok(())
    }

    pub fn analysis_spec(&self) -> TransformSpec {
        match self.transform_kind {
            TransformKind::V1 => TransformSpec::analysis_v1(self.channels),
            TransformKind::V2 => TransformSpec::analysis_v2(self.channels),
        }
    }

    pub fn synthesis_spec(&self) -> TransformSpec {
        match self.transform_kind {
            TransformKind::V1 => TransformSpec::synthesis_v1(self.channels),
            TransformKind::V2 => TransformSpec::synthesis_v2(self.channels),
        }
    }

    pub fn hyper_specs(&self) -> Option<(TransformSpec, TransformSpec)> {
        match self.model_kind {
            ModelKind::Baseline => None,
            ModelKind::Hyperprior => Some((
                TransformSpec::hyper_analysis(self.channels),
                TransformSpec::hyper_synthesis(self.channels),
            )),
        }
    }

    pub fn specs(&self) -> Vec<TransformSpec> {
        let mut specs = vec![self.analysis_spec(), self.synthesis_spec()];
        if let Some((ha, hs)) = self.hyper_specs() {
            specs.push(ha);
            specs.push(hs);
        }
        specs
    }

    pub fn latent_side(&self) -> usize {
        self.block_size / ANALYSIS_SCALE
    }
}

/// Quantized latents of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Latents {
    pub y: QuantizedTensor,
    pub z: Option<QuantizedTensor>,
}

/// Loss terms of one block under the noise proxy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockTerms {
    pub y_bits: f64,
    pub z_bits: f64,
    pub focal: f64,
}

impl BlockTerms {
    pub fn bits(&self) -> f64 {
        self.y_bits + self.z_bits
    }
}

/// Gradients of the transforms and the density.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub weights: WeightStore,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionModel {
    config: ModelConfig,
    weights: WeightStore,
    density: FactorizedDensity,
    gaussian: GaussianConditional,
}

const MAGIC: &[u8; 4] = b"PCGM";
const VERSION: u8 = 1;

impl CompressionModel {
    /// Freshly initialized model; parameters are rounded to f32 so a saved
    /// copy behaves identically.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = WeightStore::init(&config.specs(), &mut rng);
        let density = FactorizedDensity::init(config.channels, &mut rng);
        let mut model = CompressionModel {
            config,
            weights,
            density,
            gaussian: GaussianConditional::default(),
        };
        model.snap_to_f32();
        Ok(model)
    }

    pub fn from_parts(
        config: ModelConfig,
        weights: WeightStore,
        density: FactorizedDensity,
    ) -> Result<Self> {
        config.validate()?;
        for spec in config.specs() {
            weights.get(spec.name)?.check(&spec)?;
        }
        if density.channels() != config.channels {
            return Err(Error::ModelMismatch(format!(
                "density has {} channels, model has {}",
                density.channels(),
                config.channels
            )));
        }
        let mut model = CompressionModel {
            config,
            weights,
            density,
            gaussian: GaussianConditional::default(),
        };
        model.snap_to_f32();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn density(&self) -> &FactorizedDensity {
        &self.density
    }

    pub fn gaussian(&self) -> &GaussianConditional {
        &self.gaussian
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count() + self.density.params().len()
    }

    /// Transform weights followed by density parameters.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = self.weights.to_flat();
        flat.extend_from_slice(self.density.params());
        flat
    }

    /// Loads parameters in [`params_flat`](Self::params_flat) order and
    /// re-projects the density onto its valid set.
    pub fn load_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.weights.param_count();
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} model parameters",
                flat.len(),
                self.param_count()
            )));
        }
        self.weights.load_flat(&flat[..n])?;
        self.density.params_mut().copy_from_slice(&flat[n..]);
        self.density.project();
        Ok(())
    }

    pub fn snap_to_f32(&mut self) {
        let flat: Vec<f64> = self
            .params_flat()
            .iter()
            .map(|&v| f64::from(v as f32))
            .collect();
        self.load_params_flat(&flat).expect("same parameter count");
    }

    pub fn is_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }

    pub fn zero_gradients(&self) -> ModelGradients {
        ModelGradients {
            weights: self.weights.zeros_like(),
            density: vec![0.0; self.density.params().len()],
        }
    }

    fn check_block(&self, x: &Tensor4D) -> Result<()> {
        let b = self.config.block_size;
        if x.shape() != [b, b, b, 1] {
            return Err(Error::ModelMismatch(format!(
                "model expects {b}^3 blocks, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Loss terms of one block with uniform noise in place of rounding. When
    /// `grads` is given, gradients of `bits + lambda * focal` are added to it.
    pub fn evaluate_block<R: Rng>(
        &self,
        x: &Tensor4D,
        rng: &mut R,
        focal: FocalParams,
        lambda: f64,
        grads: Option<&mut ModelGradients>,
    ) -> Result<BlockTerms> {
        self.check_block(x)?;
        let a_spec = self.config.analysis_spec();
        let s_spec = self.config.synthesis_spec();
        let (y, tape_a) = forward_transform(&a_spec, &self.weights, x)?;
        let y_noisy = add_uniform_noise(&y, rng);
        let (x_tilde, tape_s) = forward_transform(&s_spec, &self.weights, &y_noisy)?;
        let (focal_value, dx_tilde) = focal_loss_and_gradient(x, &x_tilde, focal)?;

        let mut terms = BlockTerms {
            focal: focal_value,
            ..BlockTerms::default()
        };
        let mut dy_noisy;
        let mut hyper = None;
        let density_grad;
        match self.config.hyper_specs() {
            None => {
                let (bits, dy, dd) = self.density.rate_and_gradients(&y_noisy)?;
                terms.y_bits = bits;
                dy_noisy = dy;
                density_grad = dd;
            }
            Some((ha_spec, hs_spec)) => {
                let (z, tape_ha) = forward_transform(&ha_spec, &self.weights, &y)?;
                let z_noisy = add_uniform_noise(&z, rng);
                let (sigma, tape_hs) = forward_transform(&hs_spec, &self.weights, &z_noisy)?;
                let (y_bits, dy, dsigma) = self.gaussian.rate_and_gradients(&y_noisy, &sigma)?;
                let (z_bits, dz, dd) = self.density.rate_and_gradients(&z_noisy)?;
                terms.y_bits = y_bits;
                terms.z_bits = z_bits;
                dy_noisy = dy;
                density_grad = dd;
                hyper = Some((tape_ha, tape_hs, dsigma, dz));
            }
        }

        let Some(grads) = grads else {
            return Ok(terms);
        };
        let dx_scaled = dx_tilde.map(|g| g * lambda);
        let (dy_from_s, g_s) = backward_transform(tape_s, &dx_scaled)?;
        grads.weights.accumulate(s_spec.name, &g_s)?;
        dy_noisy.add_assign(&dy_from_s)?;
        let mut dy = dy_noisy;
        if let Some((tape_ha, tape_hs, dsigma, mut dz)) = hyper {
            let ha_name = tape_ha.spec().name;
            let hs_name = tape_hs.spec().name;
            let (dz_from_hs, g_hs) = backward_transform(tape_hs, &dsigma)?;
            grads.weights.accumulate(hs_name, &g_hs)?;
            dz.add_assign(&dz_from_hs)?;
            let (dy_from_ha, g_ha) = backward_transform(tape_ha, &dz)?;
            grads.weights.accumulate(ha_name, &g_ha)?;
            dy.add_assign(&dy_from_ha)?;
        }
        let (_, g_a) = backward_transform(tape_a, &dy)?;
        grads.weights.accumulate(a_spec.name, &g_a)?;
        for (acc, g) in grads.density.iter_mut().zip(density_grad) {
            *acc += g;
        }
        Ok(terms)
    }

    /// Rounded latents of a block.
    pub fn analyze(&self, x: &Tensor4D) -> Result<Latents> {
        self.check_block(x)?;
        let y = apply_transform(&self.config.analysis_spec(), &self.weights, x)?;
        let z = match self.config.hyper_specs() {
            None => None,
            Some((ha, _)) => Some(quantize(&apply_transform(&ha, &self.weights, &y)?)),
        };
        Ok(Latents { y: quantize(&y), z })
    }

    /// Gaussian scales for `y` predicted from rounded side information.
    pub fn scales(&self, z: &QuantizedTensor) -> Result<Tensor4D> {
        let (_, hs) = self
            .config
            .hyper_specs()
            .ok_or_else(|| Error::ModelMismatch("baseline model has no hyper transforms".into()))?;
        apply_transform(&hs, &self.weights, &z.to_tensor())
    }

    /// Occupancy probabilities reconstructed from rounded latents.
    pub fn synthesize(&self, y: &QuantizedTensor) -> Result<Tensor4D> {
        apply_transform(&self.config.synthesis_spec(), &self.weights, &y.to_tensor())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.config.model_kind.tag());
        out.push(self.config.transform_kind.tag());
        put_u32(&mut out, self.config.channels as u32);
        put_u32(&mut out, self.config.block_size as u32);
        put_u32(&mut out, self.density.params().len() as u32);
        for &v in self.density.params() {
            put_f32(&mut out, v as f32);
        }
        self.weights.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::decoding("not a model file"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::decoding(format!(
                "unsupported model version {version}"
            )));
        }
        let kind = r.u8()?;
        let model_kind = ModelKind::from_tag(kind)
            .ok_or_else(|| Error::decoding(format!("unknown model kind {kind}")))?;
        let kind = r.u8()?;
        let transform_kind = TransformKind::from_tag(kind)
            .ok_or_else(|| Error::decoding(format!("unknown transform kind {kind}")))?;
        let channels = r.u32()? as usize;
        let block_size = r.u32()? as usize;
        let n = r.u32()? as usize;
        if n.saturating_mul(4) > r.remaining() {
            return Err(Error::decoding("density parameters truncated"));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(f64::from(r.f32()?));
        }
        let weights = WeightStore::read_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::decoding(format!(
                "{} trailing bytes in model file",
                r.remaining()
            )));
        }
        let config = ModelConfig {
            model_kind,
            transform_kind,
            channels,
            block_size,
        };
        let density = FactorizedDensity::from_params(channels, params)
            .map_err(|e| Error::decoding(e.to_string()))?;
        CompressionModel::from_parts(config, weights, density)
            .map_err(|e| Error::decoding(e.to_string()))
    }

    /// First eight bytes of the SHA-256 of the serialized model, little-endian.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        CompressionModel::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: ModelKind, transform: TransformKind) -> ModelConfig {
        ModelConfig {
            model_kind: kind,
            transform_kind: transform,
            channels: 2,
            block_size: 16,
        }
    }

    fn sphere_block(size: usize) -> Tensor4D {
        let mut t = Tensor4D::zeros([size, size, size, 1]);
        let c = size as f64 / 2.0 - 0.5;
        let r = size as f64 / 3.0;
        for x in 0..size {
            for y in 0..size {
                for z in 0..size {
                    let d =
                        ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2))
                            .sqrt();
                    if (d - r).abs() < 0.75 {
                        t.set(x, y, z, 0, 1.0);
                    }
                }
            }
        }
        t
    }

    #[test]
    fn config_validation() {
        let mut c = config(ModelKind::Hyperprior, TransformKind::V2);
        c.block_size = 8;
        assert!(c.validate().is_err());
        c.model_kind = ModelKind::Baseline;
        assert!(c.validate().is_ok());
        c.block_size = 24;
        assert!(c.validate().is_err());
        c.block_size = 16;
        c.channels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn serialization_roundtrip_and_hash() {
        for kind in [ModelKind::Baseline, ModelKind::Hyperprior] {
            for t in [TransformKind::V1, TransformKind::V2] {
                let m = CompressionModel::new(config(kind, t), 3).unwrap();
                let back = CompressionModel::from_bytes(&m.to_bytes()).unwrap();
                assert_eq!(back, m);
                assert_eq!(back.hash(), m.hash());
            }
        }
        let a = CompressionModel::new(config(ModelKind::Baseline, TransformKind::V1), 1).unwrap();
        let b = CompressionModel::new(config(ModelKind::Baseline, TransformKind::V1), 2).unwrap();
        assert_ne!(a.hash(), b.hash());
        let bytes = a.to_bytes();
        for cut in [0, 4, 10, bytes.len() - 1] {
            assert!(CompressionModel::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CompressionModel::from_bytes(&extra).is_err());
    }

    #[test]
    fn coding_path_shapes() {
        let m = CompressionModel::new(config(ModelKind::Hyperprior, TransformKind::V2), 4).unwrap();
        let x = sphere_block(16);
        let lat = m.analyze(&x).unwrap();
        assert_eq!(lat.y.shape(), [2, 2, 2, 2]);
        assert_eq!(lat.z.as_ref().unwrap().shape(), [1, 1, 1, 2]);
        assert_eq!(
            m.scales(lat.z.as_ref().unwrap()).unwrap().shape(),
            [2, 2, 2, 2]
        );
        let xt = m.synthesize(&lat.y).unwrap();
        assert_eq!(xt.shape(), [16, 16, 16, 1]);
        assert!(m.analyze(&Tensor4D::zeros([8, 8, 8, 1])).is_err());
    }

    /// Full-model gradient against central differences of the noisy loss with
    /// the noise held fixed by reseeding.
    fn check_model_gradients(kind: ModelKind, transform: TransformKind) {
        let mut cfg = config(kind, transform);
        cfg.channels = 1;
        let mut m = CompressionModel::new(cfg, 5).unwrap();
        // Zero biases put every empty-space pre-activation exactly on a ReLU kink.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = m.weights.param_count();
        let mut flat = m.params_flat();
        for v in flat[..n].iter_mut().filter(|v| **v == 0.0) {
            *v = rng.gen_range(-0.1..0.1);
        }
        m.load_params_flat(&flat).unwrap();
        let x = sphere_block(16);
        let focal = FocalParams::default();
        let lambda = 0.3;
        let loss = |m: &CompressionModel| {
            let t = m
                .evaluate_block(&x, &mut ChaCha8Rng::seed_from_u64(7), focal, lambda, None)
                .unwrap();
            t.bits() + lambda * t.focal
        };
        let mut grads = m.zero_gradients();
        m.evaluate_block(
            &x,
            &mut ChaCha8Rng::seed_from_u64(7),
            focal,
            lambda,
            Some(&mut grads),
        )
        .unwrap();
        let mut g = grads.weights.to_flat();
        g.extend_from_slice(&grads.density);
        let flat = m.params_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rechecked = 0;
        let samples = 150;
        for _ in 0..samples {
            let i = rng.gen_range(0..flat.len());
            let fd_at = |eps: f64| {
                let mut p = flat.clone();
                p[i] += eps;
                let mut mp = m.clone();
                mp.load_params_flat(&p).unwrap();
                p[i] -= 2.0 * eps;
                let mut mm = m.clone();
                mm.load_params_flat(&p).unwrap();
                (loss(&mp) - loss(&mm)) / (2.0 * eps)
            };
            let close = |fd: f64| (fd - g[i]).abs() <= 1e-4f64.max(1e-2 * g[i].abs());
            // Parameters sitting on the non-negativity clamp only have a
            // one-sided derivative.
            if flat[i] == 0.0 && i >= m.weights.param_count() {
                continue;
            }
            if !close(fd_at(1e-4)) {
                rechecked += 1;
                let fine = fd_at(1e-7);
                assert!(close(fine), "param {i}: fd {fine} vs {}", g[i]);
            }
        }
        assert!(rechecked * 20 <= samples, "{rechecked} re-checks");
    }

    #[test]
    fn baseline_gradients() {
        check_model_gradients(ModelKind::Baseline, TransformKind::V1);
    }

    #[test]
    fn hyperprior_gradients() {
        check_model_gradients(ModelKind::Hyperprior, TransformKind::V2);
    }
}
