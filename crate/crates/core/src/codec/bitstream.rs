//! Bitstream assembly: header, per-block records and their decoding.

use std::collections::HashMap;

use crate::bytes::{put_u16, put_u32, put_u64, Reader};
use crate::entropy::{
    build_tail_table, factorized_likelihood, gaussian_likelihood, range_encode, CdfTable,
    CodedBlock, FactorizedDensity, GaussianConditional, QuantizedTensor, RangeDecoder,
    CODED_BLOCK_HEADER_BYTES,
};
use crate::error::{Error, Result};
use crate::geometry::{from_voxels, to_voxels, Point, PointCloud, VoxelSet};
use crate::metrics::{estimate_normals, DEFAULT_NORMAL_NEIGHBORS};
use crate::model::{CompressionModel, ModelKind};
use crate::partition::{block_to_tensor, partition_blocks};
use crate::tensor::Tensor4D;
use crate::threshold::{
    optimal_threshold, reconstruct_block, BlockReference, Metric, ThresholdCode,
    FIXED_THRESHOLD_CODE,
};

use super::preset::{ConditionPreset, Thresholding};

pub const MAGIC: &[u8; 4] = b"PCG2";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 21;
/// Block index and threshold code.
pub const RECORD_PREFIX_BYTES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub bit_depth: u8,
    pub block_size_log2: u8,
    pub model_kind: ModelKind,
    /// Metric the thresholds were optimized for; `None` for the fixed threshold.
    pub metric: Option<Metric>,
    pub model_hash: u64,
    pub block_count: u32,
}

impl Header {
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.bit_depth);
        out.push(self.block_size_log2);
        out.push(self.model_kind.tag());
        out.push(self.metric.map_or(0, Metric::tag));
        put_u64(out, self.model_hash);
        put_u32(out, self.block_count);
    }

    fn read_from(r: &mut Reader) -> Result<Header> {
        if r.take(4)? != MAGIC {
            return Err(Error::decoding("not a PCG2 bitstream"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::decoding(format!(
                "unsupported bitstream version {version}"
            )));
        }
        let bit_depth = r.u8()?;
        let block_size_log2 = r.u8()?;
        if bit_depth > 16 || block_size_log2 > bit_depth || block_size_log2 > 12 {
            return Err(Error::decoding(format!(
                "invalid geometry: bit depth {bit_depth}, block size 2^{block_size_log2}"
            )));
        }
        let tag = r.u8()?;
        let model_kind = ModelKind::from_tag(tag)
            .ok_or_else(|| Error::decoding(format!("unknown model kind {tag}")))?;
        let metric = match r.u8()? {
            0 => None,
            tag => Some(
                Metric::from_tag(tag)
                    .ok_or_else(|| Error::decoding(format!("unknown metric flag {tag}")))?,
            ),
        };
        Ok(Header {
            bit_depth,
            block_size_log2,
            model_kind,
            metric,
            model_hash: r.u64()?,
            block_count: r.u32()?,
        })
    }
}

/// Parses only the header.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    Header::read_from(&mut Reader::new(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub thresholding: Thresholding,
    pub metric: Metric,
}

impl EncodeOptions {
    pub fn from_preset(preset: &ConditionPreset, metric: Metric) -> Self {
        EncodeOptions {
            thresholding: preset.thresholding,
            metric,
        }
    }
}

/// Every byte of a bitstream attributed to one part of the format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitAccounting {
    pub header_bits: usize,
    pub index_bits: usize,
    pub threshold_bits: usize,
    pub symbol_range_bits: usize,
    pub payload_bits: usize,
}

impl BitAccounting {
    pub fn total_bits(&self) -> usize {
        self.header_bits
            + self.index_bits
            + self.threshold_bits
            + self.symbol_range_bits
            + self.payload_bits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub index: [u32; 3],
    pub code: ThresholdCode,
    /// Negative log-likelihood of the rounded latents under the model.
    pub estimated_bits: f64,
    /// Range-coder payload bits, without framing.
    pub payload_bits: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// What the decoder will reconstruct.
    pub reconstruction: VoxelSet,
    pub accounting: BitAccounting,
    pub blocks: Vec<BlockReport>,
}

impl Encoded {
    pub fn bits(&self) -> usize {
        self.bytes.len() * 8
    }

    /// Bits per point of a cloud with `points` points.
    pub fn bpp(&self, points: usize) -> f64 {
        self.bits() as f64 / points.max(1) as f64
    }
}

/// Observed range widened by one symbol on each side; the edge symbols hold
/// the model's tails.
fn symbol_range(q: &QuantizedTensor) -> Result<(i16, i16)> {
    let (min, max) = q
        .min_max()
        .ok_or_else(|| Error::Encoding("empty latent tensor".into()))?;
    let narrow = |v: i32| {
        i16::try_from(v).map_err(|_| Error::Encoding(format!("latent value {v} exceeds 16 bits")))
    };
    Ok((narrow(min - 1)?, narrow(max + 1)?))
}

fn factorized_tables(density: &FactorizedDensity, min: i16, max: i16) -> Result<Vec<CdfTable>> {
    (0..density.channels())
        .map(|c| build_tail_table(&density.channel_model(c), i32::from(min), i32::from(max)))
        .collect()
}

/// Per-element Gaussian tables, shared between equal scales.
fn gaussian_tables(
    gc: &GaussianConditional,
    sigma: &Tensor4D,
    min: i16,
    max: i16,
) -> Result<(Vec<CdfTable>, Vec<usize>)> {
    let mut tables = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut which = Vec::with_capacity(sigma.len());
    for &s in sigma.data() {
        let s = gc.bounded(s);
        let slot = match seen.get(&s.to_bits()) {
            Some(&i) => i,
            None => {
                tables.push(build_tail_table(
                    &gc.model(s),
                    i32::from(min),
                    i32::from(max),
                )?);
                seen.insert(s.to_bits(), tables.len() - 1);
                tables.len() - 1
            }
        };
        which.push(slot);
    }
    Ok((tables, which))
}

/// Table for every element of a tensor coded with per-channel tables.
fn channel_refs<'a>(tables: &'a [CdfTable], len: usize) -> Vec<&'a CdfTable> {
    (0..len).map(|i| &tables[i % tables.len()]).collect()
}

fn code(q: &QuantizedTensor, refs: &[&CdfTable], min: i16, max: i16) -> Result<CodedBlock> {
    Ok(CodedBlock {
        min_symbol: min,
        max_symbol: max,
        payload: range_encode(q.data(), refs)?,
    })
}

fn decode_symbols(
    block: &CodedBlock,
    refs: &[&CdfTable],
    shape: [usize; 4],
) -> Result<QuantizedTensor> {
    let mut dec = RangeDecoder::new(&block.payload)?;
    let mut out = Vec::with_capacity(refs.len());
    for t in refs {
        out.push(dec.decode(t)?);
    }
    dec.finish()?;
    QuantizedTensor::from_vec(shape, out)
}

fn as_decoding(e: Error) -> Error {
    match e {
        Error::Decoding { .. } => e,
        other => Error::decoding(other.to_string()),
    }
}

/// Latents of one block as coded blocks, with the estimated bits.
fn encode_latents(
    model: &CompressionModel,
    x: &Tensor4D,
) -> Result<(Vec<CodedBlock>, QuantizedTensor, f64)> {
    let lat = model.analyze(x)?;
    let (ymin, ymax) = symbol_range(&lat.y)?;
    let y_tensor = lat.y.to_tensor();
    match &lat.z {
        None => {
            let tables = factorized_tables(model.density(), ymin, ymax)?;
            let refs = channel_refs(&tables, lat.y.data().len());
            let bits = bits_of(&factorized_likelihood(&y_tensor, model.density())?);
            Ok((vec![code(&lat.y, &refs, ymin, ymax)?], lat.y, bits))
        }
        Some(z) => {
            let (zmin, zmax) = symbol_range(z)?;
            let ztables = factorized_tables(model.density(), zmin, zmax)?;
            let zrefs = channel_refs(&ztables, z.data().len());
            let sigma = model.scales(z)?;
            let (ytables, which) = gaussian_tables(model.gaussian(), &sigma, ymin, ymax)?;
            let yrefs: Vec<&CdfTable> = which.iter().map(|&i| &ytables[i]).collect();
            let bits = bits_of(&factorized_likelihood(&z.to_tensor(), model.density())?)
                + bits_of(&gaussian_likelihood(&y_tensor, &sigma, model.gaussian())?);
            Ok((
                vec![
                    code(z, &zrefs, zmin, zmax)?,
                    code(&lat.y, &yrefs, ymin, ymax)?,
                ],
                lat.y,
                bits,
            ))
        }
    }
}

fn bits_of(p: &Tensor4D) -> f64 {
    -p.data().iter().map(|v| v.log2()).sum::<f64>()
}

/// Latent and side-information shapes for the model's block size.
fn latent_shapes(model: &CompressionModel) -> Result<([usize; 4], Option<[usize; 4]>)> {
    let cfg = model.config();
    let b = cfg.block_size;
    let y = cfg.analysis_spec().output_shape([b, b, b])?;
    let z = match cfg.hyper_specs() {
        Some((ha, _)) => Some(ha.output_shape([y[0], y[1], y[2]])?),
        None => None,
    };
    Ok((y, z))
}

fn decode_latents(model: &CompressionModel, r: &mut Reader) -> Result<QuantizedTensor> {
    let (yshape, zshape) = latent_shapes(model)?;
    let ylen: usize = yshape.iter().product();
    match zshape {
        None => {
            let block = CodedBlock::read_from(r)?;
            let tables = factorized_tables(model.density(), block.min_symbol, block.max_symbol)
                .map_err(as_decoding)?;
            decode_symbols(&block, &channel_refs(&tables, ylen), yshape)
        }
        Some(zshape) => {
            let zblock = CodedBlock::read_from(r)?;
            let yblock = CodedBlock::read_from(r)?;
            let ztables = factorized_tables(model.density(), zblock.min_symbol, zblock.max_symbol)
                .map_err(as_decoding)?;
            let z = decode_symbols(
                &zblock,
                &channel_refs(&ztables, zshape.iter().product()),
                zshape,
            )?;
            let sigma = model.scales(&z)?;
            let (ytables, which) = gaussian_tables(
                model.gaussian(),
                &sigma,
                yblock.min_symbol,
                yblock.max_symbol,
            )
            .map_err(as_decoding)?;
            let yrefs: Vec<&CdfTable> = which.iter().map(|&i| &ytables[i]).collect();
            decode_symbols(&yblock, &yrefs, yshape)
        }
    }
}

/// Estimated normals, with a flat default for clouds too small to estimate.
fn reference_normals(pc: &PointCloud) -> Result<Vec<[f64; 3]>> {
    let k = DEFAULT_NORMAL_NEIGHBORS.min(pc.len().saturating_sub(1));
    if k < 3 {
        return Ok(vec![[0.0, 0.0, 1.0]; pc.len()]);
    }
    Ok(estimate_normals(pc, k)?
        .cloud
        .normals()
        .expect("estimated")
        .to_vec())
}

fn block_log2(model: &CompressionModel) -> u8 {
    model.config().block_size.trailing_zeros() as u8
}

fn grid_side(bit_depth: u32, block_log2: u8) -> usize {
    1usize << (bit_depth - u32::from(block_log2))
}

fn place(local: &VoxelSet, index: [u32; 3], block_size: u32, out: &mut VoxelSet) -> Result<()> {
    for v in local.iter() {
        out.insert([0, 1, 2].map(|a| index[a] * block_size + v[a]))?;
    }
    Ok(())
}

/// Encodes every occupied block of `pc` with `model`.
pub fn encode(
    pc: &PointCloud,
    model: &CompressionModel,
    options: EncodeOptions,
) -> Result<Encoded> {
    let log2 = block_log2(model);
    let bs = model.config().block_size as u32;
    let bit_depth = pc.bit_depth();
    if bit_depth < u32::from(log2) || bit_depth > 16 {
        return Err(Error::Encoding(format!(
            "bit depth {bit_depth} must lie in [{log2}, 16] for {bs}^3 blocks"
        )));
    }
    let g = grid_side(bit_depth, log2);
    if g * g * g > 1 << 16 {
        return Err(Error::Encoding(format!(
            "{g}^3 blocks do not fit 16-bit block indices"
        )));
    }
    let voxels = to_voxels(pc);
    let grid = partition_blocks(&voxels, bs)?;
    let normals = match (options.thresholding, options.metric) {
        (Thresholding::Optimal, Metric::D2) => Some(match pc.normals() {
            Some(n) => pc
                .points()
                .iter()
                .copied()
                .zip(n.iter().copied())
                .collect::<HashMap<Point, [f64; 3]>>(),
            None => {
                let dedup = from_voxels(&voxels);
                dedup
                    .points()
                    .iter()
                    .copied()
                    .zip(reference_normals(&dedup)?)
                    .collect()
            }
        }),
        _ => None,
    };

    let header = Header {
        bit_depth: bit_depth as u8,
        block_size_log2: log2,
        model_kind: model.config().model_kind,
        metric: (options.thresholding == Thresholding::Optimal).then_some(options.metric),
        model_hash: model.hash(),
        block_count: grid.len() as u32,
    };
    let mut bytes = Vec::new();
    header.write_to(&mut bytes);
    let mut accounting = BitAccounting {
        header_bits: HEADER_BYTES * 8,
        ..BitAccounting::default()
    };
    let mut reconstruction = VoxelSet::new(bit_depth)?;
    let mut blocks = Vec::with_capacity(grid.len());
    for (index, local) in grid.iter() {
        let linear = (index[0] as usize * g + index[1] as usize) * g + index[2] as usize;
        let x = block_to_tensor(local, bs)?;
        let (coded, y, estimated_bits) = encode_latents(model, &x)?;
        let xt = model.synthesize(&y)?;
        let (code, fallback) = match options.thresholding {
            Thresholding::Fixed => (FIXED_THRESHOLD_CODE, false),
            Thresholding::Optimal => {
                let points = local.to_vec();
                let block_normals = normals.as_ref().map(|n| {
                    points
                        .iter()
                        .map(|p| n[&[0, 1, 2].map(|a| index[a] * bs + p[a])])
                        .collect()
                });
                let reference = BlockReference::new(&points, block_normals)?;
                let choice = optimal_threshold(&xt, &reference, options.metric)?;
                (choice.code, choice.fallback)
            }
        };
        place(
            &reconstruct_block(&xt, code)?,
            *index,
            bs,
            &mut reconstruction,
        )?;

        put_u16(&mut bytes, linear as u16);
        bytes.push(code.0);
        accounting.index_bits += 16;
        accounting.threshold_bits += 8;
        let mut payload_bits = 0;
        for c in &coded {
            c.write_to(&mut bytes);
            accounting.symbol_range_bits += CODED_BLOCK_HEADER_BYTES * 8;
            payload_bits += c.payload.len() * 8;
        }
        accounting.payload_bits += payload_bits;
        blocks.push(BlockReport {
            index: *index,
            code,
            estimated_bits,
            payload_bits,
            fallback,
        });
    }
    debug_assert_eq!(accounting.total_bits(), bytes.len() * 8);
    Ok(Encoded {
        bytes,
        reconstruction,
        accounting,
        blocks,
    })
}

/// Decodes a bitstream into voxels. Never panics on malformed input.
pub fn decode_voxels(bytes: &[u8], model: &CompressionModel) -> Result<VoxelSet> {
    let mut r = Reader::new(bytes);
    let header = Header::read_from(&mut r)?;
    if header.model_hash != model.hash() {
        return Err(Error::ModelMismatch(format!(
            "bitstream was coded with model {:016x}, have {:016x}",
            header.model_hash,
            model.hash()
        )));
    }
    if header.model_kind != model.config().model_kind || header.block_size_log2 != block_log2(model)
    {
        return Err(Error::ModelMismatch(
            "bitstream header disagrees with the model configuration".into(),
        ));
    }
    let bit_depth = u32::from(header.bit_depth);
    let g = grid_side(bit_depth, header.block_size_log2);
    let bs = model.config().block_size as u32;
    let count = header.block_count as usize;
    if count > g * g * g || count > r.remaining() / RECORD_PREFIX_BYTES {
        return Err(Error::decoding(format!(
            "block count {count} is impossible for this stream"
        )));
    }
    let mut out = VoxelSet::new(bit_depth).map_err(as_decoding)?;
    let mut previous: Option<usize> = None;
    for i in 0..count {
        let block = (|| -> Result<()> {
            let linear = usize::from(r.u16()?);
            if linear >= g * g * g || previous.is_some_and(|p| linear <= p) {
                return Err(Error::decoding(format!(
                    "block index {linear} out of order or range"
                )));
            }
            previous = Some(linear);
            let code = ThresholdCode(r.u8()?);
            let y = decode_latents(model, &mut r)?;
            let xt = model.synthesize(&y)?;
            let index = [linear / (g * g), (linear / g) % g, linear % g].map(|c| c as u32);
            place(&reconstruct_block(&xt, code)?, index, bs, &mut out).map_err(as_decoding)
        })();
        block.map_err(|e| as_decoding(e).in_block(i))?;
    }
    if r.remaining() != 0 {
        return Err(Error::decoding(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], model: &CompressionModel) -> Result<PointCloud> {
    Ok(from_voxels(&decode_voxels(bytes, model)?))
}
