//! Encodes a cloud with an untrained hyperprior model, decodes it and breaks
//! the file size down.

use pcc_geo::codec::{decode, encode, EncodeOptions, Thresholding};
use pcc_geo::geometry::to_voxels;
use pcc_geo::model::{CompressionModel, ModelConfig, ModelKind, TransformKind};
use pcc_geo::synthetic::random_cloud;
use pcc_geo::threshold::Metric;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let model = CompressionModel::new(
        ModelConfig {
            model_kind: ModelKind::Hyperprior,
            transform_kind: TransformKind::V2,
            channels: 2,
            block_size: 16,
        },
        0,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = random_cloud(&mut rng, 6, 2)?;
    let options = EncodeOptions {
        thresholding: Thresholding::Optimal,
        metric: Metric::D1,
    };
    let enc = encode(&cloud, &model, options)?;
    let decoded = decode(&enc.bytes, &model)?;
    assert_eq!(to_voxels(&decoded), enc.reconstruction);

    let a = &enc.accounting;
    println!(
        "{} points in {} blocks -> {} bytes, {:.4} bpp",
        cloud.len(),
        enc.blocks.len(),
        enc.bytes.len(),
        enc.bpp(cloud.len())
    );
    println!(
        "header {} + indices {} + thresholds {} + symbol ranges {} + payload {} = {} bits",
        a.header_bits,
        a.index_bits,
        a.threshold_bits,
        a.symbol_range_bits,
        a.payload_bits,
        a.total_bits()
    );
    for b in enc.blocks.iter().take(5) {
        println!(
            "block {:?}: code {}, {:.1} estimated / {} coded bits",
            b.index, b.code.0, b.estimated_bits, b.payload_bits
        );
    }
    Ok(())
}
