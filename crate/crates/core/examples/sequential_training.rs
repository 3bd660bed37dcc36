//! Trains the highest-rate model in full, then fine-tunes each lower rate
//! from its predecessor for an eighth of the steps.

use pcc_geo::model::{ModelConfig, ModelKind, TransformKind};
use pcc_geo::synthetic::training_blocks;
use pcc_geo::train::{sequential_train, TrainConfig, DEFAULT_FINE_TUNE_FRACTION};

fn main() -> pcc_geo::Result<()> {
    let blocks = training_blocks(6, 16, 20, 4)?;
    let config = ModelConfig {
        model_kind: ModelKind::Baseline,
        transform_kind: TransformKind::V1,
        channels: 4,
        block_size: 16,
    };
    let mut base = TrainConfig::new(config, 32.0, 64, 0);
    base.adam.lr = 3e-3;
    let chain = sequential_train(
        &[32.0, 16.0, 8.0, 4.0],
        &base,
        &blocks,
        DEFAULT_FINE_TUNE_FRACTION,
    )?;
    let total: usize = chain.iter().map(|c| c.log.steps.len()).sum();
    for c in &chain {
        let last = c.log.steps.last().unwrap();
        println!(
            "lambda {:>4}: {:>3} steps, {:.4} bits/voxel, focal {:.2}",
            c.lambda,
            c.log.steps.len(),
            last.rate_bpp,
            last.focal
        );
    }
    println!(
        "{total} steps in total, {} for independent training",
        4 * base.steps
    );
    Ok(())
}
