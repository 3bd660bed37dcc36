//! Trains a small baseline model on synthetic blocks and saves it.

use pcc_geo::model::{ModelConfig, ModelKind, TransformKind};
use pcc_geo::synthetic::training_blocks;
use pcc_geo::train::{train_model, TrainConfig};

fn main() -> pcc_geo::Result<()> {
    let blocks = training_blocks(8, 16, 20, 3)?;
    let config = ModelConfig {
        model_kind: ModelKind::Baseline,
        transform_kind: TransformKind::V1,
        channels: 4,
        block_size: 16,
    };
    let mut cfg = TrainConfig::new(config, 16.0, 60, 0);
    cfg.adam.lr = 3e-3;
    let (model, log) = train_model(&cfg, &blocks)?;
    for r in log.steps.iter().step_by(10) {
        println!(
            "step {:>3}: {:.4} bits/voxel, focal {:>7.2}, loss {:>8.2}",
            r.step, r.rate_bpp, r.focal, r.total
        );
    }
    let path = std::env::temp_dir().join("pcc_geo_example_model.bin");
    model.save(&path)?;
    println!(
        "final loss {:.2} in {:.1}s, model {:016x} saved to {}",
        log.final_loss,
        log.wall_time.as_secs_f64(),
        model.hash(),
        path.display()
    );
    Ok(())
}
