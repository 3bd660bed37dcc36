//! Compares the fixed threshold with the per-block optimum on the blocks of
//! one cloud.

use pcc_geo::codec::with_normals;
use pcc_geo::geometry::to_voxels;
use pcc_geo::model::{ModelConfig, ModelKind, TransformKind};
use pcc_geo::partition::{block_to_tensor, partition_blocks};
use pcc_geo::synthetic::{random_cloud, training_blocks};
use pcc_geo::threshold::{
    optimal_threshold, threshold_distortion, BlockReference, Metric, FIXED_THRESHOLD_CODE,
};
use pcc_geo::train::{train_model, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let config = ModelConfig {
        model_kind: ModelKind::Baseline,
        transform_kind: TransformKind::V1,
        channels: 4,
        block_size: 16,
    };
    let mut cfg = TrainConfig::new(config, 16.0, 40, 0);
    cfg.adam.lr = 3e-3;
    let (model, _) = train_model(&cfg, &training_blocks(6, 16, 20, 5)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cloud = with_normals(&random_cloud(&mut rng, 6, 1)?)?;
    let grid = partition_blocks(&to_voxels(&cloud), 16)?;
    let normals: std::collections::HashMap<_, _> = cloud
        .points()
        .iter()
        .copied()
        .zip(cloud.normals().unwrap().iter().copied())
        .collect();
    println!("block         points  fixed D1  best D1 (code)  fixed D2  best D2 (code)");
    for (index, local) in grid.iter() {
        let xt = model.synthesize(&model.analyze(&block_to_tensor(local, 16)?)?.y)?;
        let points = local.to_vec();
        let block_normals = points
            .iter()
            .map(|p| normals[&[0, 1, 2].map(|a| index[a] * 16 + p[a])])
            .collect();
        let reference = BlockReference::new(&points, Some(block_normals))?;
        let mut row = format!("{index:<13?} {:>6}", points.len());
        for metric in [Metric::D1, Metric::D2] {
            let fixed = threshold_distortion(&xt, FIXED_THRESHOLD_CODE, &reference, metric)?;
            let best = optimal_threshold(&xt, &reference, metric)?;
            row += &format!(
                "  {fixed:>8.3}  {:>7.3} ({:>3})",
                best.distortion, best.code.0
            );
        }
        println!("{row}");
    }
    Ok(())
}
