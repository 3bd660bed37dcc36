//! Trains two conditions at four rates, sweeps a test cloud and writes the
//! BD-PSNR matrices and RD plot to the temp directory.

use std::collections::BTreeMap;

use pcc_geo::codec::{render_rd_svg, run_condition_suite, SuiteConfig, PRESETS};
use pcc_geo::model::ModelConfig;
use pcc_geo::synthetic::{random_cloud, training_blocks};
use pcc_geo::threshold::Metric;
use pcc_geo::train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let base = ModelConfig {
        model_kind: PRESETS[0].model_kind,
        transform_kind: PRESETS[0].transform_kind,
        channels: 4,
        block_size: 16,
    };
    let mut train = TrainConfig::new(base, 1.0, 40, 0);
    train.adam.lr = 3e-3;
    let cfg = SuiteConfig {
        train,
        lambdas: vec![64.0, 16.0, 4.0, 1.0],
        metric: Metric::D1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let clouds = vec![("shapes".to_string(), random_cloud(&mut rng, 6, 2)?)];
    let report = run_condition_suite(
        &training_blocks(6, 16, 20, 11)?,
        &clouds,
        &[PRESETS[0], PRESETS[4]],
        &cfg,
        &BTreeMap::new(),
    )?;
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let dir = std::env::temp_dir();
    for (cloud, sweeps) in &report.sweeps {
        let mut series = Vec::new();
        for (condition, sweep) in sweeps {
            print!("{condition}\n{}", sweep.to_csv());
            series.push((condition.clone(), sweep.rd_points(Metric::D1)));
        }
        let svg = dir.join(format!("{cloud}_rd.svg"));
        std::fs::write(&svg, render_rd_svg(cloud, "D1 PSNR (dB)", &series))?;
        let (d1, d2) = &report.matrices[cloud];
        print!("D1 BD-PSNR\n{}D2 BD-PSNR\n{}", d1.to_csv(), d2.to_csv());
        println!("plot written to {}", svg.display());
    }
    Ok(())
}
