//! Point-to-point and point-to-plane PSNR of jittered copies of a cloud, and
//! the BD-PSNR between two rate-distortion curves.

use pcc_geo::codec::with_normals;
use pcc_geo::geometry::PointCloud;
use pcc_geo::metrics::{bd_psnr, d1_mse, d2_mse, format_psnr, geometry_psnr, RdCurve, RdPoint};
use pcc_geo::synthetic::random_cloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reference = with_normals(&random_cloud(&mut rng, 8, 2)?)?;
    let top = (1 << reference.bit_depth()) - 1;
    println!("jitter  D1 PSNR (dB)  D2 PSNR (dB)");
    for jitter in [0, 1, 2, 4] {
        let moved = reference
            .points()
            .iter()
            .map(|p| {
                p.map(|c| (i64::from(c) + rng.gen_range(-jitter..=jitter)).clamp(0, top) as u32)
            })
            .collect();
        let test = PointCloud::new(moved, reference.bit_depth())?;
        let d1 = d1_mse(&test, &reference)?;
        let d2 = d2_mse(&test, &reference)?;
        println!(
            "  ±{jitter}    {:>10}    {:>10}",
            format_psnr(geometry_psnr(d1, 8)?),
            format_psnr(geometry_psnr(d2.mse, 8)?)
        );
    }

    let anchor = [(0.1, 30.0), (0.2, 33.5), (0.4, 36.0), (0.8, 38.0)];
    let reference = RdCurve::new(
        anchor
            .iter()
            .map(|&(bpp, psnr_db)| RdPoint { bpp, psnr_db })
            .collect(),
    )?;
    let test = RdCurve::new(
        anchor
            .iter()
            .map(|&(bpp, psnr_db)| RdPoint {
                bpp: bpp * 0.8,
                psnr_db,
            })
            .collect(),
    )?;
    println!(
        "20% lower rate at equal quality: BD-PSNR {:+.3} dB",
        bd_psnr(&test, &reference)?
    );
    Ok(())
}
