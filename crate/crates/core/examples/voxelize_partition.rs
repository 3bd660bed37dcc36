//! Voxelizes a synthetic cloud, writes it as PLY, reads it back and splits it
//! into occupied blocks.

use pcc_geo::geometry::{read_ply, to_voxels, write_ply};
use pcc_geo::partition::{merge_blocks, partition_blocks};
use pcc_geo::synthetic::random_cloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 7, 3)?;

    let mut ply = Vec::new();
    write_ply(&cloud, &mut ply)?;
    let back = read_ply(ply.as_slice())?;
    println!(
        "{} points, {} bytes of PLY, bit depth {}",
        back.len(),
        ply.len(),
        back.bit_depth()
    );

    let voxels = to_voxels(&back);
    for block in [16, 32, 64] {
        let grid = partition_blocks(&voxels, block)?;
        let max = grid.iter().map(|(_, b)| b.len()).max().unwrap_or(0);
        println!(
            "{block:>3}^3 blocks: {:>3} occupied of {:>4}, densest holds {max}",
            grid.len(),
            grid.grid_side().pow(3)
        );
        assert_eq!(merge_blocks(&grid), voxels);
    }
    Ok(())
}
