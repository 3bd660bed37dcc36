//! Block partitioning of voxel sets.
//!
//! Blocks are found in a single pass: each voxel is bucketed by
//! `p / block_size` and stored at local offset `p % block_size`. This yields
//! the same leaves as descending an octree down to the block level, without
//! the recursion.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{Point, VoxelSet};
use crate::tensor::Tensor4D;

/// Default block edge length in voxels.
pub const DEFAULT_BLOCK_SIZE: u32 = 64;

/// Occupied blocks of a voxel set, keyed by block index in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    block_size: u32,
    bit_depth: u32,
    blocks: BTreeMap<[u32; 3], VoxelSet>,
}

impl BlockGrid {
    pub fn new(block_size: u32, bit_depth: u32) -> Result<Self> {
        check_block_size(block_size, bit_depth)?;
        Ok(BlockGrid {
            block_size,
            bit_depth,
            blocks: BTreeMap::new(),
        })
    }

    /// Inserts a non-empty block of local voxels.
    pub fn insert(&mut self, index: [u32; 3], local: VoxelSet) -> Result<()> {
        let side = self.grid_side();
        if index.iter().any(|&i| i >= side) {
            return Err(Error::Domain(format!(
                "block index {index:?} outside grid of side {side}"
            )));
        }
        if local.is_empty() {
            return Err(Error::Domain("blocks must be non-empty".into()));
        }
        if local
            .iter()
            .any(|p| p.iter().any(|&c| c >= self.block_size))
        {
            return Err(Error::Domain(format!(
                "local voxel outside block of size {}",
                self.block_size
            )));
        }
        self.blocks.insert(index, local);
        Ok(())
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    /// Number of blocks along each axis.
    pub fn grid_side(&self) -> u32 {
        (1u32 << self.bit_depth) / self.block_size
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, index: &[u32; 3]) -> Option<&VoxelSet> {
        self.blocks.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32; 3], &VoxelSet)> + '_ {
        self.blocks.iter()
    }
}

fn check_block_size(block_size: u32, bit_depth: u32) -> Result<()> {
    if !block_size.is_power_of_two() {
        return Err(Error::Config(format!(
            "block size {block_size} is not a power of two"
        )));
    }
    if bit_depth >= 32 || block_size > (1u32 << bit_depth) {
        return Err(Error::Config(format!(
            "block size {block_size} exceeds the 2^{bit_depth} cloud extent"
        )));
    }
    Ok(())
}

fn local_depth(block_size: u32) -> u32 {
    block_size.trailing_zeros().max(1)
}

/// Splits `vs` into occupied blocks of `block_size`³ voxels.
pub fn partition_blocks(vs: &VoxelSet, block_size: u32) -> Result<BlockGrid> {
    check_block_size(block_size, vs.bit_depth())?;
    let shift = block_size.trailing_zeros();
    let mask = block_size - 1;
    let mut buckets: HashMap<[u32; 3], Vec<Point>> = HashMap::new();
    for p in vs.iter() {
        let key = p.map(|c| c >> shift);
        buckets.entry(key).or_default().push(p.map(|c| c & mask));
    }
    let depth = local_depth(block_size);
    let blocks = buckets
        .into_iter()
        .map(|(key, locals)| Ok((key, VoxelSet::from_points(locals, depth)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(BlockGrid {
        block_size,
        bit_depth: vs.bit_depth(),
        blocks,
    })
}

/// Reassembles the global voxel set from a block grid.
pub fn merge_blocks(bg: &BlockGrid) -> VoxelSet {
    let mut out = VoxelSet::new(bg.bit_depth).expect("grid bit depth was validated");
    let bs = bg.block_size;
    for (index, local) in &bg.blocks {
        for v in local.iter() {
            let global = [
                index[0] * bs + v[0],
                index[1] * bs + v[1],
                index[2] * bs + v[2],
            ];
            out.insert(global)
                .expect("block voxels lie inside the cloud extent");
        }
    }
    out
}

/// Dense binary occupancy tensor of shape `block_size`³ x 1.
pub fn block_to_tensor(local: &VoxelSet, block_size: u32) -> Result<Tensor4D> {
    let n = block_size as usize;
    let mut t = Tensor4D::zeros([n, n, n, 1]);
    for p in local.iter() {
        if p.iter().any(|&c| c >= block_size) {
            return Err(Error::Domain(format!(
                "voxel {p:?} outside block of size {block_size}"
            )));
        }
        t.set(p[0] as usize, p[1] as usize, p[2] as usize, 0, 1.0);
    }
    Ok(t)
}

/// Inverse of [`block_to_tensor`] for tensors that are already binary.
pub fn tensor_to_block(t: &Tensor4D) -> Result<VoxelSet> {
    let [w, h, d, c] = t.shape();
    if c != 1 || w != h || h != d || !w.is_power_of_two() {
        return Err(Error::Shape(format!(
            "expected a cubic power-of-two single-channel tensor, got {:?}",
            t.shape()
        )));
    }
    let mut out = VoxelSet::new(local_depth(w as u32))?;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let v = t.get(x, y, z, 0);
                if v == 1.0 {
                    out.insert([x as u32, y as u32, z as u32])?;
                } else if v != 0.0 {
                    return Err(Error::Domain(format!(
                        "non-binary occupancy {v} at ({x}, {y}, {z}); threshold first"
                    )));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_set(rng: &mut ChaCha8Rng, depth: u32, count: usize) -> VoxelSet {
        let side = 1u32 << depth;
        VoxelSet::from_points(
            (0..count).map(|_| {
                [
                    rng.gen_range(0..side),
                    rng.gen_range(0..side),
                    rng.gen_range(0..side),
                ]
            }),
            depth,
        )
        .unwrap()
    }

    #[test]
    fn splits_coordinates_by_div_mod() {
        let vs = VoxelSet::from_points([[100, 0, 700]], 10).unwrap();
        let bg = partition_blocks(&vs, 64).unwrap();
        let local = bg.get(&[1, 0, 10]).unwrap();
        assert_eq!(local.to_vec(), vec![[36, 0, 60]]);
    }

    #[test]
    fn corner_voxels_share_block() {
        let vs = VoxelSet::from_points([[0, 0, 0], [63, 63, 63]], 10).unwrap();
        let bg = partition_blocks(&vs, 64).unwrap();
        assert_eq!(bg.len(), 1);
        assert_eq!(bg.get(&[0, 0, 0]).unwrap().len(), 2);
    }

    #[test]
    fn merge_single_block() {
        let mut bg = BlockGrid::new(64, 10).unwrap();
        bg.insert([1, 0, 0], VoxelSet::from_points([[0, 0, 0]], 6).unwrap())
            .unwrap();
        assert_eq!(merge_blocks(&bg).to_vec(), vec![[64, 0, 0]]);
        assert!(merge_blocks(&BlockGrid::new(64, 10).unwrap()).is_empty());
    }

    #[test]
    fn rejects_bad_block_sizes() {
        let vs = VoxelSet::from_points([[1, 2, 3]], 6).unwrap();
        assert!(matches!(partition_blocks(&vs, 12), Err(Error::Config(_))));
        assert!(matches!(partition_blocks(&vs, 128), Err(Error::Config(_))));
    }

    #[test]
    fn block_count_matches_grouping_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for depth in 6..=10 {
            let vs = random_set(&mut rng, depth, 3000);
            let bg = partition_blocks(&vs, 16).unwrap();
            let mut oracle: BTreeMap<[u32; 3], BTreeSet<[u32; 3]>> = BTreeMap::new();
            for p in vs.iter() {
                oracle
                    .entry([p[0] / 16, p[1] / 16, p[2] / 16])
                    .or_default()
                    .insert([p[0] % 16, p[1] % 16, p[2] % 16]);
            }
            assert_eq!(bg.len(), oracle.len());
            for (k, local) in bg.iter() {
                assert!(!local.is_empty());
                assert_eq!(local.iter().copied().collect::<BTreeSet<_>>(), oracle[k]);
            }
            let side = (1u64 << depth) / 16;
            assert!(bg.len() as u64 <= side * side * side);
        }
    }

    #[test]
    fn merge_matches_reoffset_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut planned = BTreeMap::new();
            for _ in 0..rng.gen_range(0..6) {
                let idx = [
                    rng.gen_range(0..8),
                    rng.gen_range(0..8),
                    rng.gen_range(0..8),
                ];
                planned.insert(idx, random_set(&mut rng, 3, 20));
            }
            let mut bg = BlockGrid::new(8, 6).unwrap();
            let mut oracle = BTreeSet::new();
            for (idx, local) in &planned {
                for v in local.iter() {
                    oracle.insert([idx[0] * 8 + v[0], idx[1] * 8 + v[1], idx[2] * 8 + v[2]]);
                }
                bg.insert(*idx, local.clone()).unwrap();
            }
            let merged: BTreeSet<_> = merge_blocks(&bg).iter().copied().collect();
            assert_eq!(merged, oracle);
        }
    }

    #[test]
    fn roundtrip_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vs = random_set(&mut rng, 10, 10_000);
        assert_eq!(merge_blocks(&partition_blocks(&vs, 64).unwrap()), vs);
        let vs = random_set(&mut rng, 7, 5_000);
        assert_eq!(merge_blocks(&partition_blocks(&vs, 16).unwrap()), vs);
    }

    #[test]
    fn tensor_single_voxel() {
        let vs = VoxelSet::from_points([[0, 0, 0]], 2).unwrap();
        let t = block_to_tensor(&vs, 4).unwrap();
        assert_eq!(t.len(), 64);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.sum(), 1.0);
    }

    #[test]
    fn tensor_full_block() {
        let vs = VoxelSet::from_points(
            (0..4u32).flat_map(|x| (0..4u32).flat_map(move |y| (0..4u32).map(move |z| [x, y, z]))),
            2,
        )
        .unwrap();
        let t = block_to_tensor(&vs, 4).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tensor_membership_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let vs = random_set(&mut rng, 4, 300);
            let t = block_to_tensor(&vs, 16).unwrap();
            assert_eq!(t.sum(), vs.len() as f64);
            for _ in 0..200 {
                let p = [
                    rng.gen_range(0..16),
                    rng.gen_range(0..16),
                    rng.gen_range(0..16),
                ];
                let expected = if vs.contains(&p) { 1.0 } else { 0.0 };
                assert_eq!(
                    t.get(p[0] as usize, p[1] as usize, p[2] as usize, 0),
                    expected
                );
            }
            assert_eq!(tensor_to_block(&t).unwrap(), vs);
            assert_eq!(
                block_to_tensor(&tensor_to_block(&t).unwrap(), 16).unwrap(),
                t
            );
        }
    }

    #[test]
    fn tensor_to_block_rejects_soft_values() {
        let mut t = Tensor4D::zeros([4, 4, 4, 1]);
        assert!(tensor_to_block(&t).unwrap().is_empty());
        t.set(1, 2, 3, 0, 0.5);
        assert!(matches!(tensor_to_block(&t), Err(Error::Domain(_))));
    }

    #[test]
    fn block_to_tensor_rejects_out_of_range() {
        let vs = VoxelSet::from_points([[5, 0, 0]], 3).unwrap();
        assert!(matches!(block_to_tensor(&vs, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn partition_time_is_roughly_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let small = random_set(&mut rng, 10, 100_000);
        let large = random_set(&mut rng, 10, 200_000);
        let time = |vs: &VoxelSet| {
            (0..5)
                .map(|_| {
                    let start = std::time::Instant::now();
                    std::hint::black_box(partition_blocks(vs, 64).unwrap());
                    start.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let ratio = time(&large) / time(&small);
        assert!(ratio < 2.5, "doubling input scaled time by {ratio:.2}");
    }
}
