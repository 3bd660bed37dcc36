//! Point clouds, voxel sets and PLY input/output.

mod ply;

use std::collections::BTreeSet;

pub use ply::{read_ply, read_ply_file, write_ply, write_ply_file};

use crate::error::{Error, Result};

/// Integer voxel coordinate `(x, y, z)`.
pub type Point = [u32; 3];

/// Tolerance on the Euclidean norm of stored unit normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Largest supported coordinate bit depth.
pub const MAX_BIT_DEPTH: u32 = 30;

/// An ordered list of voxel-unit points with optional unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    normals: Option<Vec<[f64; 3]>>,
    bit_depth: u32,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, bit_depth: u32) -> Result<Self> {
        Self::with_normals(points, None, bit_depth)
    }

    pub fn with_normals(
        points: Vec<Point>,
        normals: Option<Vec<[f64; 3]>>,
        bit_depth: u32,
    ) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        let limit = 1u64 << bit_depth;
        if let Some(p) = points
            .iter()
            .find(|p| p.iter().any(|&c| u64::from(c) >= limit))
        {
            return Err(Error::Domain(format!(
                "point {p:?} outside [0, 2^{bit_depth})"
            )));
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(Error::Shape(format!(
                    "{} normals for {} points",
                    normals.len(),
                    points.len()
                )));
            }
            for n in normals {
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if !((norm - 1.0).abs() <= NORMAL_TOLERANCE) {
                    return Err(Error::Domain(format!("normal {n:?} is not unit length")));
                }
            }
        }
        Ok(PointCloud {
            points,
            normals,
            bit_depth,
        })
    }

    /// Infers the smallest bit depth covering every coordinate.
    pub fn infer_bit_depth(points: &[Point]) -> u32 {
        let max = points
            .iter()
            .flat_map(|p| p.iter().copied())
            .max()
            .unwrap_or(0);
        (u32::BITS - max.leading_zeros()).max(1)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[[f64; 3]]> {
        self.normals.as_deref()
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn without_normals(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            normals: None,
            bit_depth: self.bit_depth,
        }
    }

    pub fn into_parts(self) -> (Vec<Point>, Option<Vec<[f64; 3]>>, u32) {
        (self.points, self.normals, self.bit_depth)
    }
}

/// A set of unique occupied voxels, iterated in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoxelSet {
    occupied: BTreeSet<Point>,
    bit_depth: u32,
}

impl VoxelSet {
    pub fn new(bit_depth: u32) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        Ok(VoxelSet {
            occupied: BTreeSet::new(),
            bit_depth,
        })
    }

    pub fn from_points<I: IntoIterator<Item = Point>>(points: I, bit_depth: u32) -> Result<Self> {
        let mut set = VoxelSet::new(bit_depth)?;
        for p in points {
            set.insert(p)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, p: Point) -> Result<bool> {
        let limit = 1u64 << self.bit_depth;
        if p.iter().any(|&c| u64::from(c) >= limit) {
            return Err(Error::Domain(format!(
                "voxel {p:?} outside [0, 2^{})",
                self.bit_depth
            )));
        }
        Ok(self.occupied.insert(p))
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.occupied.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> + '_ {
        self.occupied.iter()
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn to_vec(&self) -> Vec<Point> {
        self.occupied.iter().copied().collect()
    }
}

fn check_bit_depth(bit_depth: u32) -> Result<()> {
    if bit_depth == 0 || bit_depth > MAX_BIT_DEPTH {
        return Err(Error::Domain(format!(
            "bit depth {bit_depth} outside [1, {MAX_BIT_DEPTH}]"
        )));
    }
    Ok(())
}

/// Collapses duplicate coordinates into a voxel set.
pub fn to_voxels(pc: &PointCloud) -> VoxelSet {
    VoxelSet {
        occupied: pc.points.iter().copied().collect(),
        bit_depth: pc.bit_depth,
    }
}

/// Lists the voxels of `vs` in lexicographic order, without normals.
pub fn from_voxels(vs: &VoxelSet) -> PointCloud {
    PointCloud {
        points: vs.to_vec(),
        normals: None,
        bit_depth: vs.bit_depth,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn dedup_collapses_duplicates() {
        let pc = PointCloud::new(vec![[0, 0, 0], [0, 0, 0]], 1).unwrap();
        let vs = to_voxels(&pc);
        assert_eq!(vs.to_vec(), vec![[0, 0, 0]]);
    }

    #[test]
    fn dedup_matches_hash_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points: Vec<Point> = (0..400)
            .map(|_| {
                [
                    rng.gen_range(0..16),
                    rng.gen_range(0..16),
                    rng.gen_range(0..16),
                ]
            })
            .collect();
        for i in 0..100 {
            points.push(points[i * 3]);
        }
        let pc = PointCloud::new(points.clone(), 4).unwrap();
        let vs = to_voxels(&pc);
        let oracle: HashSet<Point> = points.into_iter().collect();
        assert_eq!(vs.len(), oracle.len());
        assert!(vs.iter().all(|p| oracle.contains(p)));
        assert!(vs.len() <= pc.len());
    }

    #[test]
    fn empty_cloud_roundtrips() {
        let pc = PointCloud::new(vec![], 3).unwrap();
        assert!(to_voxels(&pc).is_empty());
        assert!(from_voxels(&VoxelSet::new(3).unwrap()).is_empty());
    }

    #[test]
    fn from_voxels_is_lexicographic() {
        let vs = VoxelSet::from_points([[1, 0, 0], [0, 0, 0]], 2).unwrap();
        assert_eq!(from_voxels(&vs).points(), &[[0, 0, 0], [1, 0, 0]]);
        assert!(from_voxels(&vs).normals().is_none());
    }

    #[test]
    fn voxel_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let vs = VoxelSet::from_points(
                (0..rng.gen_range(0..200)).map(|_| {
                    [
                        rng.gen_range(0..64),
                        rng.gen_range(0..64),
                        rng.gen_range(0..64),
                    ]
                }),
                6,
            )
            .unwrap();
            assert_eq!(to_voxels(&from_voxels(&vs)), vs);
        }
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(PointCloud::new(vec![[4, 0, 0]], 2).is_err());
        let mut vs = VoxelSet::new(2).unwrap();
        assert!(vs.insert([0, 0, 4]).is_err());
    }

    #[test]
    fn rejects_non_unit_normals() {
        let err = PointCloud::with_normals(vec![[0, 0, 0]], Some(vec![[0.0, 0.0, 2.0]]), 1);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn infers_bit_depth() {
        assert_eq!(PointCloud::infer_bit_depth(&[[1, 2, 3]]), 2);
        assert_eq!(PointCloud::infer_bit_depth(&[[1023, 0, 0]]), 10);
        assert_eq!(PointCloud::infer_bit_depth(&[[1024, 0, 0]]), 11);
        assert_eq!(PointCloud::infer_bit_depth(&[]), 1);
    }
}
