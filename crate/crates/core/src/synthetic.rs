//! Synthetic training and test geometry: spheres, boxes and Gaussian bumps,
//! sampled densely and voxelized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{from_voxels, PointCloud, VoxelSet};
use crate::partition::{block_to_tensor, partition_blocks};
use crate::tensor::Tensor4D;

/// Surface samples per voxel of extent along each parameter.
const SUPERSAMPLING: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Height field `z = base + height * exp(-r^2 / (2 spread^2))` over a square patch.
    GaussianSurface {
        center: [f64; 2],
        base: f64,
        height: f64,
        spread: f64,
        half_width: f64,
    },
}

impl Shape {
    /// Dense samples on the surface in voxel units.
    pub fn samples(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        match *self {
            Shape::Sphere { center, radius } => {
                let rings = (std::f64::consts::PI * radius * SUPERSAMPLING)
                    .ceil()
                    .max(2.0) as usize;
                for i in 0..=rings {
                    let theta = std::f64::consts::PI * i as f64 / rings as f64;
                    let ring = 2.0 * std::f64::consts::PI * radius * theta.sin();
                    let steps = (ring * SUPERSAMPLING).ceil().max(1.0) as usize;
                    for j in 0..steps {
                        let phi = 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
                        out.push([
                            center[0] + radius * theta.sin() * phi.cos(),
                            center[1] + radius * theta.sin() * phi.sin(),
                            center[2] + radius * theta.cos(),
                        ]);
                    }
                }
            }
            Shape::Box { min, max } => {
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let nu = ((max[u] - min[u]) * SUPERSAMPLING).ceil().max(1.0) as usize;
                    let nv = ((max[v] - min[v]) * SUPERSAMPLING).ceil().max(1.0) as usize;
                    for face in [min[axis], max[axis]] {
                        for i in 0..=nu {
                            for j in 0..=nv {
                                let mut p = [0.0; 3];
                                p[axis] = face;
                                p[u] = min[u] + (max[u] - min[u]) * i as f64 / nu as f64;
                                p[v] = min[v] + (max[v] - min[v]) * j as f64 / nv as f64;
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::GaussianSurface {
                center,
                base,
                height,
                spread,
                half_width,
            } => {
                // Steep flanks need more samples than the patch width suggests.
                let slope = height.abs() / spread;
                let n = (2.0 * half_width * SUPERSAMPLING * (1.0 + slope)).ceil() as usize;
                for i in 0..=n {
                    for j in 0..=n {
                        let x = center[0] - half_width + 2.0 * half_width * i as f64 / n as f64;
                        let y = center[1] - half_width + 2.0 * half_width * j as f64 / n as f64;
                        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                        out.push([x, y, base + height * (-r2 / (2.0 * spread * spread)).exp()]);
                    }
                }
            }
        }
        out
    }

    /// Random shape that fits inside a cube of side `extent`.
    pub fn random<R: Rng>(rng: &mut R, extent: f64) -> Shape {
        let margin = 1.0;
        match rng.gen_range(0..3) {
            0 => {
                let radius = rng.gen_range(0.12..0.4) * extent;
                let center =
                    [(); 3].map(|_| c_sample(rng, radius + margin, extent - radius - margin));
                Shape::Sphere { center, radius }
            }
            1 => {
                let mut min = [0.0; 3];
                let mut max = [0.0; 3];
                for a in 0..3 {
                    let side = rng.gen_range(0.2..0.7) * extent;
                    min[a] = rng.gen_range(margin..extent - side - margin);
                    max[a] = min[a] + side;
                }
                Shape::Box { min, max }
            }
            _ => {
                let half_width = rng.gen_range(0.25..0.45) * extent;
                let center = [(); 2]
                    .map(|_| c_sample(rng, half_width + margin, extent - half_width - margin));
                let height =
                    rng.gen_range(0.1..0.35) * extent * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let base = c_sample(rng, height.abs() + margin, extent - height.abs() - margin);
                let base = if height < 0.0 {
                    base
                } else {
                    base - height.abs() / 2.0
                };
                let spread = rng.gen_range(0.25..0.5) * half_width;
                Shape::GaussianSurface {
                    center,
                    base,
                    height,
                    spread,
                    half_width,
                }
            }
        }
    }
}

fn c_sample<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        (lo + hi) / 2.0
    }
}

/// Voxelizes samples, dropping those outside `[0, 2^bit_depth)`.
pub fn voxelize_samples(samples: &[[f64; 3]], bit_depth: u32) -> Result<VoxelSet> {
    let limit = f64::from(1u32 << bit_depth);
    VoxelSet::from_points(
        samples
            .iter()
            .filter(|p| p.iter().all(|&c| c >= 0.0 && c < limit))
            .map(|p| p.map(|c| c.floor() as u32)),
        bit_depth,
    )
}

/// A cloud made of `shapes` random shapes.
pub fn random_cloud<R: Rng>(rng: &mut R, bit_depth: u32, shapes: usize) -> Result<PointCloud> {
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::Config(format!(
            "synthetic bit depth {bit_depth} outside [1, 16]"
        )));
    }
    let extent = f64::from(1u32 << bit_depth);
    let mut samples = Vec::new();
    for _ in 0..shapes.max(1) {
        samples.extend(Shape::random(rng, extent).samples());
    }
    Ok(from_voxels(&voxelize_samples(&samples, bit_depth)?))
}

/// Occupied blocks carved from random clouds, skipping blocks with fewer
/// than `min_points` voxels.
pub fn training_blocks(
    count: usize,
    block_size: usize,
    min_points: usize,
    seed: u64,
) -> Result<Vec<Tensor4D>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bit_depth = (block_size.trailing_zeros() + 2).min(16);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Config(format!(
                "could not collect {count} blocks with at least {min_points} points"
            )));
        }
        let pc = random_cloud(&mut rng, bit_depth, 1)?;
        let grid = partition_blocks(&crate::geometry::to_voxels(&pc), block_size as u32)?;
        for (_, local) in grid.iter() {
            if local.len() >= min_points && out.len() < count {
                out.push(block_to_tensor(local, block_size as u32)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_a_thin_closed_shell() {
        let s = Shape::Sphere {
            center: [32.0, 32.0, 32.0],
            radius: 20.0,
        };
        let vs = voxelize_samples(&s.samples(), 6).unwrap();
        for p in vs.iter() {
            let d = p
                .iter()
                .map(|&c| (f64::from(c) + 0.5 - 32.0).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((d - 20.0).abs() < 1.0, "{p:?} at {d}");
        }
        // Surface area over one voxel face, within voxelization slack.
        let area = 4.0 * std::f64::consts::PI * 400.0;
        assert!(
            vs.len() as f64 > 0.8 * area && (vs.len() as f64) < 2.0 * area,
            "{}",
            vs.len()
        );
    }

    #[test]
    fn box_faces_are_covered() {
        let b = Shape::Box {
            min: [2.0, 2.0, 2.0],
            max: [10.0, 6.0, 4.0],
        };
        let vs = voxelize_samples(&b.samples(), 4).unwrap();
        for x in 2..=10 {
            for y in 2..=6 {
                assert!(vs.contains(&[x, y, 2]) && vs.contains(&[x, y, 4]));
            }
        }
    }

    #[test]
    fn clouds_are_seeded_and_in_range() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let pa = random_cloud(&mut a, 6, 2).unwrap();
            assert_eq!(pa, random_cloud(&mut b, 6, 2).unwrap());
            assert!(!pa.is_empty());
            assert!(pa.points().iter().all(|p| p.iter().all(|&c| c < 64)));
        }
    }

    #[test]
    fn blocks_have_requested_shape_and_density() {
        let blocks = training_blocks(12, 16, 20, 5).unwrap();
        assert_eq!(blocks.len(), 12);
        for b in &blocks {
            assert_eq!(b.shape(), [16, 16, 16, 1]);
            assert!(b.sum() >= 20.0);
        }
        assert_eq!(blocks, training_blocks(12, 16, 20, 5).unwrap());
    }
}
