//! Point-to-point and point-to-plane distortion, PSNR, normals and BD-PSNR.

mod bd;
mod kdtree;

pub use bd::{bd_psnr, fit_cubic, RdCurve, RdPoint, MIN_CURVE_POINTS};
pub use kdtree::{brute_force_nearest, squared_distance, KdTree};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Neighbourhood size for normal estimation.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 9;

fn non_empty(pc: &PointCloud, what: &str) -> Result<()> {
    if pc.is_empty() {
        return Err(Error::Domain(format!("{what} cloud is empty")));
    }
    Ok(())
}

/// Mean over `a` of the squared distance to the nearest point of `b`.
pub fn d1_directional(a: &[[f64; 3]], b: &KdTree) -> f64 {
    let total: f64 = a.iter().map(|p| b.nearest(p).map_or(0.0, |(_, d)| d)).sum();
    total / a.len() as f64
}

/// Symmetric point-to-point MSE: the larger of the two directions.
pub fn d1_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    non_empty(a, "first")?;
    non_empty(b, "second")?;
    let ta = KdTree::from_points(a.points());
    let tb = KdTree::from_points(b.points());
    Ok(d1_directional(ta.points(), &tb).max(d1_directional(tb.points(), &ta)))
}

/// Mean over `a` of the squared projection of `a - nn(a)` on the normal at `nn(a)`.
pub fn d2_directional(a: &[[f64; 3]], b: &KdTree, b_normals: &[[f64; 3]]) -> f64 {
    let total: f64 = a
        .iter()
        .map(|p| match b.nearest(p) {
            Some((j, _)) => {
                let q = b.points()[j];
                let n = b_normals[j];
                let e = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2];
                e * e
            }
            None => 0.0,
        })
        .sum();
    total / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneDistortion {
    pub mse: f64,
    /// Only the direction towards the reference was measured because the
    /// test cloud has no normals.
    pub one_sided: bool,
}

/// Point-to-plane MSE of `a` against `reference`, symmetric when `a` also
/// carries normals.
pub fn d2_mse(a: &PointCloud, reference: &PointCloud) -> Result<PlaneDistortion> {
    non_empty(a, "test")?;
    non_empty(reference, "reference")?;
    let ref_normals = reference
        .normals()
        .ok_or_else(|| Error::Domain("point-to-plane distortion needs reference normals".into()))?;
    let ta = KdTree::from_points(a.points());
    let tr = KdTree::from_points(reference.points());
    let forward = d2_directional(ta.points(), &tr, ref_normals);
    Ok(match a.normals() {
        Some(a_normals) => PlaneDistortion {
            mse: forward.max(d2_directional(tr.points(), &ta, a_normals)),
            one_sided: false,
        },
        None => PlaneDistortion {
            mse: forward,
            one_sided: true,
        },
    })
}

/// `10 log10(3 (2^b - 1)^2 / mse)`; infinite for a lossless reconstruction.
pub fn geometry_psnr(mse: f64, bit_depth: u32) -> Result<f64> {
    if !(mse >= 0.0) {
        return Err(Error::Domain(format!("mse {mse} is negative")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = ((1u64 << bit_depth) - 1) as f64;
    Ok(10.0 * (3.0 * peak * peak / mse).log10())
}

/// Formats a PSNR value, writing `lossless` for an infinite one.
pub fn format_psnr(psnr: f64) -> String {
    if psnr.is_infinite() {
        "lossless".to_string()
    } else {
        format!("{psnr:.4}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighbourhood had zero spread and got `(0, 0, 1)`.
    pub degenerate: usize,
}

/// Unit normals from the smallest-eigenvalue direction of each point's `k`
/// nearest neighbours (the point included), oriented away from the centroid.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 || pc.len() <= k {
        return Err(Error::Domain(format!(
            "normal estimation needs 3 <= k < point count, got k = {k} for {} points",
            pc.len()
        )));
    }
    let tree = KdTree::from_points(pc.points());
    let n = pc.len() as f64;
    let mut centroid = [0.0; 3];
    for p in tree.points() {
        for a in 0..3 {
            centroid[a] += p[a] / n;
        }
    }
    let mut normals = Vec::with_capacity(pc.len());
    let mut degenerate = 0;
    for p in tree.points() {
        let nbrs = tree.k_nearest(p, k);
        let mut mean = Vector3::zeros();
        for &(j, _) in &nbrs {
            mean += Vector3::from(tree.points()[j]);
        }
        mean /= nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &nbrs {
            let d = Vector3::from(tree.points()[j]) - mean;
            cov += d * d.transpose();
        }
        if cov.abs().max() == 0.0 {
            degenerate += 1;
            normals.push([0.0, 0.0, 1.0]);
            continue;
        }
        let eig = SymmetricEigen::new(cov);
        let (i_min, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three eigenvalues");
        let mut v = eig.eigenvectors.column(i_min).normalize();
        let outward = Vector3::new(p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]);
        if v.dot(&outward) < 0.0 {
            v = -v;
        }
        normals.push([v[0], v[1], v[2]]);
    }
    let cloud = PointCloud::with_normals(pc.points().to_vec(), Some(normals), pc.bit_depth())?;
    Ok(NormalEstimate { cloud, degenerate })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::Point;

    fn to_f64(points: &[Point]) -> Vec<[f64; 3]> {
        points.iter().map(|p| p.map(f64::from)).collect()
    }

    fn brute_d1(a: &[Point], b: &[Point]) -> f64 {
        let dir = |a: &[Point], b: &[Point]| {
            let total: f64 = a
                .iter()
                .map(|p| {
                    b.iter()
                        .map(|q| squared_distance(&p.map(f64::from), &q.map(f64::from)))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            total / a.len() as f64
        };
        dir(a, b).max(dir(b, a))
    }

    /// Double loop with the lowest-index tie rule.
    fn brute_d2_dir(a: &[Point], b: &[Point], nb: &[[f64; 3]]) -> f64 {
        let bf = to_f64(b);
        let mut total = 0.0;
        for p in a {
            let p = p.map(f64::from);
            let mut best = 0;
            for j in 1..bf.len() {
                if squared_distance(&p, &bf[j]) < squared_distance(&p, &bf[best]) {
                    best = j;
                }
            }
            let e: f64 = (0..3).map(|k| (p[k] - bf[best][k]) * nb[best][k]).sum();
            total += e * e;
        }
        total / a.len() as f64
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n <= 1.0 {
                return v.map(|c| c / n);
            }
        }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, normals: bool) -> PointCloud {
        let pts: Vec<Point> = (0..n)
            .map(|_| [0; 3].map(|_: u32| rng.gen_range(0..64)))
            .collect();
        let nm = normals.then(|| (0..n).map(|_| random_unit(rng)).collect());
        PointCloud::with_normals(pts, nm, 6).unwrap()
    }

    #[test]
    fn d1_examples() {
        let a = PointCloud::new(vec![[0, 0, 0]], 4).unwrap();
        let b = PointCloud::new(vec![[1, 0, 0]], 4).unwrap();
        assert_eq!(d1_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(d1_mse(&a, &b).unwrap(), 1.0);
        let empty = PointCloud::new(vec![], 4).unwrap();
        assert!(matches!(d1_mse(&a, &empty), Err(Error::Domain(_))));
    }

    #[test]
    fn d2_examples() {
        let b = PointCloud::with_normals(vec![[0, 0, 0]], Some(vec![[0.0, 0.0, 1.0]]), 4).unwrap();
        let side = PointCloud::new(vec![[1, 0, 0]], 4).unwrap();
        let up = PointCloud::new(vec![[0, 0, 2]], 4).unwrap();
        let r = d2_mse(&side, &b).unwrap();
        assert_eq!(r.mse, 0.0);
        assert!(r.one_sided);
        assert_eq!(d2_mse(&up, &b).unwrap().mse, 4.0);
        assert!(d2_mse(&b, &up).is_err());
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 7, 200, 500] {
            let a = random_cloud(&mut rng, n, true);
            let b = random_cloud(&mut rng, n.max(3) - 2, true);
            let d1 = d1_mse(&a, &b).unwrap();
            assert!((d1 - brute_d1(a.points(), b.points())).abs() <= 1e-12);
            let d2 = d2_mse(&a, &b).unwrap();
            let oracle = brute_d2_dir(a.points(), b.points(), b.normals().unwrap())
                .max(brute_d2_dir(b.points(), a.points(), a.normals().unwrap()));
            assert!(!d2.one_sided);
            assert!((d2.mse - oracle).abs() <= 1e-12);
            assert_eq!(d2_mse(&b, &a).unwrap().mse, d2.mse);
            assert_eq!(d1_mse(&b, &a).unwrap(), d1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn plane_error_never_exceeds_point_error(seed in any::<u64>(), n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, n, false);
            let b = random_cloud(&mut rng, n, true);
            let tb = KdTree::from_points(b.points());
            let af = to_f64(a.points());
            prop_assert!(d2_directional(&af, &tb, b.normals().unwrap()) <= d1_directional(&af, &tb) + 1e-12);
        }
    }

    #[test]
    fn psnr_values() {
        let peak = 3.0 * 1023.0f64.powi(2);
        assert!(geometry_psnr(peak, 10).unwrap().abs() < 1e-12);
        assert_eq!(geometry_psnr(0.0, 10).unwrap(), f64::INFINITY);
        assert_eq!(format_psnr(f64::INFINITY), "lossless");
        assert!(geometry_psnr(-1.0, 10).is_err());
        assert!((geometry_psnr(peak / 10.0, 10).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn planar_normals() {
        let pts: Vec<Point> = (0..10)
            .flat_map(|x| (0..10).map(move |y| [x, y, 5]))
            .collect();
        let est = estimate_normals(&PointCloud::new(pts, 5).unwrap(), 8).unwrap();
        assert_eq!(est.degenerate, 0);
        for n in est.cloud.normals().unwrap() {
            assert!((n[2].abs() - 1.0).abs() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let r = 40.0;
        let c = 50.0;
        let mut pts = std::collections::BTreeSet::new();
        for i in 0..4000 {
            let t = std::f64::consts::PI * (i as f64 + 0.5) / 4000.0;
            let phi = i as f64 * 2.399_963;
            let p = [
                c + r * t.sin() * phi.cos(),
                c + r * t.sin() * phi.sin(),
                c + r * t.cos(),
            ];
            pts.insert(p.map(|v| v.round() as u32));
        }
        let pc = PointCloud::new(pts.into_iter().collect(), 7).unwrap();
        let est = estimate_normals(&pc, DEFAULT_NORMAL_NEIGHBORS).unwrap();
        let normals = est.cloud.normals().unwrap();
        let good = pc
            .points()
            .iter()
            .zip(normals)
            .filter(|(p, n)| {
                let d = [p[0] as f64 - c, p[1] as f64 - c, p[2] as f64 - c];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let cos = (d[0] * n[0] + d[1] * n[1] + d[2] * n[2]) / len;
                cos >= 15f64.to_radians().cos()
            })
            .count();
        assert!(good * 100 >= 95 * pc.len(), "{good} of {}", pc.len());
    }

    #[test]
    fn normal_preconditions() {
        let pc = PointCloud::new(vec![[0, 0, 0], [1, 0, 0], [0, 1, 0]], 2).unwrap();
        assert!(estimate_normals(&pc, 3).is_err());
        assert!(estimate_normals(&pc, 2).is_err());
        let line: Vec<Point> = (0..5).map(|_| [1, 1, 1]).collect();
        let est = estimate_normals(&PointCloud::new(line, 2).unwrap(), 3).unwrap();
        assert_eq!(est.degenerate, 5);
    }
}
