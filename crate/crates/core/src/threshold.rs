//! Binarizing soft reconstructions with a fixed or per-block optimal threshold.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Point, VoxelSet};
use crate::metrics::KdTree;
use crate::tensor::Tensor4D;

pub const THRESHOLD_LEVELS: usize = 256;

/// One of 256 thresholds `(index + 0.5) / 256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThresholdCode(pub u8);

/// Code used without optimization: `t = 0.498`, the grid value just below 0.5.
pub const FIXED_THRESHOLD_CODE: ThresholdCode = ThresholdCode(127);

impl ThresholdCode {
    pub fn value(self) -> f64 {
        (f64::from(self.0) + 0.5) / THRESHOLD_LEVELS as f64
    }

    pub fn all() -> impl Iterator<Item = ThresholdCode> {
        (0..=u8::MAX).map(ThresholdCode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    D1,
    D2,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::D1 => 1,
            Metric::D2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Metric::D1),
            2 => Some(Metric::D2),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::D1 => "d1",
            Metric::D2 => "d2",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Metric::D1),
            "d2" => Ok(Metric::D2),
            _ => Err(Error::Usage(format!(
                "unknown metric {s:?}, expected d1 or d2"
            ))),
        }
    }
}

fn check_block(xt: &Tensor4D) -> Result<usize> {
    let [w, h, d, c] = xt.shape();
    if c != 1 || w != h || h != d || !w.is_power_of_two() {
        return Err(Error::Shape(format!(
            "expected a cubic single-channel block, got {:?}",
            xt.shape()
        )));
    }
    Ok(w)
}

fn block_depth(size: usize) -> u32 {
    size.trailing_zeros().max(1)
}

fn point_of(linear: usize, size: usize) -> Point {
    [
        (linear / (size * size)) as u32,
        ((linear / size) % size) as u32,
        (linear % size) as u32,
    ]
}

/// Voxels with `x̃ >= t`.
pub fn apply_threshold(xt: &Tensor4D, t: f64) -> Result<VoxelSet> {
    let size = check_block(xt)?;
    VoxelSet::from_points(
        xt.data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= t)
            .map(|(i, _)| point_of(i, size)),
        block_depth(size),
    )
}

fn argmax(xt: &Tensor4D) -> usize {
    let mut best = 0;
    for (i, &v) in xt.data().iter().enumerate() {
        if v > xt.data()[best] {
            best = i;
        }
    }
    best
}

/// The decoder's reconstruction: the thresholded set, or the single most
/// probable voxel when that set is empty.
pub fn reconstruct_block(xt: &Tensor4D, code: ThresholdCode) -> Result<VoxelSet> {
    let mut set = apply_threshold(xt, code.value())?;
    if set.is_empty() {
        let size = check_block(xt)?;
        set.insert(point_of(argmax(xt), size))?;
    }
    Ok(set)
}

/// Original voxels of one block in block coordinates, with optional normals.
#[derive(Debug, Clone)]
pub struct BlockReference {
    tree: KdTree,
    normals: Option<Vec<[f64; 3]>>,
}

impl BlockReference {
    pub fn new(points: &[Point], normals: Option<Vec<[f64; 3]>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("reference block is empty".into()));
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::Shape(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
        }
        Ok(BlockReference {
            tree: KdTree::from_points(points),
            normals,
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn normals(&self) -> Option<&[[f64; 3]]> {
        self.normals.as_deref()
    }
}

/// Block distortion of candidate sets against one reference. The candidate
/// → reference terms are tabulated once for every voxel of the block.
struct Evaluator<'a> {
    reference: &'a BlockReference,
    metric: Metric,
    size: usize,
    /// Per voxel: nearest reference index and its squared error under `metric`.
    forward: Vec<(usize, f64)>,
}

impl<'a> Evaluator<'a> {
    fn new(reference: &'a BlockReference, metric: Metric, size: usize) -> Result<Self> {
        let normals = match metric {
            Metric::D1 => None,
            Metric::D2 => Some(reference.normals().ok_or_else(|| {
                Error::Domain("point-to-plane thresholding needs reference normals".into())
            })?),
        };
        let refs = reference.tree.points();
        let forward = (0..size * size * size)
            .map(|i| {
                let p = point_of(i, size).map(f64::from);
                let (j, d) = reference.tree.nearest(&p).expect("reference is non-empty");
                let err = match normals {
                    None => d,
                    Some(n) => {
                        let e: f64 = (0..3).map(|a| (p[a] - refs[j][a]) * n[j][a]).sum();
                        e * e
                    }
                };
                (j, err)
            })
            .collect();
        Ok(Evaluator {
            reference,
            metric,
            size,
            forward,
        })
    }

    /// Symmetric distortion of a non-empty candidate given as sorted linear indices.
    fn distortion(&self, candidate: &[usize]) -> f64 {
        let m = candidate.len() as f64;
        let forward = candidate.iter().map(|&i| self.forward[i].1).sum::<f64>() / m;
        let points: Vec<[f64; 3]> = candidate
            .iter()
            .map(|&i| point_of(i, self.size).map(f64::from))
            .collect();
        let tree = KdTree::new(points);
        let refs = self.reference.tree.points();
        let mut backward = 0.0;
        for r in refs {
            let (j, d) = tree.nearest(r).expect("candidate is non-empty");
            backward += match self.metric {
                Metric::D1 => d,
                Metric::D2 => {
                    // Candidate normals come from their nearest reference point.
                    let n = self.reference.normals().expect("checked in new")
                        [self.forward[candidate[j]].0];
                    let c = tree.points()[j];
                    let e: f64 = (0..3).map(|a| (r[a] - c[a]) * n[a]).sum();
                    e * e
                }
            };
        }
        forward.max(backward / refs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub code: ThresholdCode,
    pub distortion: f64,
    /// Every candidate was empty, so the reconstruction is the argmax voxel.
    pub fallback: bool,
}

/// Candidate voxels of `code` as sorted linear indices, with the argmax
/// fallback applied.
fn candidate(xt: &Tensor4D, code: ThresholdCode) -> (Vec<usize>, bool) {
    let t = code.value();
    let set: Vec<usize> = xt
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= t)
        .map(|(i, _)| i)
        .collect();
    if set.is_empty() {
        (vec![argmax(xt)], true)
    } else {
        (set, false)
    }
}

/// Block distortion of the decoder reconstruction at `code`.
pub fn threshold_distortion(
    xt: &Tensor4D,
    code: ThresholdCode,
    reference: &BlockReference,
    metric: Metric,
) -> Result<f64> {
    let size = check_block(xt)?;
    let eval = Evaluator::new(reference, metric, size)?;
    Ok(eval.distortion(&candidate(xt, code).0))
}

/// Scans all 256 codes and returns the one with the lowest block distortion,
/// ties going to the lowest code. Codes that select the same voxels are
/// evaluated once.
pub fn optimal_threshold(
    xt: &Tensor4D,
    reference: &BlockReference,
    metric: Metric,
) -> Result<ThresholdChoice> {
    let size = check_block(xt)?;
    let eval = Evaluator::new(reference, metric, size)?;
    let mut sorted: Vec<f64> = xt.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let count_at = |t: f64| sorted.len() - sorted.partition_point(|&v| v < t);
    let mut best: Option<ThresholdChoice> = None;
    let mut last: Option<(usize, f64)> = None;
    for code in ThresholdCode::all() {
        let count = count_at(code.value());
        let distortion = match last {
            Some((c, d)) if c == count => d,
            _ => {
                let d = eval.distortion(&candidate(xt, code).0);
                last = Some((count, d));
                d
            }
        };
        if best.map_or(true, |b| distortion < b.distortion) {
            best = Some(ThresholdChoice {
                code,
                distortion,
                fallback: count == 0,
            });
        }
    }
    Ok(best.expect("256 candidates"))
}
