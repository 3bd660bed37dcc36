//! Rate-distortion sweeps over trained models and the condition suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{from_voxels, PointCloud};
use crate::metrics::{
    bd_psnr, d1_mse, d2_mse, estimate_normals, geometry_psnr, RdCurve, RdPoint,
    DEFAULT_NORMAL_NEIGHBORS,
};
use crate::model::CompressionModel;
use crate::tensor::Tensor4D;
use crate::threshold::Metric;
use crate::train::{sequential_train, train_model, TrainConfig, DEFAULT_FINE_TUNE_FRACTION};

use super::bitstream::{encode, EncodeOptions};
use super::preset::{ConditionPreset, TrainingMode};

/// Quality and rate of one coded cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudEvaluation {
    pub bits: usize,
    pub bpp: f64,
    pub d1_mse: f64,
    pub d1_psnr: f64,
    pub d2_mse: f64,
    pub d2_psnr: f64,
    /// The point-to-plane value only measures decoded-to-original.
    pub d2_one_sided: bool,
}

/// Attaches estimated normals when the cloud has none.
pub fn with_normals(pc: &PointCloud) -> Result<PointCloud> {
    if pc.normals().is_some() {
        return Ok(pc.clone());
    }
    let dedup = from_voxels(&crate::geometry::to_voxels(pc));
    let k = DEFAULT_NORMAL_NEIGHBORS.min(dedup.len().saturating_sub(1));
    if k < 3 {
        let (points, _, bd) = dedup.into_parts();
        let n = points.len();
        return PointCloud::with_normals(points, Some(vec![[0.0, 0.0, 1.0]; n]), bd);
    }
    Ok(estimate_normals(&dedup, k)?.cloud)
}

/// Encodes `pc` and measures the decoder's reconstruction against it. The
/// reference should carry normals (see [`with_normals`]).
pub fn evaluate_cloud(
    reference: &PointCloud,
    model: &CompressionModel,
    options: EncodeOptions,
) -> Result<CloudEvaluation> {
    let enc = encode(reference, model, options)?;
    let decoded = from_voxels(&enc.reconstruction);
    let d1 = d1_mse(&decoded, reference)?;
    let d2 = d2_mse(&decoded, reference)?;
    let bd = reference.bit_depth();
    Ok(CloudEvaluation {
        bits: enc.bits(),
        bpp: enc.bpp(reference.len()),
        d1_mse: d1,
        d1_psnr: geometry_psnr(d1, bd)?,
        d2_mse: d2.mse,
        d2_psnr: geometry_psnr(d2.mse, bd)?,
        d2_one_sided: d2.one_sided,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub eval: CloudEvaluation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RdSweep {
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

impl RdSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,bpp,d1_psnr,d2_psnr\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.lambda, p.eval.bpp, p.eval.d1_psnr, p.eval.d2_psnr
            )
            .expect("write to string");
        }
        out
    }

    /// Finite points of `metric`, sorted by rate.
    pub fn rd_points(&self, metric: Metric) -> Vec<RdPoint> {
        let mut pts: Vec<RdPoint> = self
            .points
            .iter()
            .map(|p| RdPoint {
                bpp: p.eval.bpp,
                psnr_db: match metric {
                    Metric::D1 => p.eval.d1_psnr,
                    Metric::D2 => p.eval.d2_psnr,
                },
            })
            .filter(|p| p.psnr_db.is_finite() && p.bpp > 0.0)
            .collect();
        pts.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        pts
    }

    /// Curve for BD computations, optionally without its lowest-rate point.
    pub fn curve(&self, metric: Metric, drop_lowest_rate: bool) -> Result<RdCurve> {
        let mut pts = self.rd_points(metric);
        if drop_lowest_rate && !pts.is_empty() {
            pts.remove(0);
        }
        RdCurve::new(pts)
    }
}

/// One RD point per model. Fewer than four points still produce a sweep,
/// with a warning that BD values cannot be computed.
pub fn rd_sweep(
    pc: &PointCloud,
    models: &[(f64, CompressionModel)],
    options: EncodeOptions,
) -> Result<RdSweep> {
    let reference = with_normals(pc)?;
    let mut sweep = RdSweep::default();
    for (lambda, model) in models {
        sweep.points.push(SweepPoint {
            lambda: *lambda,
            eval: evaluate_cloud(&reference, model, options)?,
        });
    }
    if sweep.points.len() < crate::metrics::MIN_CURVE_POINTS {
        sweep.warnings.push(format!(
            "{} RD points: BD-PSNR needs {}",
            sweep.points.len(),
            crate::metrics::MIN_CURVE_POINTS
        ));
    }
    if sweep
        .points
        .iter()
        .any(|p| p.eval.d1_psnr.is_infinite() || p.eval.d2_psnr.is_infinite())
    {
        sweep
            .warnings
            .push("lossless points are left out of curves".into());
    }
    Ok(sweep)
}

/// Models for one condition, in descending λ order. `template` supplies the
/// channels, block size, step budget, seed and optimizer; the preset overrides
/// model kind, transform and focal loss.
pub fn train_condition(
    preset: &ConditionPreset,
    template: &TrainConfig,
    lambdas: &[f64],
    dataset: &[Tensor4D],
) -> Result<Vec<(f64, CompressionModel)>> {
    if lambdas.is_empty() {
        return Err(Error::Config(
            "a condition needs at least one lambda".into(),
        ));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cfg = template.clone();
    cfg.model.model_kind = preset.model_kind;
    cfg.model.transform_kind = preset.transform_kind;
    cfg.lambda = sorted[0];
    cfg.focal = preset.focal();
    cfg.init = None;
    match preset.training {
        TrainingMode::Sequential if sorted.len() >= 2 => {
            Ok(
                sequential_train(&sorted, &cfg, dataset, DEFAULT_FINE_TUNE_FRACTION)?
                    .into_iter()
                    .map(|c| (c.lambda, c.model))
                    .collect(),
            )
        }
        _ => sorted
            .iter()
            .map(|&lambda| {
                cfg.lambda = lambda;
                Ok((lambda, train_model(&cfg, dataset)?.0))
            })
            .collect(),
    }
}

/// Square matrix of BD-PSNR values, `None` where a value cannot be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct BdMatrix {
    pub names: Vec<String>,
    /// `values[i][j]` is the gain of condition `i` over condition `j`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl BdMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("test");
        for n in &self.names {
            write!(out, ",{n}").expect("write to string");
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                match v {
                    Some(v) => write!(out, ",{v:.4}"),
                    None => write!(out, ",n/a"),
                }
                .expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// BD-PSNR between every pair of curves; curves marked in `drop_lowest`
/// lose their lowest-rate point first.
pub fn bd_matrix(curves: &[(String, Option<&RdSweep>, bool)], metric: Metric) -> BdMatrix {
    let prepared: Vec<Option<RdCurve>> = curves
        .iter()
        .map(|(_, sweep, drop)| sweep.and_then(|s| s.curve(metric, *drop).ok()))
        .collect();
    let values = prepared
        .iter()
        .map(|a| {
            prepared
                .iter()
                .map(|b| match (a, b) {
                    (Some(a), Some(b)) => bd_psnr(a, b).ok(),
                    _ => None,
                })
                .collect()
        })
        .collect();
    BdMatrix {
        names: curves.iter().map(|(n, _, _)| n.clone()).collect(),
        values,
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    /// Per cloud, per condition.
    pub sweeps: BTreeMap<String, BTreeMap<String, RdSweep>>,
    /// Per cloud: D1 and D2 matrices.
    pub matrices: BTreeMap<String, (BdMatrix, BdMatrix)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    /// Training template, see [`train_condition`].
    pub train: TrainConfig,
    pub lambdas: Vec<f64>,
    pub metric: Metric,
}

/// Trains every condition, sweeps every cloud and tabulates BD-PSNR between
/// conditions and against an optional reference curve per cloud. A
/// condition that fails to train shows up as `n/a`.
pub fn run_condition_suite(
    dataset: &[Tensor4D],
    clouds: &[(String, PointCloud)],
    conditions: &[ConditionPreset],
    cfg: &SuiteConfig,
    references: &BTreeMap<String, RdSweep>,
) -> Result<SuiteReport> {
    if cfg.lambdas.is_empty() {
        return Err(Error::Config("the suite needs at least one lambda".into()));
    }
    let mut warnings = Vec::new();
    let mut trained = Vec::with_capacity(conditions.len());
    for preset in conditions {
        match train_condition(preset, &cfg.train, &cfg.lambdas, dataset) {
            Ok(models) => trained.push(Some(models)),
            Err(e) => {
                warnings.push(format!("{preset}: {e}"));
                trained.push(None);
            }
        }
    }
    let mut sweeps = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    for (name, pc) in clouds {
        let mut per_condition = BTreeMap::new();
        for (preset, models) in conditions.iter().zip(&trained) {
            let Some(models) = models else { continue };
            match rd_sweep(pc, models, EncodeOptions::from_preset(preset, cfg.metric)) {
                Ok(s) => {
                    warnings.extend(s.warnings.iter().map(|w| format!("{name}/{preset}: {w}")));
                    per_condition.insert(preset.name.to_string(), s);
                }
                Err(e) => warnings.push(format!("{name}/{preset}: {e}")),
            }
        }
        let mut rows: Vec<(String, Option<&RdSweep>, bool)> = conditions
            .iter()
            .map(|p| {
                (
                    p.name.to_string(),
                    per_condition.get(p.name),
                    p.training == TrainingMode::Sequential,
                )
            })
            .collect();
        if let Some(r) = references.get(name) {
            rows.push(("reference".to_string(), Some(r), false));
        }
        for (row, sweep, drop) in &rows {
            for metric in [Metric::D1, Metric::D2] {
                if let Some(Err(e)) = sweep.map(|s| s.curve(metric, *drop)) {
                    warnings.push(format!("{name}/{row} {metric} curve: {e}"));
                }
            }
        }
        let m1 = bd_matrix(&rows, Metric::D1);
        let m2 = bd_matrix(&rows, Metric::D2);
        matrices.insert(name.clone(), (m1, m2));
        sweeps.insert(name.clone(), per_condition);
    }
    Ok(SuiteReport {
        sweeps,
        matrices,
        warnings,
    })
}

/// Reads a sweep back from its CSV form.
pub fn parse_sweep_csv(text: &str) -> Result<RdSweep> {
    let mut sweep = RdSweep::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                content: line.to_string(),
                message: e.to_string(),
            })?;
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                content: line.to_string(),
                message: "expected lambda,bpp,d1_psnr,d2_psnr".into(),
            });
        }
        sweep.points.push(SweepPoint {
            lambda: fields[0],
            eval: CloudEvaluation {
                bits: 0,
                bpp: fields[1],
                d1_mse: f64::NAN,
                d1_psnr: fields[2],
                d2_mse: f64::NAN,
                d2_psnr: fields[3],
                d2_one_sided: true,
            },
        });
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(points: &[(f64, f64, f64)]) -> RdSweep {
        RdSweep {
            points: points
                .iter()
                .map(|&(bpp, d1, d2)| SweepPoint {
                    lambda: bpp,
                    eval: CloudEvaluation {
                        bits: 0,
                        bpp,
                        d1_mse: 0.0,
                        d1_psnr: d1,
                        d2_mse: 0.0,
                        d2_psnr: d2,
                        d2_one_sided: true,
                    },
                })
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn csv_roundtrip() {
        let s = sweep(&[(0.1, 50.0, 55.0), (0.2, 53.0, 58.0)]);
        let csv = s.to_csv();
        assert!(csv.starts_with("lambda,bpp,d1_psnr,d2_psnr\n"));
        let back = parse_sweep_csv(&csv).unwrap();
        assert_eq!(back.rd_points(Metric::D1), s.rd_points(Metric::D1));
        assert!(parse_sweep_csv("h\n1,2,x,4\n").is_err());
    }

    #[test]
    fn matrix_diagonal_and_missing_cells() {
        let a = sweep(&[
            (0.1, 50.0, 55.0),
            (0.2, 53.0, 58.0),
            (0.4, 56.0, 60.0),
            (0.8, 58.0, 62.0),
        ]);
        let b = sweep(&[
            (0.1, 51.0, 55.5),
            (0.2, 54.0, 58.5),
            (0.4, 57.0, 60.5),
            (0.8, 59.0, 62.5),
        ]);
        let short = sweep(&[(0.1, 50.0, 55.0)]);
        let rows = vec![
            ("a".to_string(), Some(&a), false),
            ("b".to_string(), Some(&b), false),
            ("short".to_string(), Some(&short), false),
            ("missing".to_string(), None, false),
        ];
        let m = bd_matrix(&rows, Metric::D1);
        assert_eq!(m.values[0][0], Some(0.0));
        assert_eq!(m.values[1][1], Some(0.0));
        assert!((m.values[1][0].unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(m.values[2][0], None);
        assert_eq!(m.values[3][3], None);
        assert!(m.to_csv().contains("n/a"));
        let dropped = bd_matrix(&[("a".to_string(), Some(&a), true)], Metric::D1);
        assert_eq!(dropped.values[0][0], None);
    }
}
