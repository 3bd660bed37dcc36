use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::FocalParams;
use crate::model::{ModelKind, TransformKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Thresholding {
    Fixed,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainingMode {
    Independent,
    Sequential,
}

/// One experimental condition: each of c2..c6 changes one factor of its
/// predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionPreset {
    pub name: &'static str,
    pub model_kind: ModelKind,
    pub transform_kind: TransformKind,
    pub alpha: f64,
    pub thresholding: Thresholding,
    pub training: TrainingMode,
}

const fn preset(
    name: &'static str,
    model_kind: ModelKind,
    transform_kind: TransformKind,
    alpha: f64,
    thresholding: Thresholding,
    training: TrainingMode,
) -> ConditionPreset {
    ConditionPreset {
        name,
        model_kind,
        transform_kind,
        alpha,
        thresholding,
        training,
    }
}

use ModelKind::{Baseline, Hyperprior};
use Thresholding::{Fixed, Optimal};
use TrainingMode::{Independent, Sequential};
use TransformKind::{V1, V2};

pub const PRESETS: [ConditionPreset; 6] = [
    preset("c1", Baseline, V1, 0.90, Fixed, Independent),
    preset("c2", Hyperprior, V1, 0.90, Fixed, Independent),
    preset("c3", Hyperprior, V2, 0.90, Fixed, Independent),
    preset("c4", Hyperprior, V2, 0.75, Fixed, Independent),
    preset("c5", Hyperprior, V2, 0.75, Optimal, Independent),
    preset("c6", Hyperprior, V2, 0.75, Optimal, Sequential),
];

impl ConditionPreset {
    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            gamma: 2.0,
        }
    }
}

impl fmt::Display for ConditionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl FromStr for ConditionPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown preset {s:?}, expected c1..c6")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_condition_changes_one_factor() {
        for w in PRESETS.windows(2) {
            let (a, b) = (w[0], w[1]);
            let changed = [
                a.model_kind != b.model_kind,
                a.transform_kind != b.transform_kind,
                a.alpha != b.alpha,
                a.thresholding != b.thresholding,
                a.training != b.training,
            ];
            assert_eq!(changed.iter().filter(|&&c| c).count(), 1, "{a} -> {b}");
        }
        assert_eq!("C6".parse::<ConditionPreset>().unwrap(), PRESETS[5]);
        assert!("c7".parse::<ConditionPreset>().is_err());
    }
}
