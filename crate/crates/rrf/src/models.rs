//! JSON records for fitted models, combiners and verification reports.

use std::collections::BTreeMap;

use rrf_core::fusion::SourceStats;
use rrf_core::protocol::FoldResult;
use rrf_core::{CombineMethod, FusionModel, ScoreCombiner, VerificationReport};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

pub fn parse_fingerprint(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16)
        .map_err(|_| Error::Usage(format!("bad layout fingerprint {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionRecord {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub reg: f64,
    pub iterations: usize,
    /// `null` for models that were not fitted.
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl From<&FusionModel> for FusionRecord {
    fn from(m: &FusionModel) -> Self {
        Self {
            weights: m.weights.clone(),
            bias: m.bias,
            reg: m.reg,
            iterations: m.iterations,
            loss: m.loss.is_finite().then_some(m.loss),
            grad_norm: m.grad_norm.is_finite().then_some(m.grad_norm),
            converged: m.converged,
            seed: m.seed,
        }
    }
}

impl FusionRecord {
    pub fn to_model(&self) -> Result<FusionModel> {
        let model = FusionModel {
            weights: self.weights.clone(),
            bias: self.bias,
            reg: self.reg,
            iterations: self.iterations,
            loss: self.loss.unwrap_or(f64::NAN),
            grad_norm: self.grad_norm.unwrap_or(f64::NAN),
            converged: self.converged,
            seed: self.seed,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Output of `fit`: per-position weights tied to one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub config: serde_json::Value,
    pub layout_fingerprint: String,
    pub tie_mirror: bool,
    /// Genuine/impostor counts of the training pairs.
    pub train_pairs: [usize; 2],
    pub model: FusionRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsRecord {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinerRecord {
    pub method: String,
    pub sources: Vec<String>,
    pub stats: Vec<StatsRecord>,
    pub model: Option<FusionRecord>,
}

pub fn parse_method(s: &str) -> Result<CombineMethod> {
    match s {
        "mean_zscore" => Ok(CombineMethod::MeanZscore),
        "learned_logistic" => Ok(CombineMethod::LearnedLogistic),
        other => Err(Error::Usage(format!("unknown combination method {other:?}"))),
    }
}

impl CombinerRecord {
    pub fn new(combiner: &ScoreCombiner, sources: Vec<String>) -> Self {
        Self {
            method: combiner.method().as_str().to_string(),
            sources,
            stats: combiner
                .stats()
                .unwrap_or(&[])
                .iter()
                .map(|s| StatsRecord { mean: s.mean, std: s.std })
                .collect(),
            model: combiner.model().map(FusionRecord::from),
        }
    }

    pub fn to_combiner(&self) -> Result<ScoreCombiner> {
        let stats = self
            .stats
            .iter()
            .map(|s| SourceStats { mean: s.mean, std: s.std })
            .collect();
        let model = self.model.as_ref().map(FusionRecord::to_model).transpose()?;
        Ok(ScoreCombiner::from_parts(parse_method(&self.method)?, stats, model)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: u32,
    /// `null` when the threshold is infinite.
    pub threshold: Option<f64>,
    pub accuracy: f64,
    pub pairs: usize,
}

impl From<&FoldResult> for FoldRecord {
    fn from(f: &FoldResult) -> Self {
        Self {
            fold: f.fold,
            threshold: f.threshold.is_finite().then_some(f.threshold),
            accuracy: f.accuracy,
            pairs: f.pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub metadata: BTreeMap<String, String>,
    pub folds: Vec<FoldRecord>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub skipped: Vec<u32>,
    pub warnings: Vec<String>,
    /// Area under the ROC curve over all pairs, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
}

impl ReportRecord {
    pub fn new(report: &VerificationReport, auc: Option<f64>) -> Self {
        Self {
            metadata: report.metadata.clone(),
            folds: report.folds.iter().map(FoldRecord::from).collect(),
            mean_accuracy: report.mean_accuracy,
            std_accuracy: report.std_accuracy,
            skipped: report.skipped.clone(),
            warnings: report.warnings.clone(),
            auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: serde_json::Value,
    pub pairs: usize,
    pub folds: u32,
    pub reports: Vec<ReportRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub combiner: Option<CombinerRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_record_round_trip() {
        let m = FusionModel::from_weights(vec![0.25, -1.5], 0.125);
        let rec = FusionRecord::from(&m);
        let text = serde_json::to_string(&rec).unwrap();
        let back: FusionRecord = serde_json::from_str(&text).unwrap();
        let restored = back.to_model().unwrap();
        assert_eq!((restored.weights, restored.bias), (m.weights, m.bias));
        assert!(restored.loss.is_nan());
    }

    #[test]
    fn combiner_record_round_trip() {
        let mut c = ScoreCombiner::new(CombineMethod::LearnedLogistic, 2);
        let cal = [0.1, 0.9, 0.4, 0.2, 0.8, 0.7, 0.3, 0.1];
        c.fit(&cal, Some(&[true, false, true, false]), 1e-2, 3).unwrap();
        let rec = CombinerRecord::new(&c, vec!["a".into(), "b".into()]);
        let text = serde_json::to_string(&rec).unwrap();
        let back: CombinerRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_combiner().unwrap(), c);
    }

    #[test]
    fn fingerprint_hex_round_trip() {
        let fp = 0x00ab_cdef_0123_4567;
        assert_eq!(fingerprint_hex(fp), "00abcdef01234567");
        assert_eq!(parse_fingerprint(&fingerprint_hex(fp)).unwrap(), fp);
    }
}
