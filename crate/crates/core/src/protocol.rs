//! k-fold verification protocol: per-fold threshold selection on the
//! complementary folds and accuracy on the held-out fold.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fusion::{combine_scores, fused_score, FusionModel, ScoreCombiner};
use crate::metric::{local_similarities, rrfnet_similarity_decomposed, EmbeddingSet};

pub const DEFAULT_FOLDS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEntry {
    pub id_a: String,
    pub id_b: String,
    pub genuine: bool,
    pub fold: u32,
}

/// Labelled image pairs split into folds `0..folds`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairList {
    entries: Vec<PairEntry>,
    folds: u32,
}

impl PairList {
    /// Validates that there are at least two folds and none is empty. The
    /// fold count is one past the largest fold index.
    pub fn new(entries: Vec<PairEntry>) -> Result<Self> {
        let folds = entries
            .iter()
            .map(|e| e.fold + 1)
            .max()
            .ok_or_else(|| Error::Domain("pair list is empty".into()))?;
        if folds < 2 {
            return Err(Error::Domain("pair list needs at least two folds".into()));
        }
        let mut seen = alloc::vec![false; folds as usize];
        for e in &entries {
            seen[e.fold as usize] = true;
        }
        if let Some(f) = seen.iter().position(|s| !s) {
            return Err(Error::Domain(format!("fold {f} has no pairs")));
        }
        Ok(Self { entries, folds })
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn folds(&self) -> u32 {
        self.folds
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.genuine).collect()
    }
}

/// A pair is accepted as genuine when its score is strictly above the
/// threshold.
pub fn classify(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Accuracy-maximizing threshold. Candidates are the midpoints between
/// consecutive distinct scores plus `-inf` (accept all) and `+inf`
/// (reject all). Ties go to the smallest threshold.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Incompatible(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels(
            "threshold selection needs both genuine and impostor pairs".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // threshold -inf: everything accepted
    let mut correct = positives;
    let mut best = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < n {
        let v = scores[order[i]];
        // move the whole tie group below the threshold
        while i < n && scores[order[i]] == v {
            if labels[order[i]] {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        let t = if i < n {
            let next = scores[order[i]];
            v + (next - v) / 2.0
        } else {
            f64::INFINITY
        };
        if correct > best.1 {
            best = (t, correct);
        }
    }
    Ok((best.0, best.1 as f64 / n as f64))
}

/// Accuracy of a fixed threshold.
pub fn accuracy_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| classify(s, threshold) == l)
        .count();
    hits as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: u32,
    pub threshold: f64,
    pub accuracy: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    pub skipped: Vec<u32>,
    pub warnings: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl VerificationReport {
    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Runs the protocol over precomputed scores aligned with `pairs`.
pub fn cross_validate_scores(pairs: &PairList, scores: &[f64]) -> Result<VerificationReport> {
    if scores.len() != pairs.len() {
        return Err(Error::Incompatible(format!(
            "{} scores for {} pairs",
            scores.len(),
            pairs.len()
        )));
    }
    let mut report = VerificationReport::default();
    let mut train_s = Vec::with_capacity(pairs.len());
    let mut train_l = Vec::with_capacity(pairs.len());
    let mut test_s = Vec::new();
    let mut test_l = Vec::new();
    for fold in 0..pairs.folds() {
        train_s.clear();
        train_l.clear();
        test_s.clear();
        test_l.clear();
        for (e, &s) in pairs.entries().iter().zip(scores) {
            if e.fold == fold {
                test_s.push(s);
                test_l.push(e.genuine);
            } else {
                train_s.push(s);
                train_l.push(e.genuine);
            }
        }
        let single_class = |l: &[bool]| l.iter().all(|&x| x) || l.iter().all(|&x| !x);
        if single_class(&test_l) {
            report.skipped.push(fold);
            report
                .warnings
                .push(format!("fold {fold} skipped: held-out pairs contain one class"));
            continue;
        }
        if single_class(&train_l) {
            report.skipped.push(fold);
            report
                .warnings
                .push(format!("fold {fold} skipped: training folds contain one class"));
            continue;
        }
        let (threshold, _) = best_threshold(&train_s, &train_l)?;
        report.folds.push(FoldResult {
            fold,
            threshold,
            accuracy: accuracy_at(&test_s, &test_l, threshold),
            pairs: test_s.len(),
        });
    }
    if report.folds.is_empty() {
        return Err(Error::DegenerateLabels("every fold was skipped".into()));
    }
    let acc: Vec<f64> = report.folds.iter().map(|f| f.accuracy).collect();
    (report.mean_accuracy, report.std_accuracy) = mean_std(&acc);
    Ok(report)
}

/// Scores every pair with `scorer`, then runs the protocol.
pub fn cross_validate<F>(pairs: &PairList, mut scorer: F) -> Result<VerificationReport>
where
    F: FnMut(&PairEntry) -> Result<f64>,
{
    let scores = pairs
        .entries()
        .iter()
        .map(&mut scorer)
        .collect::<Result<Vec<f64>>>()?;
    cross_validate_scores(pairs, &scores)
}

/// Lookup of embeddings by image id for one configuration.
pub trait EmbeddingStore {
    fn embedding(&self, image_id: &str) -> Option<&EmbeddingSet>;
}

impl EmbeddingStore for BTreeMap<String, EmbeddingSet> {
    fn embedding(&self, image_id: &str) -> Option<&EmbeddingSet> {
        self.get(image_id)
    }
}

/// How a configuration turns two embedding sets into a score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRule {
    /// Fusion-model logit over corresponding-patch cosines.
    RegionBased(FusionModel),
    /// Cosine of mean embeddings via the patch-pair expansion.
    Rrfnet,
}

impl ScoreRule {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreRule::RegionBased(_) => "region_based",
            ScoreRule::Rrfnet => "rrfnet",
        }
    }

    pub fn score(&self, a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
        match self {
            ScoreRule::RegionBased(model) => fused_score(model, &local_similarities(a, b)?),
            ScoreRule::Rrfnet => Ok(rrfnet_similarity_decomposed(a, b)?.global_score()),
        }
    }
}

/// One receptive-field configuration: an embedding store and a score rule.
pub struct Configuration<'a> {
    pub name: String,
    pub store: &'a dyn EmbeddingStore,
    pub rule: ScoreRule,
}

/// Every id in `pairs` absent from `store`, deduplicated, in first-seen order.
pub fn missing_ids(store: &dyn EmbeddingStore, pairs: &PairList) -> Vec<String> {
    let mut missing: Vec<String> = Vec::new();
    for e in pairs.entries() {
        for id in [&e.id_a, &e.id_b] {
            if store.embedding(id).is_none() && !missing.iter().any(|m| m == id) {
                missing.push(id.clone());
            }
        }
    }
    missing
}

/// Score of a single pair under one configuration.
pub fn score_pair(config: &Configuration<'_>, pair: &PairEntry) -> Result<f64> {
    let get = |id: &str| {
        config
            .store
            .embedding(id)
            .ok_or_else(|| Error::MissingEmbeddings(alloc::vec![String::from(id)]))
    };
    config.rule.score(get(&pair.id_a)?, get(&pair.id_b)?)
}

/// Scores of all pairs under one configuration, in pair order.
pub fn configuration_scores(config: &Configuration<'_>, pairs: &PairList) -> Result<Vec<f64>> {
    let missing = missing_ids(config.store, pairs);
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    pairs.entries().iter().map(|p| score_pair(config, p)).collect()
}

/// Per-pair combined scores from per-configuration score columns.
pub fn combined_scores(combiner: &ScoreCombiner, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Incompatible("score columns differ in length".into()));
    }
    let mut row = Vec::with_capacity(columns.len());
    (0..n)
        .map(|i| {
            row.clear();
            row.extend(columns.iter().map(|c| c[i]));
            combine_scores(combiner, &row)
        })
        .collect()
}

/// Builds one report per configuration, plus a combined report when a
/// fitted combiner is given, from already computed score columns.
pub fn reports_from_scores(
    pairs: &PairList,
    configs: &[(&str, &str)],
    columns: &[Vec<f64>],
    combiner: Option<&ScoreCombiner>,
) -> Result<Vec<VerificationReport>> {
    let mut reports = Vec::with_capacity(configs.len() + 1);
    for ((name, rule), scores) in configs.iter().zip(columns) {
        reports.push(
            cross_validate_scores(pairs, scores)?
                .with_meta("configuration", *name)
                .with_meta("mode", *rule),
        );
    }
    if let Some(c) = combiner {
        let scores = combined_scores(c, columns)?;
        let names: Vec<&str> = configs.iter().map(|(n, _)| *n).collect();
        reports.push(
            cross_validate_scores(pairs, &scores)?
                .with_meta("configuration", names.join("+"))
                .with_meta("mode", "combined")
                .with_meta("combiner", c.method().as_str()),
        );
    }
    Ok(reports)
}

/// Wires scoring, optional score combination and the protocol together.
pub fn evaluate_configuration(
    pairs: &PairList,
    configs: &[Configuration<'_>],
    combiner: Option<&ScoreCombiner>,
) -> Result<Vec<VerificationReport>> {
    let mut missing = Vec::new();
    for c in configs {
        for id in missing_ids(c.store, pairs) {
            if !missing.contains(&id) {
                missing.push(id);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let columns = configs
        .iter()
        .map(|c| configuration_scores(c, pairs))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<(&str, &str)> = configs.iter().map(|c| (c.name.as_str(), c.rule.name())).collect();
    reports_from_scores(pairs, &names, &columns, combiner)
}
