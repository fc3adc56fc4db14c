//! Parallel pair scoring. Each pair is scored independently, so results
//! do not depend on the number of worker threads.

use rayon::prelude::*;
use rrf_core::metric::local_similarities;
use rrf_core::protocol::{missing_ids, EmbeddingStore, ScoreRule};
use rrf_core::{EmbeddingSet, MirrorMap, PairEntry, PairList};

use crate::error::{Error, Result};

/// Runs `f` on a pool of `jobs` threads (0 picks the rayon default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn lookup<'a, S>(store: &'a S, pair: &PairEntry) -> (&'a EmbeddingSet, &'a EmbeddingSet)
where
    S: EmbeddingStore + ?Sized,
{
    // Presence is checked up front by `require_all`.
    (
        store.embedding(&pair.id_a).expect("checked"),
        store.embedding(&pair.id_b).expect("checked"),
    )
}

fn require_all<S: EmbeddingStore + Sync>(store: &S, pairs: &PairList) -> Result<()> {
    let missing = missing_ids(store, pairs);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(rrf_core::Error::MissingEmbeddings(missing).into())
    }
}

/// Scores of every pair, in pair order.
pub fn score_pairs<S: EmbeddingStore + Sync>(
    pairs: &PairList,
    store: &S,
    rule: &ScoreRule,
) -> Result<Vec<f64>> {
    require_all(store, pairs)?;
    let scores = pairs
        .entries()
        .par_iter()
        .map(|p| {
            let (a, b) = lookup(store, p);
            rule.score(a, b)
        })
        .collect::<rrf_core::Result<Vec<_>>>()?;
    Ok(scores)
}

/// `M x K` corresponding-patch cosines. With a mirror map the columns of
/// each mirror class are summed, giving `M x classes`.
pub fn local_features<S: EmbeddingStore + Sync>(
    pairs: &PairList,
    store: &S,
    tie: Option<&MirrorMap>,
) -> Result<(Vec<f64>, usize)> {
    require_all(store, pairs)?;
    let classes = tie.map(MirrorMap::classes);
    let rows = pairs
        .entries()
        .par_iter()
        .map(|p| {
            let (a, b) = lookup(store, p);
            let locals = local_similarities(a, b)?;
            Ok(match (&classes, tie) {
                (Some(ids), Some(m)) => {
                    let mut row = vec![0.0; m.class_count()];
                    for (l, &c) in locals.iter().zip(ids) {
                        row[c] += l;
                    }
                    row
                }
                _ => locals,
            })
        })
        .collect::<rrf_core::Result<Vec<_>>>()?;
    let width = rows.first().map_or(0, Vec::len);
    Ok((rows.concat(), width))
}

/// Area under the ROC curve with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // Mann-Whitney U from mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}
