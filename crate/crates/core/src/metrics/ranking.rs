use crate::error::{Error, Result};
use crate::nn::Label;

fn check_rows(op: &'static str, probabilities: &[f64], classes: usize, n: usize) -> Result<()> {
    if classes == 0 || probabilities.len() != n * classes {
        return Err(Error::shape(op, format!("{} scores for {n} samples x {classes} classes", probabilities.len())));
    }
    Ok(())
}

/// Class ids of `row` ordered by descending score, ties by lowest id.
pub fn ranked_classes(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

/// Fraction of samples with a ground-truth class among the `k` best-scored classes.
pub fn topk_accuracy(probabilities: &[f64], classes: usize, labels: &[Label], k: usize) -> Result<f64> {
    check_rows("topk_accuracy", probabilities, classes, labels.len())?;
    if k == 0 || k > classes {
        return Err(Error::Config(format!("k = {k} must lie in 1..={classes}")));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(n, label)| {
            let top = ranked_classes(&probabilities[n * classes..(n + 1) * classes]);
            top[..k].iter().any(|&c| label.contains(c))
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Samples ordered by descending score, ties by lowest index.
fn ranked_samples(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Mean of the precision at the rank of each positive.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape("average_precision", format!("{} scores, {} labels", scores.len(), positives.len())));
    }
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(Error::Data("average precision needs at least one positive".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranked_samples(scores).iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Rank-based ROC AUC (Mann-Whitney U); tied scores count one half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape("roc_auc", format!("{} scores, {} labels", scores.len(), positives.len())));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUC needs at least one positive and one negative".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| positives[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Per-class metric over a score matrix; classes where it is undefined are `None`.
pub fn per_class<F>(scores: &[f64], classes: usize, labels: &[Label], metric: F) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    check_rows("per_class", scores, classes, labels.len())?;
    (0..classes)
        .map(|c| {
            let col: Vec<f64> = (0..labels.len()).map(|n| scores[n * classes + c]).collect();
            let pos: Vec<bool> = labels.iter().map(|l| l.contains(c)).collect();
            match metric(&col, &pos) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Data(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Mean over the defined entries.
pub fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}
