//! ROC AUC and the evaluation protocols built on it.

use crate::{Error, Result};

/// Scores with 0/1 labels of equal length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn push(&mut self, score: f64, label: u8) {
        self.scores.push(score);
        self.labels.push(label);
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }

    /// True when both classes are present.
    pub fn is_evaluable(&self) -> bool {
        let (p, n) = self.class_counts();
        p > 0 && n > 0
    }
}

/// Area under the ROC curve in Mann–Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Uses average ranks, `O(n log n)`.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    if set.labels.len() != set.scores.len() {
        return Err(Error::Dimension(
            "scores and labels differ in length".into(),
        ));
    }
    if let Some(s) = set.scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s}")));
    }
    let (n_pos, n_neg) = set.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their average
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| set.labels[k] == 1).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Mean of per-bag instance AUCs over the bags that contain both instance
/// classes.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAuc {
    pub mean: f64,
    pub evaluated: usize,
    /// Bags without both instance classes.
    pub skipped: usize,
}

pub fn instance_auc_mean(per_bag: &[ScoredSet]) -> Result<InstanceAuc> {
    let mut total = 0.0;
    let mut evaluated = 0;
    for set in per_bag {
        if set.is_evaluable() {
            total += roc_auc(set)?;
            evaluated += 1;
        }
    }
    let skipped = per_bag.len() - evaluated;
    if evaluated == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no bag has both instance classes ({skipped} skipped)"
        )));
    }
    Ok(InstanceAuc {
        mean: total / evaluated as f64,
        evaluated,
        skipped,
    })
}

/// Mean of the `k` largest values.
pub fn topk_mean(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(Error::Parameter(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}
