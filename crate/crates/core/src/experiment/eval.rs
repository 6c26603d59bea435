use std::cmp::Ordering;

use log::warn;

use crate::autograd::{DropoutMode, Graph, Tensor};
use crate::data::BagDataset;
use crate::metrics::{instance_auc_mean, roc_auc, InstanceAuc, ScoredSet};
use crate::nn::ModelState;
use crate::pooling::{pool_bag, McSettings, Pooling};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Evaluation-mode output for one bag.
#[derive(Clone, Debug, PartialEq)]
pub struct BagScore {
    pub bag_index: usize,
    pub z: f64,
    pub selected_index: Option<usize>,
    /// Inference-mode instance predictions.
    pub h: Vec<f64>,
}

/// Scores one bag: `h` from an inference pass, certainty (if pooled on it)
/// from Monte-Carlo passes seeded by `rng`.
pub fn score_bag(
    model: &ModelState,
    instances: &Tensor,
    pooling: Pooling,
    mc: McSettings,
    rng: &RngStream,
) -> Result<(f64, Option<usize>, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let x = g.constant(instances.clone());
    let fwd = pool_bag(&mut g, &bound, x, pooling, DropoutMode::Infer, mc, rng)?;
    let z = fwd.pool.value(&g);
    Ok((z, fwd.pool.selected_index, g.value(fwd.h).data().to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<BagScore>,
    /// Bag predictions against bag labels.
    pub bag_set: ScoredSet,
    /// Instance predictions of every bag that carries instance labels,
    /// keyed by bag index.
    pub instance_sets: Vec<(usize, ScoredSet)>,
    pub skipped_empty: usize,
}

impl Evaluation {
    pub fn bag_auc(&self) -> Result<f64> {
        roc_auc(&self.bag_set)
    }

    /// Per-bag instance AUC averaged over the positive bags.
    pub fn instance_auc_per_bag(&self, ds: &BagDataset) -> Result<InstanceAuc> {
        let sets: Vec<ScoredSet> = self
            .instance_sets
            .iter()
            .filter(|(i, _)| ds.bags[*i].label == 1)
            .map(|(_, s)| s.clone())
            .collect();
        instance_auc_mean(&sets)
    }

    /// One AUC over all labelled instances.
    pub fn instance_auc_pooled(&self) -> Result<f64> {
        let mut all = ScoredSet::default();
        for (_, s) in &self.instance_sets {
            all.scores.extend_from_slice(&s.scores);
            all.labels.extend_from_slice(&s.labels);
        }
        roc_auc(&all)
    }
}

/// Scores every bag of `ds` without instance sampling. Bag `i` draws its
/// Monte-Carlo masks from `RngStream::new(seed).derive("eval", i)`.
pub fn evaluate(
    model: &ModelState,
    ds: &BagDataset,
    pooling: Pooling,
    mc: McSettings,
    seed: u64,
) -> Result<Evaluation> {
    if let Some(d) = ds.dim() {
        if d != model.spec().input_dim() {
            return Err(Error::Dimension(format!(
                "dataset has {d}-wide instances, model expects {}",
                model.spec().input_dim()
            )));
        }
    }
    let root = RngStream::new(seed);
    let mut out = Evaluation {
        scores: Vec::with_capacity(ds.len()),
        bag_set: ScoredSet::default(),
        instance_sets: Vec::new(),
        skipped_empty: 0,
    };
    for (i, bag) in ds.bags.iter().enumerate() {
        if bag.is_empty() {
            out.skipped_empty += 1;
            continue;
        }
        let (z, selected_index, h) = score_bag(
            model,
            &bag.instances,
            pooling,
            mc,
            &root.derive("eval", i as u64),
        )?;
        out.bag_set.push(z, bag.label);
        if let Some(labels) = &bag.instance_labels {
            out.instance_sets
                .push((i, ScoredSet::new(h.clone(), labels.clone())?));
        }
        out.scores.push(BagScore {
            bag_index: i,
            z,
            selected_index,
            h,
        });
    }
    if out.skipped_empty > 0 {
        warn!("skipped {} empty bags", out.skipped_empty);
    }
    Ok(out)
}

/// One line of an instance ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingRow {
    pub bag_id: String,
    /// 1-based.
    pub rank: usize,
    pub instance_index: usize,
    pub h: f64,
    pub instance_label: Option<u8>,
}

/// Top `n_top` instances of every bag by inference-mode prediction,
/// descending (ties to the lower index).
pub fn export_rankings(
    model: &ModelState,
    ds: &BagDataset,
    n_top: usize,
) -> Result<Vec<RankingRow>> {
    let mut rows = Vec::new();
    for bag in ds.bags.iter().filter(|b| !b.is_empty()) {
        let h = model.predict(&bag.instances)?;
        let mut order: Vec<usize> = (0..h.len()).collect();
        order.sort_by(|&a, &b| match h[b].total_cmp(&h[a]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        for (rank, &k) in order.iter().take(n_top).enumerate() {
            rows.push(RankingRow {
                bag_id: bag.bag_id.clone(),
                rank: rank + 1,
                instance_index: k,
                h: h[k],
                instance_label: bag.instance_labels.as_ref().map(|l| l[k]),
            });
        }
    }
    Ok(rows)
}
