use std::cmp::Ordering;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::eval::evaluate;
use super::train::{train_one, RunRecord};
use super::{ExperimentConfig, InstanceAucMode};
use crate::data::BagDataset;
use crate::pooling::Pooling;
use crate::{Error, Result};

/// Mean and population standard deviation of the test metrics over the
/// `top_k` runs with the best validation AUC.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Headline {
    pub top_k: usize,
    pub selected_seeds: Vec<u64>,
    pub bag_auc_mean: f64,
    pub bag_auc_std: f64,
    pub instance_auc_mean: Option<f64>,
    pub instance_auc_std: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub pooling: Pooling,
    /// One record per configured seed, in configuration order.
    pub runs: Vec<RunRecord>,
    pub headline: Headline,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Ranks successful runs by validation AUC (ties keep configuration order)
/// and summarises the test metrics of the first `top_k`. Test metrics of the
/// other runs are never read.
pub fn headline(runs: &[RunRecord], top_k: usize) -> Result<Headline> {
    let mut ok: Vec<&RunRecord> = runs
        .iter()
        .filter(|r| r.succeeded() && r.best_val_auc.is_some())
        .collect();
    if ok.is_empty() {
        return Err(Error::AllRunsFailed(runs.len()));
    }
    ok.sort_by(|a, b| {
        b.best_val_auc
            .partial_cmp(&a.best_val_auc)
            .unwrap_or(Ordering::Equal)
    });
    ok.truncate(top_k);
    let bag: Vec<f64> = ok
        .iter()
        .map(|r| {
            r.test_bag_auc
                .ok_or_else(|| Error::Contract(format!("seed {} has no test bag AUC", r.seed)))
        })
        .collect::<Result<_>>()?;
    let (bag_auc_mean, bag_auc_std) = mean_std(&bag);
    let inst: Option<Vec<f64>> = ok.iter().map(|r| r.test_instance_auc).collect();
    let (instance_auc_mean, instance_auc_std) = match inst {
        Some(v) => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(Headline {
        top_k: ok.len(),
        selected_seeds: ok.iter().map(|r| r.seed).collect(),
        bag_auc_mean,
        bag_auc_std,
        instance_auc_mean,
        instance_auc_std,
    })
}

fn run_seed(
    cfg: &ExperimentConfig,
    train: &BagDataset,
    val: &BagDataset,
    test: &BagDataset,
    seed: u64,
) -> Result<RunRecord> {
    let mut rec = train_one(cfg, train, val, seed)?;
    if !rec.succeeded() {
        return Ok(rec);
    }
    let model = rec.best_model.as_ref().expect("checked by succeeded");
    let ev = evaluate(model, test, cfg.pooling, cfg.mc(), seed)?;
    rec.test_bag_auc = Some(ev.bag_auc()?);
    if !ev.instance_sets.is_empty() {
        rec.test_instance_auc = match cfg.instance_auc {
            InstanceAucMode::Pooled => ev.instance_auc_pooled().ok(),
            InstanceAucMode::PerBag => ev.instance_auc_per_bag(test).ok().map(|a| a.mean),
        };
    }
    Ok(rec)
}

/// Trains every configured seed, evaluates each best checkpoint on `test`
/// and summarises the top runs. `jobs` bounds the number of seeds trained
/// concurrently; results do not depend on it.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    train: &BagDataset,
    val: &BagDataset,
    test: &BagDataset,
    jobs: usize,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, train, val, test, s))
            .collect::<Result<_>>()
    })?;
    let headline = headline(&runs, cfg.top_k)?;
    info!(
        "{}: top-{} test bag AUC {:.4} ± {:.4}",
        cfg.pooling, headline.top_k, headline.bag_auc_mean, headline.bag_auc_std
    );
    Ok(ExperimentReport {
        pooling: cfg.pooling,
        runs,
        headline,
    })
}
