use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::Serialize;

use super::eval::score_bag;
use super::ExperimentConfig;
use crate::autograd::{DropoutMode, Graph, Tensor};
use crate::data::{sample_instances, Bag, BagDataset};
use crate::metrics::{roc_auc, ScoredSet};
use crate::nn::{bce_loss, init_model, AdamState, ModelState};
use crate::pooling::pool_bag;
use crate::rng::RngStream;
use crate::{Error, Result};

/// Validation result at one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub bag_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFailure {
    pub epoch: usize,
    pub message: String,
}

/// Outcome of training one seed.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    /// Mean training loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub validations: Vec<Checkpoint>,
    /// Epoch of the retained checkpoint (earliest on ties).
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub best_model: Option<ModelState>,
    pub test_bag_auc: Option<f64>,
    pub test_instance_auc: Option<f64>,
    pub failure: Option<RunFailure>,
    pub wall_s: f64,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.best_model.is_some()
    }
}

fn check_splits(cfg: &ExperimentConfig, train: &BagDataset, val: &BagDataset) -> Result<()> {
    let d = cfg.model.input_dim();
    for ds in [train, val] {
        if let Some(dd) = ds.dim() {
            if dd != d {
                return Err(Error::Dimension(format!(
                    "{} split has {dd}-wide instances, model expects {d}",
                    ds.split.name()
                )));
            }
        }
    }
    if train.bags.iter().all(|b| b.is_empty()) {
        return Err(Error::Data("training split has no non-empty bags".into()));
    }
    let pos = val
        .bags
        .iter()
        .filter(|b| !b.is_empty() && b.label == 1)
        .count();
    let neg = val
        .bags
        .iter()
        .filter(|b| !b.is_empty() && b.label == 0)
        .count();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "validation split needs positive and negative bags".into(),
        ));
    }
    Ok(())
}

/// Bags actually used for validation: capped once, identically for every epoch.
fn validation_bags(cfg: &ExperimentConfig, val: &BagDataset, root: &RngStream) -> Vec<Bag> {
    val.bags
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(i, b)| match cfg.validation_instance_cap {
            Some(n) => sample_instances(b, n, &mut root.derive("val-cap", i as u64)),
            None => b.clone(),
        })
        .collect()
}

fn validation_auc(
    cfg: &ExperimentConfig,
    model: &ModelState,
    bags: &[Bag],
    root: &RngStream,
) -> Result<f64> {
    let mut set = ScoredSet::default();
    for (i, bag) in bags.iter().enumerate() {
        let (z, _, _) = score_bag(
            model,
            &bag.instances,
            cfg.pooling,
            cfg.mc(),
            &root.derive("val", i as u64),
        )?;
        set.push(z, bag.label);
    }
    roc_auc(&set)
}

/// One gradient step on one bag; returns the loss before the update.
fn train_step(
    cfg: &ExperimentConfig,
    model: &mut ModelState,
    adam: &mut AdamState,
    bag: &Bag,
    rng: &RngStream,
) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, vars) = {
        let bound = model.bind(&mut g, true);
        let x = g.constant(bag.instances.clone());
        let fwd = pool_bag(
            &mut g,
            &bound,
            x,
            cfg.pooling,
            DropoutMode::Train,
            cfg.mc(),
            rng,
        )?;
        let loss = bce_loss(&mut g, fwd.pool.z, bag.label)?;
        (loss, bound.vars().to_vec())
    };
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let grads = g.backward(loss)?;
    let refs: Vec<Option<&Tensor>> = vars.iter().map(|v| grads.get(*v)).collect();
    adam.step(model.params_mut(), &refs)?;
    Ok(value)
}

/// Trains one seed with per-bag Adam steps, validating on `val` and keeping
/// the checkpoint with the best validation bag AUC.
///
/// Configuration and data errors are returned as `Err`. Numerical divergence
/// is not an error: the run is marked failed with the epoch it happened in.
pub fn train_one(
    cfg: &ExperimentConfig,
    train: &BagDataset,
    val: &BagDataset,
    seed: u64,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_splits(cfg, train, val)?;
    let start = Instant::now();
    let root = RngStream::new(seed);
    let mut model = init_model(&cfg.model, &mut root.derive("init", 0))?;
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let val_bags = validation_bags(cfg, val, &root);
    let train_idx: Vec<usize> = (0..train.len())
        .filter(|&i| !train.bags[i].is_empty())
        .collect();

    let mut rec = RunRecord {
        seed,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        validations: Vec::new(),
        best_epoch: None,
        best_val_auc: None,
        best_model: None,
        test_bag_auc: None,
        test_instance_auc: None,
        failure: None,
        wall_s: 0.0,
    };

    'epochs: for epoch in 1..=cfg.epochs {
        let ep = epoch as u64;
        let mut order = train_idx.clone();
        order.shuffle(&mut root.derive("shuffle", ep));
        let mut sampler = root.derive("sample", ep);
        let step_root = root.derive("epoch", ep);
        let mut total = 0.0;
        for (step, &bi) in order.iter().enumerate() {
            let sampled;
            let bag = match cfg.bag_sample_n {
                Some(n) => {
                    sampled = sample_instances(&train.bags[bi], n, &mut sampler);
                    &sampled
                }
                None => &train.bags[bi],
            };
            match train_step(
                cfg,
                &mut model,
                &mut adam,
                bag,
                &step_root.derive("step", step as u64),
            ) {
                Ok(l) => total += l,
                Err(Error::Numeric(msg)) => {
                    warn!("seed {seed}: diverged in epoch {epoch}: {msg}");
                    rec.failure = Some(RunFailure {
                        epoch,
                        message: msg,
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mean_loss = total / order.len() as f64;
        rec.epoch_losses.push(mean_loss);
        debug!("seed {seed} epoch {epoch}: loss {mean_loss:.5}");

        if epoch % cfg.validation_every == 0 || epoch == cfg.epochs {
            let auc = match validation_auc(cfg, &model, &val_bags, &root.derive("validation", ep)) {
                Ok(a) => a,
                Err(Error::Numeric(msg)) => {
                    rec.failure = Some(RunFailure {
                        epoch,
                        message: msg,
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            rec.validations.push(Checkpoint {
                epoch,
                bag_auc: auc,
            });
            if rec.best_val_auc.is_none_or(|b| auc > b) {
                rec.best_val_auc = Some(auc);
                rec.best_epoch = Some(epoch);
                rec.best_model = Some(model.clone());
            }
        }
    }
    rec.wall_s = start.elapsed().as_secs_f64();
    match (&rec.failure, rec.best_val_auc) {
        (None, Some(auc)) => info!(
            "seed {seed}: best validation AUC {auc:.4} at epoch {}",
            rec.best_epoch.unwrap_or(0)
        ),
        (Some(f), _) => info!("seed {seed}: failed in epoch {}", f.epoch),
        _ => {}
    }
    Ok(rec)
}
