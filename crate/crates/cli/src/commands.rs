use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use milc_core::data::{read_bagpack, write_bagpack};
use milc_core::experiment::{evaluate, export_rankings, run_sweep, ExperimentReport};
use milc_core::metrics::topk_mean;
use milc_core::nn::{load_checkpoint, write_checkpoint};
use milc_core::pooling::McSettings;
use milc_core::{ExperimentConfig, Split};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{load_split, preset, provenance_hash, ConfigFile, DataSection};
use crate::output::{fmt_opt, Csv, Staging};
use crate::{CliError, EvalArgs, GenerateArgs, TrainArgs};

pub const RUNS_HEADER: [&str; 6] = [
    "seed",
    "best_epoch",
    "val_auc",
    "test_bag_auc",
    "test_instance_auc",
    "status",
];
pub const TIMINGS_HEADER: [&str; 3] = ["seed", "epochs_completed", "wall_s"];
pub const SCORES_HEADER: [&str; 4] = ["bag_id", "label", "z", "selected_index"];
pub const RANKINGS_HEADER: [&str; 5] = ["bag_id", "rank", "instance_index", "h", "instance_label"];

fn out_dir(flag: &Option<PathBuf>, cfg: Option<&ConfigFile>) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set out_dir".into()))
}

pub fn generate(args: &GenerateArgs) -> Result<PathBuf, CliError> {
    let cfg = args.config.as_deref().map(ConfigFile::load).transpose()?;
    let data: DataSection = match (&cfg, &args.preset) {
        (Some(c), _) => c.data.clone(),
        (None, Some(p)) => preset(p, args.n_train, &args.mnist_dir)?,
        (None, None) => return Err(CliError::Config("pass --config or --preset".into())),
    };
    let seed = args.seed.or(cfg.as_ref().map(|c| c.data_seed)).unwrap_or(0);
    let out = out_dir(&args.out, cfg.as_ref())?;
    let resolved = json!({ "data_seed": seed, "data": data });
    let hash = provenance_hash(&resolved);

    let stage = Staging::new(&out)?;
    for split in Split::ALL {
        let ds = load_split(data.get(split), split, seed)?;
        info!("{split}: {} bags, {} positive", ds.len(), ds.positives());
        write_bagpack(&ds, &stage.path(split.name())?)?;
    }
    stage.write_json(
        "provenance.json",
        &json!({ "command": "generate", "config_hash": hash, "config": resolved }),
    )?;
    stage.commit()
}

fn runs_csv(report: &ExperimentReport) -> Vec<u8> {
    let mut csv = Csv::new(&RUNS_HEADER);
    for r in &report.runs {
        let status = match &r.failure {
            Some(f) => format!("failed@{}", f.epoch),
            None => "ok".into(),
        };
        csv.row(&[
            r.seed.to_string(),
            fmt_opt(r.best_epoch),
            fmt_opt(r.best_val_auc),
            fmt_opt(r.test_bag_auc),
            fmt_opt(r.test_instance_auc),
            status,
        ]);
    }
    csv.into_bytes()
}

fn timings_csv(report: &ExperimentReport) -> Vec<u8> {
    let mut csv = Csv::new(&TIMINGS_HEADER);
    for r in &report.runs {
        csv.row(&[
            r.seed.to_string(),
            r.epoch_losses.len().to_string(),
            format!("{:.3}", r.wall_s),
        ]);
    }
    csv.into_bytes()
}

fn summary_entry(report: &ExperimentReport) -> serde_json::Value {
    let h = &report.headline;
    let tests: Vec<f64> = report.runs.iter().filter_map(|r| r.test_bag_auc).collect();
    let by_test = topk_mean(&tests, h.top_k.min(tests.len())).ok();
    let failed: Vec<u64> = report
        .runs
        .iter()
        .filter(|r| !r.succeeded())
        .map(|r| r.seed)
        .collect();
    json!({
        "pooling": report.pooling,
        "top_k": h.top_k,
        "selected_seeds": h.selected_seeds,
        "bag_auc_mean": h.bag_auc_mean,
        "bag_auc_std": h.bag_auc_std,
        "instance_auc_mean": h.instance_auc_mean,
        "instance_auc_std": h.instance_auc_std,
        "bag_auc_topk_by_test": by_test,
        "failed_seeds": failed,
    })
}

pub fn train(args: &TrainArgs) -> Result<PathBuf, CliError> {
    let mut cfg = ConfigFile::load(&args.config)?;
    let Some(base) = cfg.experiment.clone() else {
        return Err(CliError::Config("config has no experiment section".into()));
    };
    if let Some(p) = &args.pooling {
        cfg.poolings = Some(p.0.clone());
    }
    let mut experiments: Vec<ExperimentConfig> = Vec::new();
    for pooling in cfg.poolings() {
        let mut e = base.clone();
        e.pooling = pooling;
        if let Some(t) = args.mc_passes {
            e.mc_passes = t;
        }
        if let Some(s) = args.seed {
            e.seeds = vec![s];
            e.top_k = 1;
        }
        e.validate()?;
        experiments.push(e);
    }
    if experiments.is_empty() {
        return Err(CliError::Config("no pooling selected".into()));
    }
    let out = out_dir(&args.out, Some(&cfg))?;
    let resolved =
        json!({ "data_seed": cfg.data_seed, "data": cfg.data, "experiments": experiments });
    let hash = provenance_hash(&resolved);

    let train = load_split(&cfg.data.train, Split::Train, cfg.data_seed)?;
    let val = load_split(&cfg.data.validation, Split::Validation, cfg.data_seed)?;
    let test = load_split(&cfg.data.test, Split::Test, cfg.data_seed)?;

    let stage = Staging::new(&out)?;
    let mut summary = Vec::new();
    for e in &experiments {
        info!("training {} over {} seeds", e.pooling, e.seeds.len());
        let report = run_sweep(e, &train, &val, &test, args.jobs)?;
        let dir = Path::new(e.pooling.name());
        stage.write(dir.join("runs.csv"), &runs_csv(&report))?;
        stage.write(dir.join("timings.csv"), &timings_csv(&report))?;
        for r in &report.runs {
            if let Some(m) = &r.best_model {
                let mut bytes = Vec::new();
                write_checkpoint(&mut bytes, m).map_err(|e| CliError::Io(e.to_string()))?;
                stage.write(
                    dir.join(format!("checkpoints/seed-{}.milc", r.seed)),
                    &bytes,
                )?;
            }
        }
        summary.push(summary_entry(&report));
    }
    stage.write_json(
        "summary.json",
        &json!({ "config_hash": hash, "poolings": summary }),
    )?;
    stage.write_json(
        "provenance.json",
        &json!({ "command": "train", "config_hash": hash, "config": resolved }),
    )?;
    stage.commit()
}

pub fn eval(args: &EvalArgs) -> Result<PathBuf, CliError> {
    let split: Split = args.split.parse()?;
    let mc = McSettings {
        passes: args.mc_passes,
        eps: milc_core::pooling::DEFAULT_CERTAINTY_EPS,
    };
    if args.pooling == milc_core::Pooling::Certainty && mc.passes < 2 {
        return Err(CliError::Config(format!(
            "certainty pooling needs --mc-passes >= 2, got {}",
            mc.passes
        )));
    }
    let ckpt_bytes = fs::read(&args.checkpoint)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.checkpoint.display())))?;
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = read_bagpack(&args.bagpack, split)?;
    if let Some(d) = ds.dim() {
        let want = model.spec().input_dim();
        if d != want {
            return Err(CliError::Config(format!(
                "BagPack instances are {d}-dimensional but the checkpoint expects {want}"
            )));
        }
    }
    let ev = evaluate(&model, &ds, args.pooling, mc, args.seed)?;
    let mut scores = Csv::new(&SCORES_HEADER);
    for s in &ev.scores {
        let bag = &ds.bags[s.bag_index];
        scores.row(&[
            bag.bag_id.clone(),
            bag.label.to_string(),
            s.z.to_string(),
            fmt_opt(s.selected_index),
        ]);
    }
    let mut rankings = Csv::new(&RANKINGS_HEADER);
    for r in export_rankings(&model, &ds, args.top)? {
        rankings.row(&[
            r.bag_id,
            r.rank.to_string(),
            r.instance_index.to_string(),
            r.h.to_string(),
            fmt_opt(r.instance_label),
        ]);
    }
    let ckpt_hash: String = Sha256::digest(&ckpt_bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let resolved = json!({
        "checkpoint_sha256": ckpt_hash,
        "bagpack": args.bagpack,
        "split": split,
        "pooling": args.pooling,
        "mc_passes": mc.passes,
        "seed": args.seed,
        "top": args.top,
    });
    let stage = Staging::new(&args.out)?;
    stage.write("scores.csv", &scores.into_bytes())?;
    stage.write("rankings.csv", &rankings.into_bytes())?;
    stage.write_json(
        "provenance.json",
        &json!({ "command": "eval", "config_hash": provenance_hash(&resolved), "config": resolved }),
    )?;
    stage.commit()
}
