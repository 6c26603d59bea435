//! Configuration files and dataset sources.

use std::fs;
use std::path::{Path, PathBuf};

use milc_core::data::{
    generate_feature_bags, generate_mnist_bags, load_mnist, read_bagpack, FeatureBagConfig,
};
use milc_core::experiment::ExperimentConfig;
use milc_core::{BagDataset, BagGenConfig, Pooling, RngStream, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Where one split comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A BagPack directory written by `milc generate`.
    Bagpack { path: PathBuf },
    /// Bags drawn from an MNIST IDX set (`train` or `t10k`) in `dir`.
    Mnist {
        dir: PathBuf,
        set: String,
        bags: BagGenConfig,
    },
    /// Gaussian feature bags.
    Features {
        bags: BagGenConfig,
        features: FeatureBagConfig,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: DataSource,
    pub validation: DataSource,
    pub test: DataSource,
}

impl DataSection {
    pub fn get(&self, split: Split) -> &DataSource {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut DataSource {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// The JSON document accepted by `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Seed of the dataset generators.
    #[serde(default)]
    pub data_seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    /// Poolings trained by `milc train`; defaults to `experiment.pooling`.
    #[serde(default)]
    pub poolings: Option<Vec<Pooling>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    /// Reads `path` and resolves every relative path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for split in Split::ALL {
            match self.data.get_mut(split) {
                DataSource::Bagpack { path } => fix(path),
                DataSource::Mnist { dir, .. } => fix(dir),
                DataSource::Features { .. } => {}
            }
        }
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    pub fn poolings(&self) -> Vec<Pooling> {
        match (&self.poolings, &self.experiment) {
            (Some(p), _) => p.clone(),
            (None, Some(e)) => vec![e.pooling],
            (None, None) => Vec::new(),
        }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn provenance_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration is serialisable");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn mnist_file(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Loads (or generates) one split. Generated splits draw from
/// `RngStream::new(data_seed).derive(split, 0)`.
pub fn load_split(
    source: &DataSource,
    split: Split,
    data_seed: u64,
) -> Result<BagDataset, CliError> {
    let mut rng = RngStream::new(data_seed).derive(split.name(), 0);
    let ds = match source {
        DataSource::Bagpack { path } => read_bagpack(path, split)?,
        DataSource::Mnist { dir, set, bags } => {
            if set != "train" && set != "t10k" {
                return Err(CliError::Config(format!(
                    "MNIST set must be \"train\" or \"t10k\", got {set:?}"
                )));
            }
            let images = mnist_file(dir, &format!("{set}-images-idx3-ubyte"));
            let labels = mnist_file(dir, &format!("{set}-labels-idx1-ubyte"));
            let (x, y) = load_mnist(&images, &labels)?;
            generate_mnist_bags(&x, &y, bags, split, &mut rng)?
        }
        DataSource::Features { bags, features } => {
            generate_feature_bags(bags, features, split, &mut rng)?
        }
    };
    Ok(ds)
}

/// Named dataset presets for `milc generate --preset`.
pub fn preset(
    name: &str,
    n_train: Option<usize>,
    mnist_dir: &Path,
) -> Result<DataSection, CliError> {
    let mnist = |set: &str, bags: BagGenConfig| DataSource::Mnist {
        dir: mnist_dir.to_path_buf(),
        set: set.into(),
        bags,
    };
    match name {
        // Low-evidence protocol: validation and test of 1000 bags each.
        "mnist-1pct" => Ok(DataSection {
            train: mnist("train", BagGenConfig::one_percent(n_train.unwrap_or(300))),
            validation: mnist("train", BagGenConfig::one_percent(1000)),
            test: mnist("t10k", BagGenConfig::one_percent(1000)),
        }),
        "mnist-easy" => {
            let easy = |n| BagGenConfig {
                n_bags: n,
                bag_size: 10,
                positives_per_positive_bag: 1,
                positive_fraction: 0.5,
                positive_digit: 9,
            };
            Ok(DataSection {
                train: mnist("train", easy(n_train.unwrap_or(200))),
                validation: mnist("train", easy(200)),
                test: mnist("t10k", easy(500)),
            })
        }
        "features" => {
            let bags = |n| BagGenConfig {
                n_bags: n,
                bag_size: 200,
                positives_per_positive_bag: 10,
                positive_fraction: 0.5,
                positive_digit: 9,
            };
            let features = FeatureBagConfig {
                dim: 2048,
                separation: 5.0,
                direction_seed: 0,
            };
            let f = |n| DataSource::Features {
                bags: bags(n),
                features: features.clone(),
            };
            Ok(DataSection {
                train: f(n_train.unwrap_or(100)),
                validation: f(50),
                test: f(100),
            })
        }
        other => Err(CliError::Config(format!(
            "unknown preset {other:?} (expected mnist-1pct, mnist-easy or features)"
        ))),
    }
}
