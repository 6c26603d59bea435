//! Bags of instances and where they come from.

mod bagpack;
mod generate;
mod idx;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::{Error, Result};

pub use bagpack::{read_bagpack, write_bagpack, ManifestEntry, MANIFEST_FILE};
pub use generate::{generate_feature_bags, generate_mnist_bags, FeatureBagConfig};
pub use idx::{load_mnist, read_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

/// One labelled set of instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    /// `K×d`, one instance per row.
    pub instances: Tensor,
    pub label: u8,
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    pub fn new(
        bag_id: impl Into<String>,
        instances: Tensor,
        label: u8,
        instance_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let bag = Self {
            bag_id: bag_id.into(),
            instances,
            label,
            instance_labels,
        };
        bag.validate()?;
        Ok(bag)
    }

    /// Checks shape, label values and the MIL labelling rule: a bag is
    /// positive exactly when at least one of its instances is.
    pub fn validate(&self) -> Result<()> {
        let id = &self.bag_id;
        if self.instances.ndim() != 2 || self.is_empty() {
            return Err(Error::Data(format!(
                "bag {id}: instances must be a non-empty K×d matrix, got {:?}",
                self.instances.shape()
            )));
        }
        if self.label > 1 {
            return Err(Error::Data(format!(
                "bag {id}: label {} is not 0/1",
                self.label
            )));
        }
        if let Some(labels) = &self.instance_labels {
            if labels.len() != self.len() {
                return Err(Error::Data(format!(
                    "bag {id}: {} instance labels for {} instances",
                    labels.len(),
                    self.len()
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Data(format!(
                    "bag {id}: instance labels must be 0/1"
                )));
            }
            let any_positive = labels.contains(&1);
            if any_positive != (self.label == 1) {
                return Err(Error::Data(format!(
                    "bag {id}: label {} disagrees with its instance labels",
                    self.label
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.instances.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagDataset {
    pub bags: Vec<Bag>,
    pub split: Split,
    /// Generator configuration and seed, when known.
    pub provenance: serde_json::Value,
}

impl BagDataset {
    pub fn new(bags: Vec<Bag>, split: Split, provenance: serde_json::Value) -> Result<Self> {
        let ds = Self {
            bags,
            split,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let dim = self.bags.first().map(Bag::dim);
        for bag in &self.bags {
            bag.validate()?;
            if !seen.insert(bag.bag_id.as_str()) {
                return Err(Error::Data(format!("duplicate bag id {}", bag.bag_id)));
            }
            if Some(bag.dim()) != dim {
                return Err(Error::Data(format!(
                    "bag {} has dimension {}, expected {}",
                    bag.bag_id,
                    bag.dim(),
                    dim.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Instance width, `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.bags.first().map(Bag::dim)
    }

    pub fn positives(&self) -> usize {
        self.bags.iter().filter(|b| b.label == 1).count()
    }
}

/// Shape of a generated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagGenConfig {
    pub n_bags: usize,
    pub bag_size: usize,
    pub positives_per_positive_bag: usize,
    pub positive_fraction: f64,
    /// MNIST digit that makes an instance positive.
    #[serde(default = "default_positive_digit")]
    pub positive_digit: u8,
}

fn default_positive_digit() -> u8 {
    9
}

impl BagGenConfig {
    /// Low-evidence MNIST split: 100 instances, a single positive per
    /// positive bag, half the bags positive.
    pub fn one_percent(n_bags: usize) -> Self {
        Self {
            n_bags,
            bag_size: 100,
            positives_per_positive_bag: 1,
            positive_fraction: 0.5,
            positive_digit: 9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bag_size == 0 {
            return Err(Error::Config("bag_size must be at least 1".into()));
        }
        if self.positives_per_positive_bag > self.bag_size {
            return Err(Error::Config(format!(
                "positives_per_positive_bag {} exceeds bag_size {}",
                self.positives_per_positive_bag, self.bag_size
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config(format!(
                "positive_fraction must lie in [0, 1], got {}",
                self.positive_fraction
            )));
        }
        if self.positive_bags() > 0 && self.positives_per_positive_bag == 0 {
            return Err(Error::Config(
                "positive bags need at least one positive instance".into(),
            ));
        }
        if self.positive_digit > 9 {
            return Err(Error::Config(format!(
                "positive_digit {} is not a digit",
                self.positive_digit
            )));
        }
        Ok(())
    }

    pub fn positive_bags(&self) -> usize {
        (self.n_bags as f64 * self.positive_fraction).round() as usize
    }

    /// Fraction of a positive bag's instances that are positive.
    pub fn evidence_ratio(&self) -> f64 {
        self.positives_per_positive_bag as f64 / self.bag_size as f64
    }
}

/// Keeps a uniform random subset of `n` instances (without replacement) when
/// the bag is larger than `n`; otherwise returns the bag unchanged. Row order
/// is preserved.
pub fn sample_instances<R: Rng + ?Sized>(bag: &Bag, n: usize, rng: &mut R) -> Bag {
    let k = bag.len();
    if n == 0 || k <= n {
        return bag.clone();
    }
    let mut rows = index::sample(rng, k, n).into_vec();
    rows.sort_unstable();
    Bag {
        bag_id: bag.bag_id.clone(),
        instances: bag.instances.select_rows(&rows),
        label: bag.label,
        instance_labels: bag
            .instance_labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn bag(k: usize) -> Bag {
        let data = (0..k * 2).map(|v| v as f64).collect();
        let mut labels = vec![0; k];
        labels[k / 2] = 1;
        Bag::new("b", Tensor::matrix(k, 2, data).unwrap(), 1, Some(labels)).unwrap()
    }

    #[test]
    fn mil_rule_enforced() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(Bag::new("a", x.clone(), 0, Some(vec![0, 1])).is_err());
        assert!(Bag::new("a", x.clone(), 1, Some(vec![0, 0])).is_err());
        assert!(Bag::new("a", x.clone(), 1, Some(vec![1, 0])).is_ok());
        assert!(Bag::new("a", x, 0, None).is_ok());
        assert!(Bag::new("a", Tensor::zeros(&[0, 3]), 0, None).is_err());
    }

    #[test]
    fn small_bag_kept_whole() {
        let b = bag(100);
        let s = sample_instances(&b, 128, &mut RngStream::new(1));
        assert_eq!(s, b);
    }

    #[test]
    fn large_bag_subsampled() {
        let b = bag(1000);
        let s = sample_instances(&b, 128, &mut RngStream::new(1));
        assert_eq!(s.len(), 128);
        assert_eq!(s.label, 1);
        // every sampled row exists in the original (row r is [2r, 2r+1])
        for i in 0..s.len() {
            let r = s.instances.row(i);
            assert_eq!(r[1], r[0] + 1.0);
            assert!((r[0] as usize) & 1 == 0 && (r[0] as usize) < 2000);
        }
        let again = sample_instances(&b, 128, &mut RngStream::new(1));
        assert_eq!(s, again);
        let labels = s.instance_labels.unwrap();
        let carried = (0..128)
            .filter(|&i| s.instances.row(i)[0] as usize / 2 == 500)
            .count();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), carried);
    }

    #[test]
    fn config_checks() {
        assert!(BagGenConfig::one_percent(10).validate().is_ok());
        let mut c = BagGenConfig::one_percent(10);
        c.positives_per_positive_bag = 101;
        assert!(c.validate().is_err());
        let mut c = BagGenConfig::one_percent(10);
        c.positive_fraction = 1.5;
        assert!(c.validate().is_err());
        assert_eq!(BagGenConfig::one_percent(10).evidence_ratio(), 0.01);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let b = bag(3);
        let ds = BagDataset::new(vec![b.clone(), b], Split::Train, serde_json::Value::Null);
        assert!(ds.is_err());
    }
}
