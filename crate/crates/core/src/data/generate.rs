//! Synthetic bag construction.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Bag, BagDataset, BagGenConfig, Split};
use crate::autograd::Tensor;
use crate::rng::RngStream;
use crate::{Error, Result};

/// Bag labels in a random order with exactly `cfg.positive_bags()` ones.
fn bag_labels(cfg: &BagGenConfig, rng: &mut RngStream) -> Vec<u8> {
    let n_pos = cfg.positive_bags();
    let mut labels: Vec<u8> = (0..cfg.n_bags).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(rng);
    labels
}

/// Instance labels of one bag: `positives_per_positive_bag` ones at uniform
/// positions for a positive bag, all zeros otherwise.
fn instance_labels(cfg: &BagGenConfig, label: u8, rng: &mut RngStream) -> Vec<u8> {
    let mut labels = vec![0u8; cfg.bag_size];
    if label == 1 {
        for p in index::sample(rng, cfg.bag_size, cfg.positives_per_positive_bag) {
            labels[p] = 1;
        }
    }
    labels
}

/// MNIST bags: an instance is positive iff its digit is
/// `cfg.positive_digit`. Digits are drawn with replacement from `images`.
pub fn generate_mnist_bags(
    images: &Tensor,
    labels: &[u8],
    cfg: &BagGenConfig,
    split: Split,
    rng: &mut RngStream,
) -> Result<BagDataset> {
    cfg.validate()?;
    if images.rows() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.rows(),
            labels.len()
        )));
    }
    let (pos_pool, neg_pool): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i] == cfg.positive_digit);
    let n_pos_bags = cfg.positive_bags();
    if n_pos_bags > 0 && pos_pool.is_empty() {
        return Err(Error::Data(format!(
            "no digit {} in the source pool",
            cfg.positive_digit
        )));
    }
    let needs_negatives = cfg.n_bags > n_pos_bags || cfg.bag_size > cfg.positives_per_positive_bag;
    if cfg.n_bags > 0 && needs_negatives && neg_pool.is_empty() {
        return Err(Error::Data(format!(
            "no digits other than {} in the source pool",
            cfg.positive_digit
        )));
    }

    let seed = rng.seed();
    let bag_y = bag_labels(cfg, rng);
    let d = images.cols();
    let mut bags = Vec::with_capacity(cfg.n_bags);
    for (i, &y) in bag_y.iter().enumerate() {
        let inst = instance_labels(cfg, y, rng);
        let mut data = Vec::with_capacity(cfg.bag_size * d);
        for &l in &inst {
            let pool = if l == 1 { &pos_pool } else { &neg_pool };
            let src = pool[rng.random_range(0..pool.len())];
            data.extend_from_slice(images.row(src));
        }
        let x = Tensor::matrix(cfg.bag_size, d, data)?;
        bags.push(Bag::new(format!("{split}-{i:05}"), x, y, Some(inst))?);
    }
    BagDataset::new(
        bags,
        split,
        json!({ "generator": "mnist", "config": cfg, "seed": seed }),
    )
}

/// Parameters of the Gaussian feature-bag generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureBagConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Shift of positive instances along the class direction.
    pub separation: f64,
    /// Seed of the class direction; splits meant to be used together must
    /// share it.
    pub direction_seed: u64,
}

fn default_dim() -> usize {
    2048
}

impl FeatureBagConfig {
    /// Unit vector along which positive instances are shifted.
    pub fn direction(&self) -> Vec<f64> {
        let mut rng = RngStream::new(self.direction_seed).derive("direction", 0);
        let mut u: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        u
    }
}

/// Negative instances ~ N(0, I); positive instances ~ N(s·u, I) for the
/// fixed unit direction `u`. Bag assembly follows the MNIST generator.
pub fn generate_feature_bags(
    cfg: &BagGenConfig,
    features: &FeatureBagConfig,
    split: Split,
    rng: &mut RngStream,
) -> Result<BagDataset> {
    cfg.validate()?;
    if features.dim == 0 {
        return Err(Error::Config("feature dim must be at least 1".into()));
    }
    if !(features.separation >= 0.0) {
        return Err(Error::Config(format!(
            "separation must be non-negative, got {}",
            features.separation
        )));
    }
    let seed = rng.seed();
    let u = features.direction();
    let d = features.dim;
    let bag_y = bag_labels(cfg, rng);
    let mut bags = Vec::with_capacity(cfg.n_bags);
    for (i, &y) in bag_y.iter().enumerate() {
        let inst = instance_labels(cfg, y, rng);
        let mut data = Vec::with_capacity(cfg.bag_size * d);
        for &l in &inst {
            let start = data.len();
            data.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            if l == 1 {
                for (v, ui) in data[start..].iter_mut().zip(&u) {
                    *v += features.separation * ui;
                }
            }
        }
        let x = Tensor::matrix(cfg.bag_size, d, data)?;
        bags.push(Bag::new(format!("{split}-{i:05}"), x, y, Some(inst))?);
    }
    BagDataset::new(
        bags,
        split,
        json!({ "generator": "features", "config": cfg, "features": features, "seed": seed }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> (Tensor, Vec<u8>) {
        // 30 fake "digits" of width 4; pixel 0 encodes the digit
        let labels: Vec<u8> = (0..30).map(|i| (i % 10) as u8).collect();
        let data = labels
            .iter()
            .flat_map(|&l| [f64::from(l), 0.5, 0.25, 1.0])
            .collect();
        (Tensor::matrix(30, 4, data).unwrap(), labels)
    }

    #[test]
    fn half_positive_single_nine() {
        let (x, y) = pool();
        let cfg = BagGenConfig::one_percent(100);
        let ds = generate_mnist_bags(&x, &y, &cfg, Split::Train, &mut RngStream::new(3)).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.positives(), 50);
        for bag in &ds.bags {
            let labels = bag.instance_labels.as_ref().unwrap();
            let nines = (0..bag.len())
                .filter(|&k| bag.instances.row(k)[0] == 9.0)
                .count();
            let marked = labels.iter().filter(|&&l| l == 1).count();
            assert_eq!(nines, marked);
            assert_eq!(marked, usize::from(bag.label));
        }
    }

    #[test]
    fn no_positive_fraction_means_no_nines() {
        let (x, y) = pool();
        let mut cfg = BagGenConfig::one_percent(20);
        cfg.positive_fraction = 0.0;
        let ds = generate_mnist_bags(&x, &y, &cfg, Split::Test, &mut RngStream::new(3)).unwrap();
        assert!(ds.bags.iter().all(|b| b.label == 0));
        assert!(ds
            .bags
            .iter()
            .all(|b| (0..b.len()).all(|k| b.instances.row(k)[0] != 9.0)));
    }

    #[test]
    fn same_seed_same_dataset() {
        let (x, y) = pool();
        let cfg = BagGenConfig::one_percent(10);
        let a = generate_mnist_bags(&x, &y, &cfg, Split::Train, &mut RngStream::new(8)).unwrap();
        let b = generate_mnist_bags(&x, &y, &cfg, Split::Train, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_positive_digit_is_data_error() {
        let (x, y) = pool();
        let keep: Vec<usize> = (0..30).filter(|&i| y[i] != 9).collect();
        let xs = x.select_rows(&keep);
        let ys: Vec<u8> = keep.iter().map(|&i| y[i]).collect();
        let cfg = BagGenConfig::one_percent(4);
        let err = generate_mnist_bags(&xs, &ys, &cfg, Split::Train, &mut RngStream::new(1));
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn feature_bag_counts_follow_config() {
        let cfg = BagGenConfig {
            n_bags: 12,
            bag_size: 7,
            positives_per_positive_bag: 2,
            positive_fraction: 0.25,
            positive_digit: 9,
        };
        let feats = FeatureBagConfig {
            dim: 16,
            separation: 3.0,
            direction_seed: 5,
        };
        let ds =
            generate_feature_bags(&cfg, &feats, Split::Validation, &mut RngStream::new(2)).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.positives(), 3);
        assert_eq!(ds.dim(), Some(16));
        for b in &ds.bags {
            let pos = b
                .instance_labels
                .as_ref()
                .unwrap()
                .iter()
                .filter(|&&l| l == 1)
                .count();
            assert_eq!(pos, if b.label == 1 { 2 } else { 0 });
        }
        let u = feats.direction();
        assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
