//! Bag pooling operators and Monte-Carlo dropout certainty.
//!
//! Certainty pooling scores every instance by `c_k = 1 / (σ(X_k) + ε)`, where
//! `X_k` holds the instance's predictions over `T` stochastic dropout passes
//! and `σ` is the population standard deviation. The bag prediction is the
//! raw prediction `h_k*` of `k* = argmax_k c_k·h_k`; certainty only selects
//! and never receives a gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{DropoutMode, Graph, Tensor, Var};
use crate::nn::{attention_forward, BoundModel, ModelState};
use crate::rng::RngStream;
use crate::{Error, Result};

pub const DEFAULT_MC_PASSES: usize = 10;
pub const DEFAULT_CERTAINTY_EPS: f64 = 1e-6;

/// Attention weights may deviate from summing to one by at most this much.
pub const ATTENTION_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
    Attention,
    Certainty,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [
        Pooling::Max,
        Pooling::Mean,
        Pooling::Attention,
        Pooling::Certainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
            Pooling::Certainty => "certainty",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pooling {s:?}")))
    }
}

/// Monte-Carlo dropout settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub passes: usize,
    pub eps: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            passes: DEFAULT_MC_PASSES,
            eps: DEFAULT_CERTAINTY_EPS,
        }
    }
}

/// `T×K` predictions: row `t` is stochastic pass `t`, column `k` is `X_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct McSampleMatrix {
    passes: usize,
    bag_size: usize,
    samples: Vec<f64>,
}

impl McSampleMatrix {
    pub fn new(passes: usize, bag_size: usize, samples: Vec<f64>) -> Result<Self> {
        if passes < 2 {
            return Err(Error::Parameter(format!(
                "at least 2 Monte-Carlo passes are needed, got {passes}"
            )));
        }
        if samples.len() != passes * bag_size {
            return Err(Error::Dimension(format!(
                "{} samples for {passes}×{bag_size}",
                samples.len()
            )));
        }
        Ok(Self {
            passes,
            bag_size,
            samples,
        })
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn bag_size(&self) -> usize {
        self.bag_size
    }

    pub fn get(&self, pass: usize, instance: usize) -> f64 {
        self.samples[pass * self.bag_size + instance]
    }

    pub fn row(&self, pass: usize) -> &[f64] {
        &self.samples[pass * self.bag_size..(pass + 1) * self.bag_size]
    }

    pub fn column(&self, instance: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.passes).map(move |t| self.get(t, instance))
    }
}

/// Per-instance certainty `c_k > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CertaintyVector(Vec<f64>);

impl CertaintyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
            return Err(Error::Parameter(format!(
                "certainty values must be positive and finite, got {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|c| c * factor).collect())
    }
}

/// Outcome of pooling one bag.
#[derive(Clone, Debug)]
pub struct PoolResult {
    /// Bag prediction node.
    pub z: Var,
    pub selected_index: Option<usize>,
    /// Attention weights `a_k` or certainty-weighted scores `c_k·h_k`.
    pub weights: Option<Vec<f64>>,
}

impl PoolResult {
    pub fn value(&self, g: &Graph) -> f64 {
        g.value(self.z).data()[0]
    }
}

fn bag_len(g: &Graph, h: Var) -> Result<usize> {
    let t = g.value(h);
    if t.ndim() != 1 {
        return Err(Error::Dimension(format!(
            "instance predictions must be a vector, got shape {:?}",
            t.shape()
        )));
    }
    if t.is_empty() {
        return Err(Error::EmptyBag("no instance predictions".into()));
    }
    Ok(t.len())
}

/// `z = max_k h_k`; ties go to the lowest index.
pub fn max_pool(g: &mut Graph, h: Var) -> Result<PoolResult> {
    bag_len(g, h)?;
    let z = g.max(h)?;
    let data = g.value(h).data();
    let best = (1..data.len()).fold(0, |b, k| if data[k] > data[b] { k } else { b });
    Ok(PoolResult {
        z,
        selected_index: Some(best),
        weights: None,
    })
}

/// `z = (1/K) Σ h_k`.
pub fn mean_pool(g: &mut Graph, h: Var) -> Result<PoolResult> {
    bag_len(g, h)?;
    let z = g.mean(h)?;
    Ok(PoolResult {
        z,
        selected_index: None,
        weights: None,
    })
}

/// `z = head(Σ a_k e_k)` through the model's classifier head.
pub fn attention_pool(
    g: &mut Graph,
    model: &BoundModel<'_>,
    embeddings: Var,
    attention: Var,
    mode: DropoutMode,
    rng: &mut RngStream,
) -> Result<PoolResult> {
    let k = bag_len(g, attention)?;
    let a = g.value(attention).data().to_vec();
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > ATTENTION_SUM_TOL {
        return Err(Error::Contract(format!(
            "attention weights sum to {total}, expected 1"
        )));
    }
    if g.value(embeddings).rows() != k {
        return Err(Error::Dimension(format!(
            "{k} attention weights for embeddings of shape {:?}",
            g.value(embeddings).shape()
        )));
    }
    let row = g.reshape(attention, &[1, k])?;
    let pooled = g.matmul(row, embeddings)?;
    let out = model.head(g, pooled, mode, rng)?;
    let z = g.reshape(out, &[])?;
    Ok(PoolResult {
        z,
        selected_index: None,
        weights: Some(a),
    })
}

/// Runs `passes` Monte-Carlo dropout passes over instances whose first layer
/// output is `prefix`. Pass `t` draws its masks from `rng.derive("mc", t)`.
pub(crate) fn mc_from_prefix(
    g: &mut Graph,
    model: &BoundModel<'_>,
    prefix: Var,
    passes: usize,
    rng: &RngStream,
) -> Result<McSampleMatrix> {
    if passes < 2 {
        return Err(Error::Parameter(format!(
            "at least 2 Monte-Carlo passes are needed, got {passes}"
        )));
    }
    let k = g.value(prefix).rows();
    let mut samples = Vec::with_capacity(passes * k);
    for t in 0..passes {
        let mut stream = rng.derive("mc", t as u64);
        let (_, h) = model.from_prefix(g, prefix, DropoutMode::Mc, &mut stream)?;
        samples.extend_from_slice(g.value(h).data());
    }
    McSampleMatrix::new(passes, k, samples)
}

/// `passes` stochastic forward passes with dropout active; no gradients.
pub fn mc_dropout_predict(
    state: &ModelState,
    instances: &Tensor,
    passes: usize,
    rng: &RngStream,
) -> Result<McSampleMatrix> {
    if passes < 2 {
        return Err(Error::Parameter(format!(
            "at least 2 Monte-Carlo passes are needed, got {passes}"
        )));
    }
    let mut g = Graph::new();
    let model = state.bind(&mut g, false);
    let x = g.constant(instances.clone());
    let prefix = model.prefix(&mut g, x)?;
    mc_from_prefix(&mut g, &model, prefix, passes, rng)
}

/// `c_k = 1 / (σ(X_k) + eps)` with the population standard deviation.
pub fn certainty(samples: &McSampleMatrix, eps: f64) -> Result<CertaintyVector> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let t = samples.passes() as f64;
    let c = (0..samples.bag_size())
        .map(|k| {
            // Shift by the first sample so a constant column is exactly 0.
            let x0 = samples.get(0, k);
            let mean = samples.column(k).map(|x| x - x0).sum::<f64>() / t;
            let var = samples
                .column(k)
                .map(|x| (x - x0 - mean).powi(2))
                .sum::<f64>()
                / t;
            1.0 / (var.sqrt() + eps)
        })
        .collect();
    CertaintyVector::new(c)
}

/// `z = h_k*` with `k* = argmax_k c_k·h_k`, ties to the lowest index.
///
/// Instances with equal certainty are compared on `h` directly so that a
/// constant certainty vector selects exactly what [`max_pool`] selects.
pub fn certainty_pool(g: &mut Graph, h: Var, c: &CertaintyVector) -> Result<PoolResult> {
    let k = bag_len(g, h)?;
    if c.len() != k {
        return Err(Error::Dimension(format!(
            "{} certainty values for {k} instances",
            c.len()
        )));
    }
    let hv = g.value(h).data();
    let cv = c.values();
    let scores: Vec<f64> = hv.iter().zip(cv).map(|(h, c)| h * c).collect();
    let better = |i: usize, j: usize| {
        if cv[i] == cv[j] {
            hv[i] > hv[j]
        } else {
            scores[i] > scores[j]
        }
    };
    let best = (1..k).fold(0, |b, i| if better(i, b) { i } else { b });
    let z = g.pick(h, best)?;
    Ok(PoolResult {
        z,
        selected_index: Some(best),
        weights: Some(scores),
    })
}

/// Everything produced by pooling one bag through a model.
#[derive(Debug)]
pub struct BagForward {
    pub pool: PoolResult,
    /// Instance predictions of the pass the pooling used (length `K`).
    pub h: Var,
    pub certainty: Option<CertaintyVector>,
}

/// Scores one bag and pools it.
///
/// `mode` is the dropout mode of the recorded pass (`Train` while training,
/// `Infer` for evaluation). Under certainty pooling `mc.passes` extra
/// `Mc`-mode passes share the first layer with the recorded pass; their
/// outputs never reach the loss. Dropout masks come from streams derived
/// from `rng`, so the result does not depend on evaluation order.
pub fn pool_bag(
    g: &mut Graph,
    model: &BoundModel<'_>,
    instances: Var,
    pooling: Pooling,
    mode: DropoutMode,
    mc: McSettings,
    rng: &RngStream,
) -> Result<BagForward> {
    if g.value(instances).rows() == 0 {
        return Err(Error::EmptyBag("bag has no instances".into()));
    }
    let mut stream = rng.derive("forward", 0);
    let prefix = model.prefix(g, instances)?;
    let mut cert = None;
    if pooling == Pooling::Certainty {
        let samples = mc_from_prefix(g, model, prefix, mc.passes, rng)?;
        cert = Some(certainty(&samples, mc.eps)?);
    }
    let (emb, h) = model.from_prefix(g, prefix, mode, &mut stream)?;
    let pool = match pooling {
        Pooling::Max => max_pool(g, h)?,
        Pooling::Mean => mean_pool(g, h)?,
        Pooling::Certainty => certainty_pool(g, h, cert.as_ref().expect("computed above"))?,
        Pooling::Attention => {
            let emb = emb.unwrap_or(instances);
            let a = attention_forward(g, model, emb)?;
            let mut head_stream = rng.derive("attention-head", 0);
            attention_pool(g, model, emb, a, mode, &mut head_stream)?
        }
    };
    Ok(BagForward {
        pool,
        h,
        certainty: cert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h_of(g: &mut Graph, v: &[f64]) -> Var {
        g.param(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn max_pool_examples() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[0.1, 0.9, 0.3]);
        let r = max_pool(&mut g, h).unwrap();
        assert_eq!(r.value(&g), 0.9);
        assert_eq!(r.selected_index, Some(1));

        let s = h_of(&mut g, &[0.4]);
        assert_eq!(max_pool(&mut g, s).unwrap().value(&g), 0.4);

        let t = h_of(&mut g, &[0.7, 0.7]);
        assert_eq!(max_pool(&mut g, t).unwrap().selected_index, Some(0));
    }

    #[test]
    fn empty_bag_is_rejected() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[]);
        assert!(matches!(max_pool(&mut g, h), Err(Error::EmptyBag(_))));
        assert!(matches!(mean_pool(&mut g, h), Err(Error::EmptyBag(_))));
        let c = CertaintyVector::new(vec![]).unwrap();
        assert!(matches!(
            certainty_pool(&mut g, h, &c),
            Err(Error::EmptyBag(_))
        ));
    }

    #[test]
    fn mean_pool_examples() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[0.1, 0.9, 0.3]);
        let r = mean_pool(&mut g, h).unwrap();
        assert!((r.value(&g) - 1.3 / 3.0).abs() < 1e-15);
        let c = h_of(&mut g, &[0.37; 5]);
        assert!((mean_pool(&mut g, c).unwrap().value(&g) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn certainty_examples() {
        let x = McSampleMatrix::new(3, 1, vec![0.5, 0.5, 0.5]).unwrap();
        let c = certainty(&x, 1e-6).unwrap();
        assert_eq!(c.values(), &[1e6]);

        let x = McSampleMatrix::new(2, 1, vec![0.2, 0.4]).unwrap();
        let c = certainty(&x, 1e-6).unwrap();
        assert!((c.values()[0] - 1.0 / (0.1 + 1e-6)).abs() < 1e-9);
        assert!((c.values()[0] - 9.99990).abs() < 1e-5);
    }

    #[test]
    fn single_pass_matrix_rejected() {
        assert!(matches!(
            McSampleMatrix::new(1, 3, vec![0.1, 0.2, 0.3]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn certainty_pool_examples() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[0.9, 0.5]);
        let c = CertaintyVector::new(vec![1.0, 10.0]).unwrap();
        let r = certainty_pool(&mut g, h, &c).unwrap();
        assert_eq!(r.selected_index, Some(1));
        assert_eq!(r.value(&g), 0.5);
        assert_eq!(r.weights.as_deref(), Some(&[0.9, 5.0][..]));

        let h = h_of(&mut g, &[0.2, 0.8, 0.6]);
        let c = CertaintyVector::new(vec![3.0; 3]).unwrap();
        let r = certainty_pool(&mut g, h, &c).unwrap();
        let m = max_pool(&mut g, h).unwrap();
        assert_eq!(r.selected_index, m.selected_index);
        assert_eq!(r.value(&g), m.value(&g));

        let h = h_of(&mut g, &[0.3]);
        let c = CertaintyVector::new(vec![123.0]).unwrap();
        assert_eq!(certainty_pool(&mut g, h, &c).unwrap().value(&g), 0.3);
    }

    #[test]
    fn certainty_pool_length_mismatch() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[0.9, 0.5]);
        let c = CertaintyVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            certainty_pool(&mut g, h, &c),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn certainty_pool_gradient_only_at_selection() {
        let mut g = Graph::new();
        let h = h_of(&mut g, &[0.9, 0.5, 0.7]);
        let c = CertaintyVector::new(vec![1.0, 10.0, 2.0]).unwrap();
        let r = certainty_pool(&mut g, h, &c).unwrap();
        let grads = g.backward(r.z).unwrap();
        assert_eq!(grads.get(h).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_positive_certainty_rejected() {
        assert!(CertaintyVector::new(vec![1.0, 0.0]).is_err());
        assert!(CertaintyVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn pooling_names_round_trip() {
        for p in Pooling::ALL {
            assert_eq!(p.name().parse::<Pooling>().unwrap(), p);
        }
        assert!("median".parse::<Pooling>().is_err());
    }
}
