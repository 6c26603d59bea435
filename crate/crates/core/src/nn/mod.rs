//! Instance network, attention network, loss and optimiser.
//!
//! The instance network is a stack of fully connected layers: the embedder
//! layers followed by the classifier head. Every hidden layer is followed by
//! ReLU and dropout; the last layer ends in a sigmoid. Weight matrices are
//! stored `fan_in × fan_out` so a layer is `x·W + b` on row-major instance
//! matrices.

mod adam;
mod checkpoint;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{DropoutMode, Graph, Tensor, Var};
use crate::rng::RngStream;
use crate::{Error, Result};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of the instance network and the attention network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Input width followed by the width of every embedder layer; the last
    /// entry is the embedding dimension. `[d]` means the embedding is the
    /// raw input.
    pub embedder_dims: Vec<usize>,
    /// Widths of the classifier head layers, ending in 1.
    pub head_dims: Vec<usize>,
    /// Hidden width of the attention network.
    pub attention_hidden: usize,
    pub dropout_p: f64,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    /// Fully connected stand-in for the MNIST-bags networks.
    pub fn mnist_fc() -> Self {
        Self {
            embedder_dims: vec![784, 256, 128],
            head_dims: vec![1],
            attention_hidden: 128,
            dropout_p: 0.5,
            activation: Activation::Relu,
        }
    }

    /// Halving MLP head over precomputed feature vectors, starting at 1024.
    pub fn feature_head(input_dim: usize) -> Self {
        Self {
            embedder_dims: vec![input_dim],
            head_dims: vec![1024, 512, 256, 128, 64, 1],
            attention_hidden: 1024,
            dropout_p: 0.5,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedder_dims.is_empty() {
            return Err(Error::Config(
                "embedder_dims must name the input width".into(),
            ));
        }
        if self.head_dims.last() != Some(&1) {
            return Err(Error::Config("head_dims must end in 1".into()));
        }
        if self
            .embedder_dims
            .iter()
            .chain(&self.head_dims)
            .chain(std::iter::once(&self.attention_hidden))
            .any(|&w| w == 0)
        {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.embedder_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.embedder_dims.last().expect("validated spec")
    }

    pub fn embedder_layers(&self) -> usize {
        self.embedder_dims.len() - 1
    }

    /// `(fan_in, fan_out)` of every fully connected layer of the instance
    /// network, embedder first.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = self
            .embedder_dims
            .iter()
            .chain(&self.head_dims)
            .copied()
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Shapes of all parameter tensors in declaration order: `(W, b)` per
    /// layer, then attention `V`, `b_V`, `w`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (i, o) in self.layers() {
            shapes.push(vec![i, o]);
            shapes.push(vec![o]);
        }
        let (e, l) = (self.embedding_dim(), self.attention_hidden);
        shapes.push(vec![e, l]);
        shapes.push(vec![l]);
        shapes.push(vec![l, 1]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        let fc: usize = self.layers().iter().map(|(i, o)| i * o + o).sum();
        let (e, l) = (self.embedding_dim(), self.attention_hidden);
        fc + e * l + 2 * l
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "embedder {:?} head {:?} attention {} dropout {}",
            self.embedder_dims, self.head_dims, self.attention_hidden, self.dropout_p
        )
    }
}

/// Parameter values for a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

impl ModelState {
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len()
            || shapes
                .iter()
                .zip(&params)
                .any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::Dimension(format!(
                "parameters do not match spec ({spec})"
            )));
        }
        Ok(Self { spec, params })
    }

    /// All parameters set to zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let params = spec
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        Self::from_params(spec, params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        BoundModel {
            spec: &self.spec,
            vars,
        }
    }

    /// Instance predictions from one inference-mode pass.
    pub fn predict(&self, instances: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let model = self.bind(&mut g, false);
        let x = g.constant(instances.clone());
        let mut unused = RngStream::new(0);
        let (_, h) = instance_forward(&mut g, &model, x, DropoutMode::Infer, &mut unused)?;
        Ok(g.value(h).data().to_vec())
    }
}

/// Xavier-uniform weights with limit `sqrt(6 / (fan_in + fan_out))`, zero
/// biases.
pub fn init_model<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ModelState> {
    spec.validate()?;
    let params = spec
        .param_shapes()
        .into_iter()
        .map(|shape| match shape.as_slice() {
            &[fan_in, fan_out] => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Tensor::new(shape, data).expect("shape from spec")
            }
            _ => Tensor::zeros(&shape),
        })
        .collect();
    ModelState::from_params(spec.clone(), params)
}

/// A [`ModelState`] registered on a graph.
#[derive(Debug)]
pub struct BoundModel<'s> {
    spec: &'s ModelSpec,
    vars: Vec<Var>,
}

impl BoundModel<'_> {
    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// Parameter leaves in declaration order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn n_layers(&self) -> usize {
        self.vars.len() / 2 - 1
    }

    fn attention_vars(&self) -> (Var, Var, Var) {
        let n = 2 * self.n_layers();
        (self.vars[n], self.vars[n + 1], self.vars[n + 2])
    }

    /// Fully connected layer `i` followed by its nonlinearity.
    fn fc_act(&self, g: &mut Graph, i: usize, x: Var) -> Result<Var> {
        let pre = g.matmul(x, self.vars[2 * i])?;
        let pre = g.add_bias(pre, self.vars[2 * i + 1])?;
        Ok(if i + 1 == self.n_layers() {
            g.sigmoid(pre)
        } else {
            g.relu(pre)
        })
    }

    fn post(
        &self,
        g: &mut Graph,
        i: usize,
        x: Var,
        mode: DropoutMode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        if i + 1 == self.n_layers() {
            Ok(x)
        } else {
            g.dropout(x, self.spec.dropout_p, mode, rng)
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let t = g.value(x);
        if t.ndim() != 2 || t.shape()[1] != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "instances of shape {:?} do not match input width {}",
                t.shape(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    /// Output of the first layer before its dropout. It does not depend on
    /// the dropout mask, so Monte-Carlo passes can share it.
    pub fn prefix(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        self.fc_act(g, 0, x)
    }

    /// Finishes the instance network from the output of
    /// [`BoundModel::prefix`]. Returns `(embeddings, h)`; the embeddings are
    /// `None` when the embedder has no layers (the raw input is the
    /// embedding).
    pub fn from_prefix(
        &self,
        g: &mut Graph,
        prefix: Var,
        mode: DropoutMode,
        rng: &mut RngStream,
    ) -> Result<(Option<Var>, Var)> {
        let n = self.n_layers();
        let n_emb = self.spec.embedder_layers();
        let mut a = self.post(g, 0, prefix, mode, rng)?;
        let mut emb = (n_emb == 1).then_some(a);
        for i in 1..n {
            a = self.fc_act(g, i, a)?;
            a = self.post(g, i, a, mode, rng)?;
            if i + 1 == n_emb {
                emb = Some(a);
            }
        }
        let k = g.value(a).rows();
        let h = g.reshape(a, &[k])?;
        Ok((emb, h))
    }

    /// Classifier head applied to rows of embeddings; returns a length-`K`
    /// vector of sigmoid outputs.
    pub fn head(
        &self,
        g: &mut Graph,
        embeddings: Var,
        mode: DropoutMode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let n = self.n_layers();
        let mut a = embeddings;
        for i in self.spec.embedder_layers()..n {
            a = self.fc_act(g, i, a)?;
            a = self.post(g, i, a, mode, rng)?;
        }
        let k = g.value(a).rows();
        g.reshape(a, &[k])
    }
}

/// Per-instance embeddings (`K×e`) and predictions `h` (length `K`).
pub fn instance_forward(
    g: &mut Graph,
    model: &BoundModel<'_>,
    instances: Var,
    mode: DropoutMode,
    rng: &mut RngStream,
) -> Result<(Var, Var)> {
    let prefix = model.prefix(g, instances)?;
    let (emb, h) = model.from_prefix(g, prefix, mode, rng)?;
    Ok((emb.unwrap_or(instances), h))
}

/// Non-gated attention weights `softmax_k(wᵀ tanh(Vᵀ e_k + b_V))`.
pub fn attention_forward(g: &mut Graph, model: &BoundModel<'_>, embeddings: Var) -> Result<Var> {
    let t = g.value(embeddings);
    let k = t.rows();
    if k == 0 || t.ndim() != 2 {
        return Err(Error::EmptyBag(format!(
            "attention over embeddings of shape {:?}",
            t.shape()
        )));
    }
    if t.shape()[1] != model.spec.embedding_dim() {
        return Err(Error::Dimension(format!(
            "embeddings of width {} for attention over width {}",
            t.shape()[1],
            model.spec.embedding_dim()
        )));
    }
    let (v, bv, w) = model.attention_vars();
    let hidden = g.matmul(embeddings, v)?;
    let hidden = g.add_bias(hidden, bv)?;
    let hidden = g.tanh(hidden);
    let logits = g.matmul(hidden, w)?;
    let logits = g.reshape(logits, &[k])?;
    g.softmax(logits)
}

/// Bag-level binary cross-entropy on a pooled prediction.
pub fn bce_loss(g: &mut Graph, z: Var, label: u8) -> Result<Var> {
    g.bce(z, f64::from(label))
}
