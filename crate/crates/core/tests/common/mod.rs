//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the code paths it is used to check.
#![allow(dead_code)]

use milc_core::data::{Bag, BagDataset};
use milc_core::nn::{bce_loss, ModelSpec, ModelState};
use milc_core::pooling::{pool_bag, McSettings, Pooling};
use milc_core::{DropoutMode, Graph, RngStream, Tensor};
use rand::{Rng, RngCore};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute differences below this always pass (components near zero).
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Numeric gradient of `f` at `params` by central differences.
pub fn numeric_grads(f: &dyn Fn(&[Tensor]) -> f64, params: &[Tensor]) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = vec![0.0; params[p].len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + FD_STEP;
            let up = f(&work);
            work[p].data_mut()[i] = orig - FD_STEP;
            let down = f(&work);
            work[p].data_mut()[i] = orig;
            *g = (up - down) / (2.0 * FD_STEP);
        }
        out.push(Tensor::new(params[p].shape().to_vec(), grad).unwrap());
    }
    out
}

/// Worst violation over all components: 0 when every component is within
/// tolerance, otherwise the largest relative error seen among failing
/// components.
pub fn gradient_mismatch(
    analytic: &[Tensor],
    numeric: &[Tensor],
) -> Option<(usize, usize, f64, f64)> {
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.shape(), n.shape());
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let diff = (x - y).abs();
            if diff <= FD_ABS_FLOOR {
                continue;
            }
            if diff / x.abs().max(y.abs()) >= FD_REL_TOL {
                return Some((p, i, x, y));
            }
        }
    }
    None
}

/// O(n²) Mann–Whitney AUC straight from its pairwise definition.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `1 / (sqrt(Σ(x - mean)² / T) + eps)` with an explicit two-pass variance.
pub fn naive_certainty(column: &[f64], eps: f64) -> f64 {
    let t = column.len() as f64;
    let mean = column.iter().sum::<f64>() / t;
    let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
    1.0 / (var.sqrt() + eps)
}

/// A small random architecture: 1–2 embedder layers, 1–3 head layers.
pub fn random_spec<R: Rng>(rng: &mut R, dropout_p: f64) -> ModelSpec {
    let d = rng.random_range(2..=5);
    let mut embedder_dims = vec![d];
    for _ in 0..rng.random_range(0..=2) {
        embedder_dims.push(rng.random_range(2..=5));
    }
    let mut head_dims: Vec<usize> = (0..rng.random_range(0..=2))
        .map(|_| rng.random_range(2..=5))
        .collect();
    head_dims.push(1);
    ModelSpec {
        embedder_dims,
        head_dims,
        attention_hidden: rng.random_range(2..=4),
        dropout_p,
        activation: Default::default(),
    }
}

/// Parameters uniform in [-1, 1] (wider than Xavier, so ReLUs are mixed).
pub fn random_state<R: Rng>(rng: &mut R, spec: &ModelSpec) -> ModelState {
    let params = spec
        .param_shapes()
        .into_iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    ModelState::from_params(spec.clone(), params).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lim: f64) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-lim..lim))
            .collect(),
    )
    .unwrap()
}

/// Bag BCE loss of a model in training mode, masks fixed by `stream`.
pub fn bag_loss(
    state: &ModelState,
    x: &Tensor,
    label: u8,
    pooling: Pooling,
    stream: &RngStream,
) -> f64 {
    let mut g = Graph::new();
    let bound = state.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let mc = McSettings {
        passes: 4,
        eps: 1e-6,
    };
    let fwd = pool_bag(&mut g, &bound, xv, pooling, DropoutMode::Train, mc, stream).unwrap();
    let loss = bce_loss(&mut g, fwd.pool.z, label).unwrap();
    g.value(loss).item().unwrap()
}

/// Analytic gradients of [`bag_loss`] with respect to every parameter.
pub fn bag_loss_grads(
    state: &ModelState,
    x: &Tensor,
    label: u8,
    pooling: Pooling,
    stream: &RngStream,
) -> Vec<Tensor> {
    let mut g = Graph::new();
    let (loss, vars) = {
        let bound = state.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let mc = McSettings {
            passes: 4,
            eps: 1e-6,
        };
        let fwd = pool_bag(&mut g, &bound, xv, pooling, DropoutMode::Train, mc, stream).unwrap();
        (
            bce_loss(&mut g, fwd.pool.z, label).unwrap(),
            bound.vars().to_vec(),
        )
    };
    let grads = g.backward(loss).unwrap();
    vars.iter()
        .zip(state.params())
        .map(|(v, p)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect()
}

/// Gradient check of the full bag loss of one random network. Returns the
/// first failing component, if any.
pub fn check_random_network(seed: u64, pooling: Pooling) -> Option<String> {
    let mut rng = RngStream::new(seed);
    let p = if rng.next_u32() & 1 == 0 { 0.0 } else { 0.3 };
    let spec = random_spec(&mut rng, p);
    let state = random_state(&mut rng, &spec);
    let k = rng.random_range(1..=5);
    let x = random_matrix(&mut rng, k, spec.input_dim(), 2.0);
    let label = (rng.next_u32() % 2) as u8;
    let stream = rng.derive("masks", 0);
    let analytic = bag_loss_grads(&state, &x, label, pooling, &stream);
    let f = |params: &[Tensor]| {
        let s = ModelState::from_params(spec.clone(), params.to_vec()).unwrap();
        bag_loss(&s, &x, label, pooling, &stream)
    };
    let numeric = numeric_grads(&f, state.params());
    gradient_mismatch(&analytic, &numeric).map(|(p, i, a, n)| {
        format!("seed {seed} {pooling}: param {p}[{i}] analytic {a} numeric {n}")
    })
}

/// Plain logistic regression by full-batch gradient descent, scored on the
/// training instances themselves. Returns the instance AUC.
pub fn linear_probe_auc(ds: &BagDataset, steps: usize, lr: f64) -> f64 {
    let d = ds.dim().unwrap();
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut ys: Vec<u8> = Vec::new();
    for bag in &ds.bags {
        let labels = bag.instance_labels.as_ref().unwrap();
        for (k, &y) in labels.iter().enumerate() {
            rows.push(bag.instances.row(k));
            ys.push(y);
        }
    }
    let n = rows.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in rows.iter().zip(&ys) {
            let s: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-s).exp()) - y as f64;
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    let scores: Vec<f64> = rows
        .iter()
        .map(|x| x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b)
        .collect();
    pairwise_auc(&scores, &ys)
}

/// Checks bag label == OR of instance labels for every bag.
pub fn or_rule_holds(bags: &[Bag]) -> bool {
    bags.iter().all(|b| match &b.instance_labels {
        Some(l) => l.contains(&1) == (b.label == 1),
        None => true,
    })
}
