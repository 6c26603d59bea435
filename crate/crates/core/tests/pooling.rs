//! Pooling operators and the certainty estimator: oracles and invariants.

mod common;

use common::*;
use milc_core::nn::ModelState;
use milc_core::pooling::{
    certainty, certainty_pool, max_pool, mc_dropout_predict, mean_pool, pool_bag, CertaintyVector,
    McSampleMatrix, McSettings, Pooling,
};
use milc_core::{DropoutMode, Graph, RngStream, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn certainty_matches_two_pass_oracle() {
    let mut rng = RngStream::new(11);
    for _ in 0..200 {
        let t = rng.random_range(2..=30);
        let k = rng.random_range(1..=8);
        let offset = rng.random_range(0.0..1.0);
        let spread = 10f64.powi(-rng.random_range(0..6));
        let samples: Vec<f64> = (0..t * k)
            .map(|_| offset + spread * rng.random_range(-1.0..1.0))
            .collect();
        let m = McSampleMatrix::new(t, k, samples).unwrap();
        let c = certainty(&m, 1e-6).unwrap();
        for i in 0..k {
            let col: Vec<f64> = m.column(i).collect();
            let want = naive_certainty(&col, 1e-6);
            assert!(
                (c.values()[i] - want).abs() <= 1e-12 * want.max(1.0),
                "{} vs {want}",
                c.values()[i]
            );
        }
    }
}

/// With no dropout every certainty is equal and certainty pooling is max
/// pooling, bit for bit.
#[test]
fn zero_dropout_degenerates_to_max() {
    let mut rng = RngStream::new(12);
    for _ in 0..200 {
        let spec = random_spec(&mut rng, 0.0);
        let state = random_state(&mut rng, &spec);
        let k = rng.random_range(1..=12);
        let x = random_matrix(&mut rng, k, spec.input_dim(), 2.0);
        let stream = rng.derive("mc", 0);
        let run = |p: Pooling| {
            let mut g = Graph::new();
            let b = state.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let mc = McSettings {
                passes: 5,
                eps: 1e-6,
            };
            let f = pool_bag(&mut g, &b, xv, p, DropoutMode::Infer, mc, &stream).unwrap();
            (f.pool.value(&g).to_bits(), f.pool.selected_index)
        };
        assert_eq!(run(Pooling::Certainty), run(Pooling::Max));
    }
}

#[test]
fn mc_mean_converges() {
    let mut rng = RngStream::new(13);
    let spec = random_spec(&mut rng, 0.4);
    let state = random_state(&mut rng, &spec);
    let x = random_matrix(&mut rng, 3, spec.input_dim(), 2.0);
    let small = mc_dropout_predict(&state, &x, 1000, &rng.derive("small", 0)).unwrap();
    let large = mc_dropout_predict(&state, &x, 100_000, &rng.derive("large", 0)).unwrap();
    for k in 0..3 {
        let col: Vec<f64> = small.column(k).collect();
        let mean_small = col.iter().sum::<f64>() / 1000.0;
        let big: Vec<f64> = large.column(k).collect();
        let mean_large = big.iter().sum::<f64>() / 1e5;
        let sd = (big.iter().map(|v| (v - mean_large).powi(2)).sum::<f64>() / 1e5).sqrt();
        let se = sd / 1000f64.sqrt();
        assert!(
            (mean_small - mean_large).abs() <= 3.0 * se + 1e-12,
            "instance {k}: {mean_small} vs {mean_large} (se {se})"
        );
    }
}

fn hvec(g: &mut Graph, h: &[f64]) -> milc_core::Var {
    g.constant(Tensor::vector(h.to_vec()))
}

fn distinct(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] != w[1])
}

fn permute<T: Clone>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| v[i].clone()).collect()
}

fn perm_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..12).prop_flat_map(|k| {
        (
            prop::collection::vec(0.001f64..0.999, k),
            prop::collection::vec(0.5f64..1e4, k),
            Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn outputs_within_instance_range((h, c, _) in perm_strategy()) {
        let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut g = Graph::new();
        let hv = hvec(&mut g, &h);
        let cv = CertaintyVector::new(c).unwrap();
        for z in [
            max_pool(&mut g, hv).unwrap().value(&g),
            mean_pool(&mut g, hv).unwrap().value(&g),
            certainty_pool(&mut g, hv, &cv).unwrap().value(&g),
        ] {
            prop_assert!(z >= lo - 1e-15 && z <= hi + 1e-15);
        }
    }

    #[test]
    fn permutation_invariance((h, c, perm) in perm_strategy()) {
        let scores: Vec<f64> = h.iter().zip(&c).map(|(a, b)| a * b).collect();
        prop_assume!(distinct(&h) && distinct(&scores));
        let mut g = Graph::new();
        let (hp, cp) = (permute(&h, &perm), permute(&c, &perm));
        let hv = hvec(&mut g, &h);
        let hpv = hvec(&mut g, &hp);
        let cv = CertaintyVector::new(c).unwrap();
        let cpv = CertaintyVector::new(cp).unwrap();

        let a = max_pool(&mut g, hv).unwrap();
        let b = max_pool(&mut g, hpv).unwrap();
        prop_assert_eq!(a.value(&g), b.value(&g));
        prop_assert_eq!(perm[b.selected_index.unwrap()], a.selected_index.unwrap());

        let a = certainty_pool(&mut g, hv, &cv).unwrap();
        let b = certainty_pool(&mut g, hpv, &cpv).unwrap();
        prop_assert_eq!(a.value(&g), b.value(&g));
        prop_assert_eq!(perm[b.selected_index.unwrap()], a.selected_index.unwrap());

        let a = mean_pool(&mut g, hv).unwrap().value(&g);
        let b = mean_pool(&mut g, hpv).unwrap().value(&g);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn certainty_selection_is_scale_invariant((h, c, _) in perm_strategy(), lambda in 1e-3f64..1e3) {
        let mut g = Graph::new();
        let hv = hvec(&mut g, &h);
        let cv = CertaintyVector::new(c).unwrap();
        let a = certainty_pool(&mut g, hv, &cv).unwrap();
        let b = certainty_pool(&mut g, hv, &cv.scaled(lambda).unwrap()).unwrap();
        let scores: Vec<f64> = h.iter().zip(cv.values()).map(|(x, y)| x * y).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(|x, y| y.total_cmp(x));
        // Scaling can only reorder near-ties through rounding.
        prop_assume!(sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 * sorted[0]);
        prop_assert_eq!(a.selected_index, b.selected_index);
        prop_assert_eq!(a.value(&g), b.value(&g));
    }

    #[test]
    fn certainty_decreases_with_spread(
        base in prop::collection::vec(-1.0f64..1.0, 2..20),
        narrow in 1e-4f64..1.0,
        factor in 1.01f64..10.0,
    ) {
        prop_assume!(base.iter().any(|&v| v != base[0]));
        let t = base.len();
        let mut samples = Vec::with_capacity(2 * t);
        for &v in &base {
            samples.push(0.5 + narrow * v);
            samples.push(0.5 + narrow * factor * v);
        }
        let m = McSampleMatrix::new(t, 2, samples).unwrap();
        let c = certainty(&m, 1e-6).unwrap();
        prop_assert!(c.values()[0] > c.values()[1]);
    }

    /// Only the selected instance receives input gradient under max and
    /// certainty pooling.
    #[test]
    fn gradient_reaches_only_the_selected_row(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = RngStream::new(seed);
        let spec = random_spec(&mut rng, 0.3);
        let state = random_state(&mut rng, &spec);
        let x = random_matrix(&mut rng, k, spec.input_dim(), 2.0);
        for p in [Pooling::Max, Pooling::Certainty] {
            let mut g = Graph::new();
            let (loss, xv, sel) = {
                let b = state.bind(&mut g, false);
                let xv = g.param(x.clone());
                let mc = McSettings { passes: 4, eps: 1e-6 };
                let f = pool_bag(&mut g, &b, xv, p, DropoutMode::Train, mc, &rng.derive("m", 0)).unwrap();
                let loss = g.bce(f.pool.z, 1.0).unwrap();
                (loss, xv, f.pool.selected_index.unwrap())
            };
            let grads = g.backward(loss).unwrap();
            let gx = grads.get(xv).unwrap();
            for r in 0..k {
                if r != sel {
                    prop_assert!(gx.row(r).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}

#[test]
fn certainty_routes_exactly_one_instance_per_step() {
    // Wide enough that some path from the selected row always survives.
    let mut rng = RngStream::new(14);
    let spec = milc_core::ModelSpec {
        embedder_dims: vec![6, 64],
        head_dims: vec![1],
        attention_hidden: 4,
        dropout_p: 0.5,
        activation: Default::default(),
    };
    let mut exactly_one = 0;
    for step in 0..50 {
        let state: ModelState = random_state(&mut rng, &spec);
        let x = random_matrix(&mut rng, 7, 6, 2.0);
        let mut g = Graph::new();
        let (loss, xv) = {
            let b = state.bind(&mut g, true);
            let xv = g.param(x.clone());
            let mc = McSettings {
                passes: 10,
                eps: 1e-6,
            };
            let f = pool_bag(
                &mut g,
                &b,
                xv,
                Pooling::Certainty,
                DropoutMode::Train,
                mc,
                &rng.derive("s", step),
            )
            .unwrap();
            (g.bce(f.pool.z, 1.0).unwrap(), xv)
        };
        let gx = g.backward(loss).unwrap().get(xv).unwrap().clone();
        let live = (0..7)
            .filter(|&r| gx.row(r).iter().any(|&v| v != 0.0))
            .count();
        assert!(live <= 1, "step {step}: {live} rows received gradient");
        exactly_one += usize::from(live == 1);
    }
    assert_eq!(exactly_one, 50);
}
