use std::rc::Rc;

use mhairl_core::graph::{reverse_grad, Graph, SparseRows};
use mhairl_core::nn::{self, Gru, Input, Mha};
use mhairl_core::{gradcheck, math, rng, Error, ParamSet, Tensor};
use proptest::prelude::*;

fn vecp(p: &mut ParamSet, name: &str, v: Vec<f64>) -> mhairl_core::ParamId {
    p.add(name, Tensor::vector(v).unwrap()).unwrap()
}

#[test]
fn sum_gradient_is_ones() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "p", vec![0.3, -1.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&p, id);
    let s = g.sum(x);
    reverse_grad(&g, s, &mut p).unwrap();
    assert_eq!(p.grad(id).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn square_gradient() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "p", vec![2.0]);
    let mut g = Graph::new();
    let x = g.param(&p, id);
    let y = g.mul(x, x);
    let s = g.sum(y);
    reverse_grad(&g, s, &mut p).unwrap();
    assert_eq!(p.grad(id).data(), &[4.0]);
}

#[test]
fn accumulators_are_zeroed_first() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "p", vec![1.0, 1.0]);
    for _ in 0..3 {
        let mut g = Graph::new();
        let x = g.param(&p, id);
        let s = g.sum(x);
        reverse_grad(&g, s, &mut p).unwrap();
    }
    assert_eq!(p.grad(id).data(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_output_is_contract_error() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "p", vec![1.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&p, id);
    assert!(matches!(reverse_grad(&g, x, &mut p), Err(Error::Contract(_))));
}

#[test]
fn non_finite_intermediate_names_node() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "p", vec![800.0]);
    let mut g = Graph::new();
    let x = g.param(&p, id);
    let e = g.exp(x);
    let s = g.sum(e);
    assert_eq!(reverse_grad(&g, s, &mut p), Err(Error::NonFinite { node: e.index() }));
}

#[test]
fn random_two_layer_network_matches_finite_differences() {
    let mut r = rng::stream(11);
    let mut p = ParamSet::new();
    let mlp = nn::Mlp::new(&mut p, "net", 3, &[5], 2, false, &mut r).unwrap();
    let x = Tensor::matrix(4, 3, (0..12).map(|_| rng::normal(&mut r)).collect()).unwrap();
    let report = gradcheck::check(&p, 1e-6, |ps| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, ps, &Input::Dense(xv));
        let t = g.tanh(y);
        let s = g.sum(t);
        (g, s)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, report) in gradcheck::primitive_suite(100, 5).unwrap() {
        assert!(report.max_rel_err < 1e-5, "{name}: {report:?}");
        assert!(report.checked > 0);
    }
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

fn identity_mha(p: &mut ParamSet, d: usize) -> Mha {
    let mut r = rng::stream(0);
    let m = Mha::new(p, "mha", d, d, 1, &mut r).unwrap();
    for name in ["mha.q0", "mha.k0", "mha.v0", "mha.o"] {
        p.set(name, identity(d)).unwrap();
    }
    m
}

#[test]
fn mha_single_pair_returns_value() {
    let mut p = ParamSet::new();
    let m = identity_mha(&mut p, 3);
    let mut g = Graph::new();
    let q = g.constant(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
    let k = g.constant(Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
    let v = g.constant(Tensor::matrix(1, 3, vec![3.0, 4.0, -5.0]).unwrap());
    let out = m.forward(&mut g, &p, q, k, v);
    assert_eq!(g.value(out).data(), &[3.0, 4.0, -5.0]);
}

#[test]
fn mha_identical_keys_average_values() {
    let mut p = ParamSet::new();
    let m = identity_mha(&mut p, 2);
    let mut g = Graph::new();
    let q = g.constant(Tensor::matrix(1, 2, vec![0.7, 0.1]).unwrap());
    let k = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap());
    let v = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 4.0]).unwrap());
    let out = m.forward(&mut g, &p, q, k, v);
    let o = g.value(out).data();
    assert!((o[0] - 2.0).abs() < 1e-15 && (o[1] - 2.0).abs() < 1e-15, "{o:?}");
}

/// Straight-line attention: explicit loops, no graph.
fn reference_mha(p: &ParamSet, heads: usize, d: usize, q: &[f64], k: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    let mat = |name: &str| p.value(p.id(name).unwrap()).data().to_vec();
    let proj = |x: &[f64], w: &[f64], rows: usize| {
        let mut o = vec![0.0; rows * d];
        for i in 0..rows {
            for c in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += x[i * d + j] * w[j * d + c];
                }
                o[i * d + c] = s;
            }
        }
        o
    };
    let mut cat = Vec::new();
    for h in 0..heads {
        let qh = proj(q, &mat(&format!("mha.q{h}")), 1);
        let kh = proj(k, &mat(&format!("mha.k{h}")), n);
        let vh = proj(v, &mat(&format!("mha.v{h}")), n);
        let mut logits: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|j| qh[j] * kh[i * d + j]).sum())
            .collect();
        math::log_softmax_in_place(&mut logits);
        let w: Vec<f64> = logits.iter().map(|l| math::exp(*l)).collect();
        for c in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += w[i] * vh[i * d + c];
            }
            cat.push(s);
        }
    }
    let wo = mat("mha.o");
    (0..d)
        .map(|c| {
            let mut s = 0.0;
            for j in 0..heads * d {
                s += cat[j] * wo[j * d + c];
            }
            s
        })
        .collect()
}

#[test]
fn mha_matches_straight_line_reference_bitwise() {
    let mut r = rng::stream(21);
    for trial in 0..20 {
        let (d, n) = (4, 3 + trial % 3);
        let mut p = ParamSet::new();
        let m = Mha::new(&mut p, "mha", d, d, 2, &mut r).unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
        let k: Vec<f64> = (0..n * d).map(|_| rng::normal(&mut r)).collect();
        let v: Vec<f64> = (0..n * d).map(|_| rng::normal(&mut r)).collect();
        let mut g = Graph::new();
        let qv = g.constant(Tensor::matrix(1, d, q.clone()).unwrap());
        let kv = g.constant(Tensor::matrix(n, d, k.clone()).unwrap());
        let vv = g.constant(Tensor::matrix(n, d, v.clone()).unwrap());
        let (weights, out) = m.forward_with_weights(&mut g, &p, qv, kv, vv);
        let expect = reference_mha(&p, 2, d, &q, &k, &v, n);
        let got = g.value(out).data();
        for (a, b) in got.iter().zip(&expect) {
            assert_eq!(a.to_bits(), b.to_bits(), "{got:?} vs {expect:?}");
        }
        for w in weights {
            let w = g.value(w).data();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
#[should_panic(expected = "mha")]
fn mha_shape_mismatch_panics() {
    let mut p = ParamSet::new();
    let m = identity_mha(&mut p, 3);
    let mut g = Graph::new();
    let q = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let k = g.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
    m.forward(&mut g, &p, q, k, k);
}

fn zero_gru(hidden: usize) -> (ParamSet, Gru) {
    let mut p = ParamSet::new();
    let cell = Gru::new(&mut p, "gru", 2, hidden, &mut rng::stream(0)).unwrap();
    for (_, name, t) in p.clone().iter() {
        p.set(name, Tensor::zeros(t.shape())).unwrap();
    }
    (p, cell)
}

#[test]
fn gru_zero_weights_halves_state() {
    let (p, cell) = zero_gru(1);
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
    let h = g.constant(Tensor::matrix(1, 1, vec![0.8]).unwrap());
    let h2 = cell.step(&mut g, &p, &Input::Dense(x), h);
    assert!((g.value(h2).item() - 0.4).abs() < 1e-15);
    let z = g.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    let h3 = cell.step(&mut g, &p, &Input::Dense(x), z);
    assert_eq!(g.value(h3).item(), 0.0);
}

#[test]
fn gru_random_weights_gradient() {
    let mut r = rng::stream(4);
    let mut p = ParamSet::new();
    let cell = Gru::new(&mut p, "gru", 3, 5, &mut r).unwrap();
    for (_, name, t) in p.clone().iter() {
        let data = (0..t.len()).map(|_| rng::normal(&mut r) * 0.5).collect();
        p.set(name, Tensor::new(t.shape().to_vec(), data).unwrap()).unwrap();
    }
    let x = Tensor::matrix(2, 3, (0..6).map(|_| rng::normal(&mut r)).collect()).unwrap();
    let h = Tensor::matrix(2, 5, (0..10).map(|_| rng::normal(&mut r) * 0.5).collect()).unwrap();
    let report = gradcheck::check(&p, 1e-6, |ps| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let hv = g.constant(h.clone());
        let h2 = cell.step(&mut g, ps, &Input::Dense(xv), hv);
        let s = g.sum(h2);
        (g, s)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn gru_sparse_and_dense_inputs_agree() {
    let mut r = rng::stream(8);
    let mut p = ParamSet::new();
    let cell = Gru::new(&mut p, "gru", 4, 3, &mut r).unwrap();
    let mut sp = SparseRows::new(4);
    sp.push_row(vec![(1, 1.0), (3, 0.5)]);
    let sp = Rc::new(sp);
    let mut g = Graph::new();
    let dense = g.constant(sp.to_dense());
    let h = g.constant(Tensor::matrix(1, 3, vec![0.1, 0.2, -0.3]).unwrap());
    let a = cell.step(&mut g, &p, &Input::Sparse(sp), h);
    let b = cell.step(&mut g, &p, &Input::Dense(dense), h);
    assert_eq!(g.value(a), g.value(b));
}

#[test]
fn categorical_examples() {
    assert!((nn::logprob_categorical(&[0.0; 4], 2).unwrap() - 0.25f64.ln()).abs() < 1e-15);
    let v = nn::logprob_categorical(&[10.0, -10.0], 0).unwrap();
    assert!((v - -(-20.0f64).exp().ln_1p()).abs() < 1e-20, "{v}");
    assert!((v + 2.06e-9).abs() < 1e-11);
    assert!(matches!(nn::logprob_categorical(&[0.0, 1.0], 2), Err(Error::Contract(_))));
}

#[test]
fn gaussian_examples() {
    let a = nn::logprob_gaussian(&[0.0], &[0.0], &[0.0]).unwrap();
    assert!((a + 0.918938533204673).abs() < 1e-12);
    let b = nn::logprob_gaussian(&[0.0], &[0.0], &[1.0]).unwrap();
    assert!((b + 1.418938533204673).abs() < 1e-12);
    let two = nn::logprob_gaussian(&[0.3, -1.0], &[0.2, -0.5], &[1.0, 2.0]).unwrap();
    let s = nn::logprob_gaussian(&[0.3], &[0.2], &[1.0]).unwrap()
        + nn::logprob_gaussian(&[-1.0], &[-0.5], &[2.0]).unwrap();
    assert_eq!(two, s);
    assert!(nn::logprob_gaussian(&[0.0], &[0.0, 1.0], &[0.0]).is_err());
}

#[test]
fn gaussian_graph_matches_plain() {
    let mut g = Graph::new();
    let m = g.constant(Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap());
    let ls = g.constant(Tensor::matrix(1, 2, vec![0.2, -0.5]).unwrap());
    let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let lp = nn::gaussian_logprob(&mut g, m, ls, x);
    let plain = nn::logprob_gaussian(&[0.3, -1.0], &[0.2, -0.5], &[1.0, 2.0]).unwrap();
    assert!((g.value(lp).item() - plain).abs() < 1e-12);
}

#[test]
fn softmax_survives_extreme_logits() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1e3, -1e3, 999.0]).unwrap());
    let s = g.softmax(x);
    let ls = g.log_softmax(x);
    assert!(g.value(s).is_finite() && g.value(ls).is_finite());
    assert!((g.value(s).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn clipped_surrogate_zero_gradient_when_clipped() {
    let mut p = ParamSet::new();
    let id = vecp(&mut p, "lr", vec![0.5f64, 0.0]);
    let mut g = Graph::new();
    let lr = g.param(&p, id);
    let s = g.clipped_surrogate(lr, Rc::from(vec![1.0, 1.0]), 0.2);
    let o = g.sum(s);
    reverse_grad(&g, o, &mut p).unwrap();
    assert_eq!(p.grad(id).data()[0], 0.0);
    assert_eq!(p.grad(id).data()[1], 1.0);
}

proptest! {
    #[test]
    fn categorical_normalizes(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let lps: Vec<f64> = (0..logits.len()).map(|i| nn::logprob_categorical(&logits, i).unwrap()).collect();
        prop_assert!(math::logsumexp(&lps).abs() < 1e-12);
    }

    #[test]
    fn tensor_rejects_non_finite(pos in 0usize..4, bad in prop::sample::select(vec![f64::NAN, f64::INFINITY, f64::NEG_INFINITY])) {
        let mut data = vec![1.0; 4];
        data[pos] = bad;
        prop_assert_eq!(Tensor::new(vec![2, 2], data), Err(Error::NonFiniteData { index: pos }));
    }

    #[test]
    fn attention_weights_are_distributions(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng::stream(seed);
        let mut p = ParamSet::new();
        let m = Mha::new(&mut p, "mha", 3, 3, 2, &mut r).unwrap();
        let mut g = Graph::new();
        let q = g.constant(Tensor::matrix(2, 3, (0..6).map(|_| 5.0 * rng::normal(&mut r)).collect()).unwrap());
        let k = g.constant(Tensor::matrix(n, 3, (0..3 * n).map(|_| 5.0 * rng::normal(&mut r)).collect()).unwrap());
        let (ws, _) = m.forward_with_weights(&mut g, &p, q, k, k);
        for w in ws {
            for row in g.value(w).data().chunks(n) {
                prop_assert!(row.iter().all(|&x| x >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
