//! Property tests against independent oracles.

use g5::apocalypse::{assign_labels, cdr_route, cross_source_labels};
use g5::io::{Checkpoint, SchedulePosition};
use g5::model::{g_transformer_layer, GraphSlot, Groups, Mode, ModelConfig, ModelState, Residual};
use g5::preprocess::{
    compute_intimacy_with, hops_from, intimacy_row_push, top_k_context, wl_refine, IntimacyMethod,
};
use g5::tensor::{softmax_rows, Tape, Tensor};
use proptest::prelude::*;

mod common;

use common::oracles::{floyd_warshall, graph, intimacy_oracle, ALPHA, INTIMACY_TOL};

fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..(n * 2)).prop_map(|e| e.into_iter().filter(|(a, b)| a != b).collect()),
        )
    })
}


fn arb_rows(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-5.0f64..5.0, r * c)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_lie_on_the_simplex((r, c, data) in arb_rows(6, 7)) {
        let s = softmax_rows(&Tensor::new(vec![r, c], data).unwrap()).unwrap();
        for i in 0..r {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn intimacy_matches_the_dense_inverse((n, edges) in arb_graph()) {
        let g = graph(n, &edges);
        let oracle = intimacy_oracle(n, &edges);
        for method in [IntimacyMethod::DenseSolve, IntimacyMethod::PowerIteration { tol: 1e-12 }] {
            let s = compute_intimacy_with(&g, ALPHA, method).unwrap();
            for (v, want) in oracle.iter().enumerate() {
                for (got, want) in s.row(v).iter().zip(want) {
                    prop_assert!((got - want).abs() < INTIMACY_TOL, "{method:?} row {v}: {got} vs {want}");
                }
            }
            for j in 0..n {
                let col: f64 = (0..n).map(|i| s.row(i)[j]).sum();
                prop_assert!((col - 1.0).abs() < INTIMACY_TOL);
            }
        }
        for (v, want) in oracle.iter().enumerate() {
            let mut got = vec![0.0; n];
            for (u, x) in intimacy_row_push(&g, v, ALPHA, 1e-14).unwrap() {
                got[u] = x;
            }
            for (a, b) in got.iter().zip(want) {
                prop_assert!((a - b).abs() < INTIMACY_TOL, "push row {v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn top_k_matches_a_full_sort((n, edges) in arb_graph(), k in 1usize..6) {
        let g = graph(n, &edges);
        let s = compute_intimacy_with(&g, ALPHA, IntimacyMethod::DenseSolve).unwrap();
        for v in 0..n {
            let mut all: Vec<(usize, f64)> = s.row(v).iter().copied().enumerate()
                .filter(|&(u, x)| u != v && x > 0.0).collect();
            all.sort_by(|a, b| {
                let key = |x: f64| (x * 1e12).round() as i64;
                key(b.1).cmp(&key(a.1)).then(a.0.cmp(&b.0))
            });
            all.truncate(k);
            let got = top_k_context(&s, v, k).unwrap();
            prop_assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), all.iter().map(|p| p.0).collect::<Vec<_>>());
            prop_assert_eq!(got.len(), k.min(all.len()));
        }
    }

    #[test]
    fn hops_match_all_pairs_shortest_paths((n, edges) in arb_graph(), cap in 1usize..6) {
        let g = graph(n, &edges);
        let fw = floyd_warshall(n, &edges);
        let all: Vec<usize> = (0..n).collect();
        for t in 0..n {
            let got = hops_from(&g, t, &all, cap);
            let want: Vec<usize> = fw[t].iter().map(|&d| d.min(cap)).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn wl_codes_are_invariant_under_relabelling((n, edges) in arb_graph(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = g5::tensor::derived_rng(seed, "perm");
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let moved: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let a = wl_refine(&graph(n, &edges), 2).unwrap();
        let b = wl_refine(&graph(n, &moved), 2).unwrap();
        for v in 0..n {
            prop_assert_eq!(a[v], b[perm[v]]);
        }
    }

    #[test]
    fn resizing_groups_prunes_pads_or_copies(groups in 1usize..4, from in 1usize..6, to in 1usize..8, cols in 1usize..4) {
        let n = groups * from * cols;
        let x = Tensor::new(vec![groups * from, cols], (0..n).map(|i| i as f64 + 1.0).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.resize_groups(xv, groups, from, to).unwrap();
        let y = tape.value(y);
        prop_assert_eq!(y.shape(), &[groups * to, cols]);
        for g in 0..groups {
            for r in 0..to {
                let got = y.row(g * to + r);
                if r < from {
                    prop_assert_eq!(got, x.row(g * from + r));
                } else {
                    prop_assert!(got.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn squash_stays_inside_the_unit_ball((r, c, data) in arb_rows(5, 6)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![r, c], data.clone()).unwrap());
        let y = tape.squash(x).unwrap();
        let y = tape.value(y);
        for i in 0..r {
            let n_in = data[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt();
            let n_out = y.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n_out < 1.0);
            prop_assert!((n_out - n_in * n_in / (1.0 + n_in * n_in)).abs() < 1e-12);
        }
    }

    #[test]
    fn routing_follows_the_direct_transcription(
        sources in 1usize..5, dim in 1usize..5, iterations in 1usize..5,
        data in prop::collection::vec(-2.0f64..2.0, 20),
    ) {
        let u: Vec<Vec<f64>> = (0..sources).map(|l| data[l * dim..(l + 1) * dim].to_vec()).collect();
        let refs: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
        let r = cdr_route(&refs, iterations).unwrap();

        let mut b = vec![0.0; sources];
        let mut v = vec![0.0; dim];
        for it in 0..iterations {
            let e: Vec<f64> = b.iter().map(|x: &f64| x.exp()).collect();
            let z: f64 = e.iter().sum();
            let c: Vec<f64> = e.iter().map(|x| x / z).collect();
            prop_assert!(c.iter().all(|&x| x >= 0.0));
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, w) in c.iter().zip(&r.couplings[it]) {
                prop_assert!((a - w).abs() < 1e-12);
            }
            let s: Vec<f64> = (0..dim).map(|d| (0..sources).map(|l| c[l] * u[l][d]).sum()).collect();
            let ns = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = if ns == 0.0 { vec![0.0; dim] } else { s.iter().map(|x| ns * ns / (1.0 + ns * ns) * x / ns).collect() };
            for l in 0..sources {
                b[l] += (0..dim).map(|d| v[d] * u[l][d]).sum::<f64>();
            }
        }
        for (a, w) in r.v.iter().zip(&v) {
            prop_assert!((a - w).abs() < 1e-12);
        }
        prop_assert!(r.v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1.0);
    }

    #[test]
    fn routing_ignores_source_order(
        data in prop::collection::vec(-2.0f64..2.0, 12), shift in 1usize..3,
    ) {
        let u: Vec<&[f64]> = data.chunks(4).collect();
        let mut rotated = u.clone();
        rotated.rotate_left(shift);
        let a = cdr_route(&u, 3).unwrap();
        let b = cdr_route(&rotated, 3).unwrap();
        for (x, y) in a.v.iter().zip(&b.v) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let mut ab = a.b.clone();
        ab.rotate_left(shift);
        for (x, y) in ab.iter().zip(&b.b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_labels_agree_with_an_argsort((r, c, data) in arb_rows(6, 5)) {
        let t = Tensor::new(vec![r, c], data).unwrap();
        let labels = assign_labels(&t);
        for i in 0..r {
            let mut idx: Vec<usize> = (0..c).collect();
            idx.sort_by(|&a, &b| t.row(i)[b].total_cmp(&t.row(i)[a]).then(a.cmp(&b)));
            prop_assert_eq!(labels[i], idx[0]);
        }
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        heads: 2,
        intermediate: 6,
        core_depth: 2,
        input_depth: 1,
        ..Default::default()
    }
}

fn layer_out(state: &ModelState, z: &Tensor, x: &Tensor, groups: &Groups) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let xv = tape.constant(x.clone());
    let p = &state.core_layers().unwrap()[0];
    let o = g_transformer_layer(&mut tape, &state.store, p, zv, xv, groups, &state.config, &mut Mode::Eval).unwrap();
    (tape.value(o.out).clone(), tape.value(o.attention).clone())
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| t.row(p).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn attention_rows_are_distributions_and_rows_permute(
        z in prop::collection::vec(-1.0f64..1.0, 40), x in prop::collection::vec(-1.0f64..1.0, 40), seed in 0u64..50,
    ) {
        let state = ModelState::new(small_config(), 4, seed).unwrap();
        let groups = Groups { count: 1, rows: 5, valid: vec![5] };
        let z = Tensor::new(vec![5, 8], z).unwrap();
        let x = Tensor::new(vec![5, 8], x).unwrap();
        let (out, att) = layer_out(&state, &z, &x, &groups);
        for row in att.data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        let perm = [3, 0, 4, 1, 2];
        let (out_p, _) = layer_out(&state, &permute_rows(&z, &perm), &permute_rows(&x, &perm), &groups);
        let expect = permute_rows(&out, &perm);
        for (a, b) in out_p.data().iter().zip(expect.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn parameter_count_matches_the_closed_form(
        hidden_half in 1usize..6, inter in 1usize..9, core in 1usize..3, input in 1usize..3,
        feat in 1usize..20, classes in 1usize..6, raw in any::<bool>(),
    ) {
        let d = hidden_half * 2;
        let cfg = ModelConfig {
            hidden: d, heads: 2, intermediate: inter, core_depth: core, input_depth: input,
            residual: if raw { Residual::GraphRaw } else { Residual::None },
            ..Default::default()
        };
        let mut state = ModelState::new(cfg, 3, 0).unwrap();
        state.add_graph("g", GraphSlot { k: 3, feature_dim: feat, num_classes: classes }).unwrap();
        let res = if raw { d * d } else { 0 };
        let layer = 4 * d * d + d + res + 2 * d + (d * inter + inter) + (inter * d + d) + 2 * d;
        let expected = core * layer + (feat * d + d) + input * layer + (d * feat + feat) + (d * classes + classes);
        prop_assert_eq!(state.param_count(), expected);
        let ck = Checkpoint::from_state(&state, SchedulePosition::default(), Default::default());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap().to_state().unwrap();
        prop_assert_eq!(back.named_tensors(), state.named_tensors());
        prop_assert_eq!(back.param_count(), expected);
    }
}

#[test]
fn zero_weight_source_head_gives_uniform_labels() {
    let mut state = ModelState::new(small_config(), 3, 0).unwrap();
    state.add_graph("s", GraphSlot { k: 3, feature_dim: 4, num_classes: 5 }).unwrap();
    for name in ["head.s.cls0.w", "head.s.cls0.b"] {
        let id = state.param_id(name).unwrap();
        let shape = state.store.value(id).shape().to_vec();
        state.store.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let z = Tensor::filled(&[3, 8], 0.7);
    let bank = cross_source_labels(&state, &z, &["s".to_string()]).unwrap();
    assert!(bank[0].probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn source_labels_match_a_linear_softmax_oracle() {
    let mut state = ModelState::new(small_config(), 3, 4).unwrap();
    state.add_graph("s", GraphSlot { k: 3, feature_dim: 4, num_classes: 3 }).unwrap();
    let z = Tensor::new(vec![2, 8], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let w = state.store.value(state.param_id("head.s.cls0.w").unwrap()).clone();
    let b = state.store.value(state.param_id("head.s.cls0.b").unwrap()).clone();
    let got = &cross_source_labels(&state, &z, &["s".to_string()]).unwrap()[0].probs;
    for i in 0..2 {
        let logits: Vec<f64> = (0..3)
            .map(|c| (0..8).map(|j| z.get2(i, j) * w.get2(j, c)).sum::<f64>() + b.data()[c])
            .collect();
        let m = logits.iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            assert!((got.get2(i, c) - e[c] / s).abs() < 1e-14);
        }
    }
}
