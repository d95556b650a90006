//! Reverse-mode gradients against central finite differences.

use g5::graph::synthetic::{generate, SyntheticSpec};
use g5::model::{
    classify, encode, g_transformer_layer, link_logits, reconstruct, GraphSlot, Groups, Mode, ModelConfig, ModelState,
};
use g5::preprocess::{preprocess_graph, PreprocessConfig};
use g5::tensor::{derived_rng, ParamStore, SparseRows, Tape, Tensor, Var};
use g5::Result;
use rand::Rng;

pub const EPS: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-4;
/// Entries checked per parameter tensor.
const SAMPLES_PER_PARAM: usize = 24;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(shape: &[usize], label: &str) -> Tensor {
    let mut rng = derived_rng(3, label);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduce any output to a scalar through a fixed random projection.
fn project(tape: &mut Tape, out: Var, label: &str) -> Result<Var> {
    let r = random(tape.value(out).shape(), &format!("proj/{label}"));
    let r = tape.constant(r);
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

type InputFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn check_inputs(name: &str, inputs: Vec<Tensor>, f: &InputFn) {
    check_inputs_in(&ParamStore::new(), name, inputs, f)
}

/// Like `check_inputs` for closures that also read parameters from `store`.
fn check_inputs_in(store: &ParamStore, name: &str, inputs: Vec<Tensor>, f: &InputFn) {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let l = project(&mut tape, out, name).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let l = project(&mut tape, out, name).unwrap();
    let grads = tape.backward_with_inputs(l, &mut store.clone()).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads[v.index()].clone().unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let e = rel_err(analytic[j], numeric);
            assert!(
                e < REL_TOL,
                "{name}: input {i} entry {j}: analytic {} vs numeric {numeric} (rel {e:.2e})",
                analytic[j]
            );
        }
    }
}

type ParamFn<'a> = dyn Fn(&mut Tape, &ModelState) -> Result<Var> + 'a;

/// Check every parameter whose name starts with one of `prefixes`.
fn check_params(name: &str, state: &ModelState, prefixes: &[&str], f: &ParamFn) -> usize {
    let eval = |s: &ModelState| -> f64 {
        let mut tape = Tape::new();
        let out = f(&mut tape, s).unwrap();
        let l = project(&mut tape, out, name).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut grads_state = state.clone();
    let mut tape = Tape::new();
    let out = f(&mut tape, &grads_state).unwrap();
    let l = project(&mut tape, out, name).unwrap();
    grads_state.store.zero_grad();
    tape.backward(l, &mut grads_state.store).unwrap();

    let mut checked = 0;
    let ids: Vec<_> = grads_state.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, pname) in ids {
        if !prefixes.iter().any(|p| pname.starts_with(p)) {
            continue;
        }
        let len = grads_state.store.get(id).value.len();
        let analytic = grads_state.store.get(id).grad.clone().unwrap_or_else(|| vec![0.0; len]);
        let stride = (len / SAMPLES_PER_PARAM).max(1);
        for j in (0..len).step_by(stride) {
            let mut plus = state.clone();
            plus.store.get_mut(id).value.data_mut()[j] += EPS;
            let mut minus = state.clone();
            minus.store.get_mut(id).value.data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let e = rel_err(analytic[j], numeric);
            assert!(
                e < REL_TOL,
                "{name}: {pname}[{j}]: analytic {} vs numeric {numeric} (rel {e:.2e})",
                analytic[j]
            );
            checked += 1;
        }
    }
    checked
}

fn away_from_zero(t: Tensor) -> Tensor {
    let data = t.data().iter().map(|&x| x.signum() * (x.abs() + 0.2)).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

pub fn dense_algebra() {
    check_inputs("matmul", vec![random(&[3, 4], "a"), random(&[4, 2], "b")], &|t, v| t.matmul(v[0], v[1]));
    check_inputs("add_bias", vec![random(&[3, 4], "a"), random(&[4], "b")], &|t, v| t.add_bias(v[0], v[1]));
    check_inputs("add", vec![random(&[3, 4], "a"), random(&[3, 4], "b")], &|t, v| t.add(v[0], v[1]));
    check_inputs("sub", vec![random(&[3, 4], "a"), random(&[3, 4], "b")], &|t, v| t.sub(v[0], v[1]));
    check_inputs("mul", vec![random(&[3, 4], "a"), random(&[3, 4], "b")], &|t, v| t.mul(v[0], v[1]));
    check_inputs("scale", vec![random(&[3, 4], "a")], &|t, v| Ok(t.scale(v[0], -1.7)));
    let c = random(&[3, 4], "c");
    check_inputs("add_const", vec![random(&[3, 4], "a")], &|t, v| t.add_const(v[0], &c));
    let sparse = SparseRows::from_dense(&away_from_zero(random(&[4, 6], "s")));
    check_inputs("sparse_matmul", vec![random(&[6, 3], "w")], &|t, v| t.sparse_matmul(sparse.clone(), v[0]));
}

pub fn activations_and_normalisation() {
    check_inputs("relu", vec![away_from_zero(random(&[3, 5], "a"))], &|t, v| Ok(t.relu(v[0])));
    check_inputs("gelu", vec![random(&[3, 5], "a")], &|t, v| Ok(t.gelu(v[0])));
    check_inputs("softmax rows", vec![random(&[3, 5], "a")], &|t, v| t.softmax(v[0]));
    check_inputs("softmax batched", vec![random(&[2, 3, 4], "a")], &|t, v| t.softmax(v[0]));
    check_inputs(
        "layer_norm",
        vec![random(&[4, 6], "x"), random(&[6], "g"), random(&[6], "b")],
        &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-12),
    );
    let mask: Vec<f64> = (0..15).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
    check_inputs("dropout_mask", vec![random(&[3, 5], "a")], &|t, v| t.dropout_mask(v[0], mask.clone()));
    check_inputs("squash", vec![random(&[4, 3], "a")], &|t, v| t.squash(v[0]));
    check_inputs("row_norm", vec![away_from_zero(random(&[4, 3], "a"))], &|t, v| t.row_norm(v[0]));
}

pub fn reshaping_and_grouping() {
    check_inputs("gather_rows", vec![random(&[5, 3], "a")], &|t, v| {
        t.gather_rows(v[0], vec![Some(4), None, Some(1), Some(4)])
    });
    check_inputs("split_heads", vec![random(&[6, 4], "a")], &|t, v| t.split_heads(v[0], 2, 3, 2));
    check_inputs("merge_heads", vec![random(&[4, 3, 2], "a")], &|t, v| t.merge_heads(v[0], 2, 2));
    check_inputs("batch_matmul_nt", vec![random(&[2, 3, 4], "a"), random(&[2, 5, 4], "b")], &|t, v| {
        t.batch_matmul_nt(v[0], v[1])
    });
    check_inputs("batch_matmul", vec![random(&[2, 3, 5], "a"), random(&[2, 5, 4], "b")], &|t, v| {
        t.batch_matmul(v[0], v[1])
    });
    check_inputs("resize_groups pad", vec![random(&[6, 4], "a")], &|t, v| t.resize_groups(v[0], 2, 3, 5));
    check_inputs("resize_groups prune", vec![random(&[6, 4], "a")], &|t, v| t.resize_groups(v[0], 2, 3, 2));
    check_inputs("group_mean", vec![random(&[6, 4], "a")], &|t, v| t.group_mean(v[0], 2, 3));
    check_inputs("row_dot", vec![random(&[4, 3], "a"), random(&[4, 3], "b")], &|t, v| t.row_dot(v[0], v[1]));
    check_inputs("scale_rows", vec![random(&[4, 3], "a")], &|t, v| {
        t.scale_rows(v[0], vec![0.5, -1.0, 2.0, 0.0])
    });
}

pub fn reductions_and_losses() {
    check_inputs("sum", vec![random(&[3, 4], "a")], &|t, v| Ok(t.sum(v[0])));
    check_inputs("mean", vec![random(&[3, 4], "a")], &|t, v| t.mean(v[0]));
    check_inputs("cross_entropy", vec![random(&[4, 3], "a")], &|t, v| {
        let p = t.softmax(v[0])?;
        t.cross_entropy(p, vec![0, 2, 1, 2])
    });
    let target = random(&[3, 4], "t");
    check_inputs("mse", vec![random(&[3, 4], "a")], &|t, v| t.mse(v[0], target.clone()));
    check_inputs("bce_with_logits", vec![random(&[5], "a")], &|t, v| {
        t.bce_with_logits(v[0], vec![1.0, 0.0, 1.0, 1.0, 0.0])
    });
}

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        heads: 2,
        intermediate: 8,
        core_depth: 1,
        input_depth: 1,
        ..Default::default()
    }
}

fn small_state(config: ModelConfig) -> (ModelState, g5::graph::GraphDataset) {
    let g = generate(
        "toy",
        &SyntheticSpec {
            nodes: 12,
            feature_dim: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let mut s = ModelState::new(config, 3, 2).unwrap();
    s.add_graph(
        "toy",
        GraphSlot {
            k: 4,
            feature_dim: 10,
            num_classes: 3,
        },
    )
    .unwrap();
    (s, g)
}

fn layer_case(cfg: ModelConfig, train: bool, label: &str) {
    let (state, _) = small_state(cfg.clone());
    let groups = Groups {
        count: 2,
        rows: 4,
        valid: vec![4, 2],
    };
    let z = random(&[8, 8], "z");
    let x = random(&[8, 8], "x");
    let run = |t: &mut Tape, s: &ModelState, zv: Var, xv: Var| -> Result<Var> {
        let p = &s.core_layers()?[0];
        let mut rng = derived_rng(1, "mask");
        let mut mode = if train { Mode::Train(&mut rng) } else { Mode::Eval };
        Ok(g_transformer_layer(t, &s.store, p, zv, xv, &groups, &s.config, &mut mode)?.out)
    };
    let n = check_params(label, &state, &["core.layer0."], &|t, s| {
        let zv = t.constant(z.clone());
        let xv = t.constant(x.clone());
        run(t, s, zv, xv)
    });
    assert!(n > 100, "{label}: only {n} entries checked");
    check_inputs_in(&state.store, label, vec![z.clone(), x.clone()], &|t, v| run(t, &state, v[0], v[1]));
}

pub fn transformer_layer_eval() {
    layer_case(small_config(), false, "layer eval");
}

pub fn transformer_layer_with_dropout() {
    layer_case(small_config(), true, "layer train");
}

pub fn transformer_layer_masked_without_residual() {
    let cfg = ModelConfig {
        mask_padding: true,
        residual: g5::model::Residual::None,
        ..small_config()
    };
    layer_case(cfg, false, "layer masked");
}

pub fn heads() {
    let (state, _) = small_state(small_config());
    let z = random(&[5, 8], "z");
    check_params("classify", &state, &["head.toy.cls"], &|t, s| {
        let zv = t.constant(z.clone());
        classify(t, s, "toy", zv)
    });
    check_inputs_in(&state.store, "classify z", vec![z.clone()], &|t, v| classify(t, &state, "toy", v[0]));
    check_params("reconstruct", &state, &["head.toy.recon"], &|t, s| {
        let zv = t.constant(z.clone());
        reconstruct(t, s, "toy", zv)
    });
    check_inputs("link_logits", vec![z.clone(), random(&[5, 8], "z2")], &|t, v| link_logits(t, v[0], v[1]));
}

pub fn whole_encoder() {
    let (state, g) = small_state(small_config());
    let batch = preprocess_graph(&g, 4, &PreprocessConfig::default()).unwrap();
    let targets = [0, 3, 7];
    let n = check_params("encode", &state, &["core.", "input.toy."], &|t, s| {
        Ok(encode(t, s, &g, &batch, &targets, &mut Mode::Eval)?.z)
    });
    assert!(n > 200);
}
