//! Recorded gradients against central finite differences.

mod common;

use std::sync::Arc;

use common::{random_batch, random_graphs, rng, uniform, unit_rows};
use groupcl::data::batch_graphs;
use groupcl::gin::{GinConfig, GinEncoder, GraphInput, ProjectionHead, readout_projection};
use groupcl::numeric::{
    check_param_set, finite_difference_check, Axis, ParamSet, Segments, SparseMatrix, Tape,
    Tensor, Var, DEFAULT_EPSILON,
};
use groupcl::objectives::{
    club_param_penalty, interspace_penalty_nonparam, js_mi_loss, js_mi_terms, total_loss,
    varnet_likelihood_loss, InterSpace, Pairing, VarNet,
};
use groupcl::representor::{Representor, RepresentorConfig};
use groupcl::trainer::{Estimator, Model, Pipeline, RunConfig};
use groupcl::Result;

const TOL: f64 = 1e-4;

fn assert_grad<F>(name: &str, f: F, inputs: &[Tensor])
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let err = finite_difference_check(f, inputs, DEFAULT_EPSILON).unwrap();
    assert!(err <= TOL, "{name}: max relative error {err}");
}

/// `sum(out ⊙ w)` for a fixed random `w`, so every output entry matters.
fn weighted(t: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = t.shape(out);
    let w = t.constant(uniform(&mut rng(seed), r, c, -1.0, 1.0));
    let prod = t.mul(out, w)?;
    t.sum(prod)
}

fn segs(ranges: &[std::ops::Range<usize>]) -> Segments {
    Arc::from(ranges.to_vec())
}

#[test]
fn elementwise_primitives() {
    let mut r = rng(1);
    let a = uniform(&mut r, 3, 4, -2.0, 2.0);
    let pos = uniform(&mut r, 3, 4, 0.5, 2.0);
    let unary: Vec<(&str, fn(&mut Tape, Var) -> Result<Var>)> = vec![
        ("relu", |t, x| t.relu(x)),
        ("exp", |t, x| t.exp(x)),
        ("softplus", |t, x| t.softplus(x)),
        ("square", |t, x| t.square(x)),
        ("negate", |t, x| t.neg(x)),
        ("transpose", |t, x| t.transpose(x)),
        ("scale", |t, x| t.scale(x, -1.7)),
        ("row-softmax", |t, x| t.row_softmax(x)),
        ("row-l2-normalize", |t, x| t.row_l2_normalize(x)),
        ("sum-rows", |t, x| t.sum_rows(x)),
        ("slice-cols", |t, x| t.slice_cols(x, 1, 3)),
    ];
    for (i, (name, op)) in unary.into_iter().enumerate() {
        assert_grad(
            name,
            |t, v| {
                let y = op(t, v[0])?;
                weighted(t, y, 100 + i as u64)
            },
            &[a.clone()],
        );
    }
    assert_grad(
        "log",
        |t, v| {
            let y = t.log(v[0])?;
            weighted(t, y, 7)
        },
        &[pos],
    );
    assert_grad("sum", |t, v| t.sum(v[0]), &[a.clone()]);
    assert_grad("mean", |t, v| t.mean(v[0]), &[a]);
}

#[test]
fn binary_primitives() {
    let mut r = rng(2);
    let a = uniform(&mut r, 3, 4, -2.0, 2.0);
    let b = uniform(&mut r, 3, 4, -2.0, 2.0);
    let c = uniform(&mut r, 4, 2, -2.0, 2.0);
    let row = uniform(&mut r, 1, 4, -2.0, 2.0);
    let col = uniform(&mut r, 3, 1, -2.0, 2.0);
    let s = uniform(&mut r, 1, 1, -2.0, 2.0);
    assert_grad(
        "matmul",
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, 1)
        },
        &[a.clone(), c],
    );
    for (name, rhs) in [("same", &b), ("row", &row), ("col", &col), ("scalar", &s)] {
        assert_grad(
            &format!("add-{name}"),
            |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted(t, y, 2)
            },
            &[a.clone(), rhs.clone()],
        );
        assert_grad(
            &format!("mul-{name}"),
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted(t, y, 3)
            },
            &[a.clone(), rhs.clone()],
        );
        assert_grad(
            &format!("sub-{name}"),
            |t, v| {
                let y = t.sub(v[0], v[1])?;
                weighted(t, y, 4)
            },
            &[a.clone(), rhs.clone()],
        );
    }
    assert_grad(
        "row-dot",
        |t, v| {
            let y = t.row_dot(v[0], v[1])?;
            weighted(t, y, 5)
        },
        &[a.clone(), b.clone()],
    );
    for axis in [Axis::Rows, Axis::Cols] {
        assert_grad(
            "concat",
            |t, v| {
                let y = t.concat(&[v[0], v[1]], axis)?;
                weighted(t, y, 6)
            },
            &[a.clone(), b.clone()],
        );
    }
}

#[test]
fn segment_and_sparse_primitives() {
    let mut r = rng(3);
    let x = uniform(&mut r, 6, 3, -2.0, 2.0);
    let s = segs(&[0..2, 2..3, 3..6]);
    assert_grad(
        "segment-softmax",
        |t, v| {
            let y = t.segment_softmax(v[0], &s)?;
            weighted(t, y, 8)
        },
        &[x.clone()],
    );
    assert_grad(
        "segment-sum",
        |t, v| {
            let y = t.segment_sum(v[0], &s)?;
            weighted(t, y, 9)
        },
        &[x.clone()],
    );
    let adj = Arc::new(
        SparseMatrix::new(6, 6, vec![(0, 1, 1.0), (1, 0, 1.0), (3, 5, 1.0), (5, 3, 1.0), (4, 4, 2.0)])
            .unwrap(),
    );
    assert_grad(
        "sparse-matmul",
        |t, v| {
            let y = t.sparse_matmul(&adj, v[0])?;
            weighted(t, y, 10)
        },
        &[x],
    );
}

fn small_gin(input_dim: usize, learn_eps: bool) -> (GinEncoder, ParamSet) {
    let enc = GinEncoder::new(
        "enc",
        GinConfig {
            input_dim,
            hidden_dim: 4,
            layers: 2,
            node_dim: 5,
            learn_eps,
            eps: 0.1,
        },
    );
    let mut params = ParamSet::new();
    enc.init(&mut params, &mut rng(11));
    (enc, params)
}

#[test]
fn gin_forward() {
    let mut r = rng(4);
    let batch = random_batch(&mut r, 3, 6, 3);
    for learn_eps in [false, true] {
        let (enc, params) = small_gin(3, learn_eps);
        let err = check_param_set(
            |t, vars| {
                let input = GraphInput::new(t, &batch);
                let u = enc.encode_nodes(t, vars, &input)?;
                weighted(t, u, 12)
            },
            &params,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err <= TOL, "gin (learn_eps={learn_eps}): {err}");
    }
}

#[test]
fn readout_projection_head() {
    let mut r = rng(5);
    let batch = random_batch(&mut r, 3, 6, 3);
    let (enc, mut params) = small_gin(3, false);
    let head = ProjectionHead::new("head", 5, 6);
    head.init(&mut params, &mut r);
    let err = check_param_set(
        |t, vars| {
            let input = GraphInput::new(t, &batch);
            let u = enc.encode_nodes(t, vars, &input)?;
            let h = readout_projection(t, vars, u, &input.segments, &head)?;
            weighted(t, h, 13)
        },
        &params,
        DEFAULT_EPSILON,
    )
    .unwrap();
    assert!(err <= TOL, "readout: {err}");
}

fn small_representor(node_dim: usize) -> (Representor, ParamSet) {
    let rep = Representor::new(
        "rep",
        RepresentorConfig {
            node_dim,
            key_dim: 3,
            groups: 3,
            embed_dim: 15,
            scale_scores: false,
        },
    )
    .unwrap();
    let mut params = ParamSet::new();
    rep.init(&mut params, &mut rng(21));
    (rep, params)
}

#[test]
fn representor_forward() {
    let mut r = rng(6);
    let batch = random_batch(&mut r, 3, 6, 4);
    let (rep, params) = small_representor(4);
    let err = check_param_set(
        |t, vars| {
            let u = t.constant(batch.features().clone());
            let ge = rep.forward(t, vars, u, batch.segments())?;
            let mut parts = Vec::new();
            for (k, &g) in ge.groups.iter().enumerate() {
                parts.push(weighted(t, g, 30 + k as u64)?);
            }
            parts.push(weighted(t, ge.attention, 40)?);
            let all = t.concat(&parts, Axis::Cols)?;
            t.sum(all)
        },
        &params,
        DEFAULT_EPSILON,
    )
    .unwrap();
    assert!(err <= TOL, "representor: {err}");

    // Gradient with respect to the node embeddings themselves.
    let u0 = batch.features().clone();
    let err = finite_difference_check(
        |t, v| {
            let vars = params.bind(t, false);
            let ge = rep.forward(t, &vars, v[0], batch.segments())?;
            let all = t.concat(&ge.groups, Axis::Cols)?;
            weighted(t, all, 41)
        },
        &[u0],
        DEFAULT_EPSILON,
    )
    .unwrap();
    assert!(err <= TOL, "representor wrt U: {err}");
}

fn groups(seed: u64, b: usize, p: usize, d: usize) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..p).map(|_| unit_rows(&mut r, b, d)).collect()
}

#[test]
fn js_mi_loss_gradient() {
    let mut inputs = groups(50, 3, 3, 5);
    inputs.extend(groups(51, 3, 3, 5));
    assert_grad(
        "js-mi-loss",
        |t, v| js_mi_loss(t, &v[..3], &v[3..]),
        &inputs,
    );
    // Masked pairing with unequal sides: 2 graphs against 5 nodes.
    let mut inputs = groups(52, 2, 3, 5);
    inputs.extend(groups(53, 5, 3, 5));
    let mask = Tensor::new(2, 5, vec![1., 1., 0., 0., 0., 0., 0., 1., 1., 1.]).unwrap();
    assert_grad(
        "js-mi-loss masked",
        |t, v| {
            let terms = js_mi_terms(t, &v[..3], &v[3..], &Pairing::Mask(mask.clone()))?;
            t.add(terms.positive, terms.negative)
        },
        &inputs,
    );
}

#[test]
fn interspace_nonparam_gradient() {
    assert_grad(
        "interspace-nonparam",
        |t, v| Ok(interspace_penalty_nonparam(t, v)?.value),
        &groups(60, 3, 3, 5),
    );
}

#[test]
fn club_param_and_varnet_gradients() {
    let varnet = VarNet::new("vn", 5, 4);
    let mut vparams = ParamSet::new();
    varnet.init(&mut vparams, &mut rng(70));
    let g = groups(71, 3, 3, 5);

    // Encoder side: gradient reaches the groups, varnet held constant.
    assert_grad(
        "club-param wrt groups",
        |t, v| {
            let vars = vparams.bind(t, false);
            Ok(club_param_penalty(t, v, &varnet, &vars)?.value)
        },
        &g,
    );
    // Varnet side: groups held constant.
    for (name, sign) in [("club-param", 1.0), ("varnet-likelihood", -1.0)] {
        let err = check_param_set(
            |t, vars| {
                let u: Vec<Var> = g.iter().map(|x| t.constant(x.clone())).collect();
                if sign > 0.0 {
                    Ok(club_param_penalty(t, &u, &varnet, vars)?.value)
                } else {
                    varnet_likelihood_loss(t, &u, &varnet, vars)
                }
            },
            &vparams,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err <= TOL, "{name} wrt varnet: {err}");
    }
}

#[test]
fn total_losses() {
    let mut inputs = groups(80, 3, 3, 5);
    inputs.extend(groups(81, 3, 3, 5));
    for lambda in [0.0, 0.5, 2.0] {
        assert_grad(
            "total nonparam",
            |t, v| {
                Ok(total_loss(t, &v[..3], &v[3..], &Pairing::SameIndex, lambda, InterSpace::NonParam)?.0)
            },
            &inputs,
        );
    }
    let varnet = VarNet::new("vn", 5, 5);
    let mut vparams = ParamSet::new();
    varnet.init(&mut vparams, &mut rng(82));
    assert_grad(
        "total param",
        |t, v| {
            let vars = vparams.bind(t, false);
            let inter = InterSpace::Param { varnet: &varnet, vars: &vars };
            Ok(total_loss(t, &v[..3], &v[3..], &Pairing::SameIndex, 0.5, inter)?.0)
        },
        &inputs,
    );
}

fn tiny_config(pipeline: Pipeline, estimator: Estimator, tie_views: bool) -> RunConfig {
    RunConfig {
        pipeline,
        estimator,
        tie_views,
        groups: 3,
        embed_dim: 15,
        key_dim: 3,
        gin_layers: 2,
        gin_hidden: 8,
        node_dim: 4,
        learn_eps: true,
        batch_size: 3,
        ..RunConfig::default()
    }
}

/// Zero-initialised biases put masked (all-zero) feature rows exactly on the
/// ReLU kink, where central differences are meaningless. Move them off it.
fn jitter_biases(model: &mut Model) {
    let mut r = rng(99);
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with(".b") {
            *t = uniform(&mut r, t.rows(), t.cols(), -0.5, 0.5);
        }
    }
}

/// The full pipeline loss, end to end from encoder weights.
#[test]
fn end_to_end_model_losses() {
    let mut r = rng(90);
    let graphs = random_graphs(&mut r, 3, 6, 3);
    let refs: Vec<_> = graphs.iter().collect();
    let cases = [
        (Pipeline::GroupCl, Estimator::NonParam, true),
        (Pipeline::GroupCl, Estimator::NonParam, false),
        (Pipeline::GroupCl, Estimator::Param, true),
        (Pipeline::GroupIg, Estimator::NonParam, true),
        (Pipeline::GraphClBaseline, Estimator::NonParam, true),
    ];
    for (pipeline, estimator, tie) in cases {
        let cfg = tiny_config(pipeline, estimator, tie);
        let mut model = Model::init(&cfg, 3).unwrap();
        jitter_biases(&mut model);
        let err = check_param_set(
            |t, vars| {
                let (u, r, pairing) = model.contrastive_views(t, vars, &refs, &[0, 1, 2], 0)?;
                let vvars = model.varnet_params().bind(t, false);
                let inter = match &model.architecture().varnet {
                    Some(varnet) => InterSpace::Param { varnet, vars: &vvars },
                    None => InterSpace::NonParam,
                };
                Ok(total_loss(t, &u, &r, &pairing, cfg.lambda, inter)?.0)
            },
            model.params(),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err <= TOL, "{pipeline} {estimator:?} tie={tie}: {err}");
    }
}

#[test]
fn two_graph_groupcl_batch() {
    let mut r = rng(91);
    let graphs = random_graphs(&mut r, 2, 5, 3);
    let batch = batch_graphs(&graphs).unwrap();
    let cfg = tiny_config(Pipeline::GroupCl, Estimator::NonParam, true);
    let model = Model::init(&cfg, 3).unwrap();
    let enc = &model.architecture().main.encoder;
    let rep = model.architecture().main.representor().unwrap();
    let err = check_param_set(
        |t, vars| {
            let input = GraphInput::new(t, &batch);
            let u = enc.encode_nodes(t, vars, &input)?;
            let a = rep.forward(t, vars, u, &input.segments)?;
            let input_r = GraphInput::new(t, &batch);
            let u2 = enc.encode_nodes(t, vars, &input_r)?;
            let b = rep.forward(t, vars, u2, &input_r.segments)?;
            Ok(total_loss(t, &a.groups, &b.groups, &Pairing::SameIndex, 0.5, InterSpace::NonParam)?.0)
        },
        model.params(),
        DEFAULT_EPSILON,
    )
    .unwrap();
    assert!(err <= TOL, "{err}");
}
