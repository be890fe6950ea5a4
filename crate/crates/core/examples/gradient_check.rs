//! Compare recorded gradients with central finite differences for a GIN
//! encoder feeding the attention representor and the combined loss.

use groupcl::data::{batch_graphs, Graph};
use groupcl::gin::{GinConfig, GinEncoder, GraphInput};
use groupcl::numeric::{check_param_set, ParamSet, Tensor, DEFAULT_EPSILON};
use groupcl::objectives::{total_loss, InterSpace, Pairing};
use groupcl::representor::{Representor, RepresentorConfig};
use groupcl::rng::{stream_rng, Stream};
use rand::Rng;

fn random_graph(rng: &mut impl Rng, n: usize) -> Graph {
    let edges = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|_| rng.random_bool(0.4))
        .collect::<Vec<_>>();
    let x = Tensor::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    Graph::new(x, edges, None).unwrap()
}

fn main() -> groupcl::Result<()> {
    let mut rng = stream_rng(1, Stream::Data, &[]);
    let graphs: Vec<Graph> = [4, 6, 5].iter().map(|&n| random_graph(&mut rng, n)).collect();
    let batch = batch_graphs(&graphs)?;

    let enc = GinEncoder::new(
        "enc",
        GinConfig {
            input_dim: 3,
            hidden_dim: 8,
            layers: 2,
            node_dim: 8,
            learn_eps: true,
            eps: 0.0,
        },
    );
    let rep = Representor::new(
        "rep",
        RepresentorConfig {
            node_dim: 8,
            key_dim: 4,
            groups: 3,
            embed_dim: 15,
            scale_scores: false,
        },
    )?;
    let mut params = ParamSet::new();
    let mut init = stream_rng(1, Stream::Init, &[]);
    enc.init(&mut params, &mut init);
    rep.init(&mut params, &mut init);
    // Move biases off zero so no ReLU input sits exactly on the kink.
    for (name, t) in params.iter_mut() {
        if name.ends_with(".b") {
            let (rows, cols) = (t.rows(), t.cols());
            *t = Tensor::from_fn(rows, cols, |_, _| init.random_range(0.05..0.3));
        }
    }

    for lambda in [0.0, 0.5] {
        let err = check_param_set(
            |tape, vars| {
                let input = GraphInput::new(tape, &batch);
                let u = enc.encode_nodes(tape, vars, &input)?;
                let groups = rep.forward(tape, vars, u, batch.segments())?.groups;
                // Second view: the same graphs with features scaled.
                let scaled = tape.scale(input.x, 0.5)?;
                let input_r = GraphInput { x: scaled, ..input };
                let ur = enc.encode_nodes(tape, vars, &input_r)?;
                let groups_r = rep.forward(tape, vars, ur, batch.segments())?.groups;
                let (loss, _) = total_loss(tape, &groups, &groups_r, &Pairing::SameIndex, lambda, InterSpace::NonParam)?;
                Ok(loss)
            },
            &params,
            DEFAULT_EPSILON,
        )?;
        println!("lambda {lambda}: {} parameter tensors, max relative error {err:.2e}", params.len());
    }
    Ok(())
}
