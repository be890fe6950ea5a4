//! GroupIG: graph-level groups contrasted against their own graph's node
//! embeddings.
//!
//! ```text
//! cargo run --release --example train_groupig -- [seed]
//! ```

use groupcl::data::{batch_graphs, generate_planted_motif_dataset};
use groupcl::eval::{extract_embeddings, linear_probe};
use groupcl::numeric::Tape;
use groupcl::trainer::{train_groupig, Model, Pipeline, RunConfig};

fn main() -> groupcl::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;
    let config = RunConfig {
        pipeline: Pipeline::GroupIg,
        seed,
        ..RunConfig::default()
    };

    // View r is one node-level matrix repeated for every group.
    let model = Model::init(&config, dataset.feature_dim())?;
    let batch = batch_graphs(&dataset.graphs()[..3])?;
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape, false);
    let (u, r) = model.groupig_views(&mut tape, &vars, &batch)?;
    println!(
        "{} groups of shape {:?} against {} copies of {:?}",
        u.len(),
        tape.shape(u[0]),
        r.len(),
        tape.shape(r[0])
    );

    let (model, history) = train_groupig(&config, &dataset)?;
    for (epoch, mean) in history.epoch_means() {
        println!("epoch {epoch:2}  mean loss {mean:.5}");
    }
    let probe = linear_probe(&extract_embeddings(&model, &dataset)?, 0)?;
    println!("probe test accuracy {:.3}", probe.test.accuracy);
    Ok(())
}
