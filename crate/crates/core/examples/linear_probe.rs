//! Frozen-embedding linear probe: compare an untrained encoder, GroupCL and
//! the GraphCL-style baseline on the same split.
//!
//! ```text
//! cargo run --release --example linear_probe
//! ```

use groupcl::data::generate_planted_motif_dataset;
use groupcl::eval::{extract_embeddings, linear_probe, PROBE_C_GRID};
use groupcl::trainer::{train, Pipeline, RunConfig};

fn main() -> groupcl::Result<()> {
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;
    let runs = [
        ("untrained", RunConfig { epochs: 0, ..RunConfig::default() }),
        ("groupcl", RunConfig::default()),
        ("graphcl-baseline", RunConfig { pipeline: Pipeline::GraphClBaseline, ..RunConfig::default() }),
    ];
    for (name, config) in runs {
        let (model, _) = train(&config, &dataset)?;
        let table = extract_embeddings(&model, &dataset)?;
        let probe = linear_probe(&table, 0)?;
        println!(
            "{name:17} width {:3}  train {:.3}  val {:.3}  test {:.3}  C={}",
            table.width(),
            probe.train.accuracy,
            probe.validation.accuracy,
            probe.test.accuracy,
            probe.c
        );
        println!("{:17} validation accuracy over C {PROBE_C_GRID:?}: {:?}", "", probe.validation_by_c);
    }
    Ok(())
}
