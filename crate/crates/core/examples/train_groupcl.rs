//! Train GroupCL on planted-motif graphs and score it with a linear probe.
//!
//! ```text
//! cargo run --release --example train_groupcl -- [seed] [key=value ...]
//! ```

use std::time::Instant;

use groupcl::data::generate_planted_motif_dataset;
use groupcl::eval::{extract_embeddings, linear_probe, mean_off_diagonal_abs, query_cosine_matrix};
use groupcl::trainer::{train_groupcl, RunConfig};

fn main() -> groupcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;

    let mut config = RunConfig {
        seed,
        ..RunConfig::default()
    };
    for kv in args {
        config.apply_override(&kv)?;
    }

    let start = Instant::now();
    let (model, history) = train_groupcl(&config, &dataset)?;
    for (epoch, mean) in history.epoch_means() {
        println!("epoch {epoch:2}  mean loss {mean:.5}");
    }
    let table = extract_embeddings(&model, &dataset)?;
    let probe = linear_probe(&table, 0)?;
    let cos = query_cosine_matrix(&model)?;
    println!(
        "probe test accuracy {:.3} (C={}), query mean |cos| {:.4}, {:.1}s",
        probe.test.accuracy,
        probe.c,
        mean_off_diagonal_abs(&cos),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
