//! Which nodes each learned query attends to, checked against the planted
//! motif.
//!
//! ```text
//! cargo run --release --example attention_export -- [out.csv]
//! ```

use groupcl::data::generate_planted_motif_dataset;
use groupcl::eval::{export_attention, ATTENTION_CSV_HEADER};
use groupcl::trainer::train_groupcl;
use groupcl::trainer::RunConfig;

fn main() -> groupcl::Result<()> {
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;
    let (model, _) = train_groupcl(&RunConfig::default(), &dataset)?;

    let mut csv = format!("{ATTENTION_CSV_HEADER}\n");
    for id in 0..4 {
        let g = &dataset.graphs()[id];
        let export = export_attention(&model, g)?;
        csv.push_str(&export.to_csv(id));
        let degrees = g.degrees();
        let top: Vec<String> = export
            .argmax
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let w = export.records[v * export.argmax.len() + k].weight;
                format!("group {k}: node {v} (degree {}, weight {w:.3})", degrees[v])
            })
            .collect();
        println!("graph {id} (class {:?})", g.label());
        for line in top {
            println!("  {line}");
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, csv).map_err(|e| groupcl::Error::Io { path: path.into(), source: e })?;
    }
    Ok(())
}
