//! Query cosine similarity and group-embedding overlap with and without the
//! inter-space penalty.
//!
//! ```text
//! cargo run --release --example query_diversity -- [epochs]
//! ```

use groupcl::data::{generate_planted_motif_dataset, Graph};
use groupcl::eval::{matrix_csv, mean_off_diagonal_abs, query_cosine_matrix};
use groupcl::trainer::{train, RunConfig};

fn main() -> groupcl::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs must be an integer"));
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;
    let graphs: Vec<&Graph> = dataset.graphs().iter().collect();
    for lambda in [0.0, 0.5, 2.0] {
        let config = RunConfig {
            lambda,
            epochs,
            ..RunConfig::default()
        };
        let (model, _) = train(&config, &dataset)?;
        let cos = query_cosine_matrix(&model)?;

        // Mean dot product between different groups of the same graph.
        let (emb, _) = model.embed(&graphs)?;
        let d_v = config.value_dim();
        let mut overlap = 0.0;
        for i in 0..emb.rows() {
            let row = emb.row_slice(i);
            for k in 0..config.groups {
                for l in k + 1..config.groups {
                    let a = &row[k * d_v..(k + 1) * d_v];
                    let b = &row[l * d_v..(l + 1) * d_v];
                    overlap += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        let pairs = emb.rows() * config.groups * (config.groups - 1) / 2;
        println!(
            "lambda {lambda}: query mean |cos| {:.4}, mean group dot product {:+.4}",
            mean_off_diagonal_abs(&cos),
            overlap / pairs as f64
        );
        print!("{}", matrix_csv(&cos));
    }
    Ok(())
}
