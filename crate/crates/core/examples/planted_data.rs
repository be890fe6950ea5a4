//! Generate the planted-motif dataset, summarise it, and optionally save it
//! as JSON lines.
//!
//! ```text
//! cargo run --example planted_data -- [out.jsonl]
//! ```

use groupcl::data::{batch_graphs, generate_planted_motif_dataset, load_dataset, save_dataset, split_dataset, DEFAULT_SPLIT};

fn main() -> groupcl::Result<()> {
    let dataset = generate_planted_motif_dataset(7, 200, 14, 8)?;
    println!(
        "{} graphs, {} features, class counts {:?}",
        dataset.len(),
        dataset.feature_dim(),
        dataset.class_counts()
    );
    for class in 0..2 {
        let graphs: Vec<_> = dataset.graphs().iter().filter(|g| g.label() == Some(class)).collect();
        let edges: usize = graphs.iter().map(|g| g.edges().len()).sum();
        let max_degree: usize = graphs.iter().flat_map(|g| g.degrees()).max().unwrap_or(0);
        println!(
            "class {class}: mean edges {:.2}, max degree {max_degree}",
            edges as f64 / graphs.len() as f64
        );
    }

    let split = split_dataset(&dataset, DEFAULT_SPLIT, 0)?;
    println!("split 8:1:1 class counts {:?}", split.class_counts());

    let batch = batch_graphs(&dataset.graphs()[..4])?;
    println!(
        "first batch: {} graphs, {} nodes, segments {:?}",
        batch.num_graphs(),
        batch.total_nodes(),
        &batch.segments()[..]
    );

    if let Some(path) = std::env::args().nth(1) {
        save_dataset(&dataset, &path)?;
        let back = load_dataset(&path)?;
        assert_eq!(back.graphs(), dataset.graphs());
        println!("wrote {path}");
    }
    Ok(())
}
