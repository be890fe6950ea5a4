//! The four graph augmentations on one planted-motif graph, plus the
//! default two-view policy.

use groupcl::augment::{apply, sample_view, AugmentKind, AugmentationPolicy};
use groupcl::data::{generate_planted_motif_dataset, Graph};
use groupcl::rng::{stream_rng, Stream};

fn describe(g: &Graph) -> String {
    let masked = (0..g.num_nodes())
        .filter(|&v| g.features().row_slice(v).iter().all(|&x| x == 0.0))
        .count();
    format!(
        "{:2} nodes, {:2} edges, {masked} masked rows, connected {}",
        g.num_nodes(),
        g.edges().len(),
        g.is_connected()
    )
}

fn main() -> groupcl::Result<()> {
    let dataset = generate_planted_motif_dataset(7, 2, 14, 8)?;
    let g = &dataset.graphs()[0];
    println!("{:15} {}", "original", describe(g));
    for kind in AugmentKind::ALL {
        let mut rng = stream_rng(0, Stream::Augment, &[0]);
        let view = apply(kind, g, 0.2, &mut rng)?;
        println!("{:15} {}", kind.name(), describe(&view));
    }

    let policy = AugmentationPolicy::default();
    println!("default policy {:?} at ratio {}", policy.kinds(), policy.ratio());
    for view in 0..2u64 {
        // The trainer keys each view by (epoch, graph id, view index).
        let mut rng = stream_rng(0, Stream::Augment, &[0, 0, view]);
        println!("view {view}          {}", describe(&sample_view(g, &policy, &mut rng)?));
    }
    Ok(())
}
