//! Stop a run halfway, save it, resume from the file and confirm the result
//! matches an uninterrupted run bit for bit.

use groupcl::data::generate_planted_motif_dataset;
use groupcl::trainer::{checkpoint_bytes, load_checkpoint, save_checkpoint, train, Model, RunConfig};

fn main() -> groupcl::Result<()> {
    let dataset = generate_planted_motif_dataset(7, 80, 14, 8)?;
    let config = RunConfig {
        epochs: 10,
        batch_size: 32,
        ..RunConfig::default()
    };
    let (full, full_history) = train(&config, &dataset)?;

    let path = std::env::temp_dir().join("groupcl-example-checkpoint.bin");
    let mut first = Model::init(&config, dataset.feature_dim())?;
    let mut history = first.train_until(&dataset, 5)?;
    save_checkpoint(&first, &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);

    let mut resumed = load_checkpoint(&path)?;
    println!("checkpoint {} ({bytes} bytes) at epoch {}", path.display(), resumed.epoch());
    history.extend(resumed.train_until(&dataset, config.epochs)?);
    std::fs::remove_file(&path).ok();

    println!("histories identical: {}", history.to_csv() == full_history.to_csv());
    println!("checkpoints identical: {}", checkpoint_bytes(&resumed) == checkpoint_bytes(&full));
    Ok(())
}
