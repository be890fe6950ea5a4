//! Command-line front end. The `groupcl` binary is a thin wrapper over
//! [`main_with_args`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_planted_motif_dataset, load_dataset, save_dataset};
use crate::error::{Error, Result};
use crate::eval::{
    count_head_params, export_attention, extract_embeddings, linear_probe, matrix_csv,
    mean_off_diagonal_abs, query_cosine_matrix, ATTENTION_CSV_HEADER,
};
use crate::trainer::{load_checkpoint, save_checkpoint, Model, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "groupcl", version, about = "Group contrastive learning on graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-motif dataset as JSON lines.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        graphs: usize,
        #[arg(long, default_value_t = 14)]
        nodes: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
    },
    /// Train a model; writes checkpoint.bin, history.csv and config.txt.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint up to the configured epoch count. The
        /// config must match the checkpoint's apart from `epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Linear probe on frozen embeddings; writes probe.json, probe.csv and
    /// embeddings.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Query cosine-similarity matrix; writes query_cosine.csv.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention weights for selected graphs as CSV records.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated graph indices.
        #[arg(long, value_delimiter = ',', required = true)]
        graphs: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Readout parameter counts of GroupCL and GraphCL.
    CountParams {
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 160)]
        node_dim: usize,
        #[arg(long, default_value_t = 100)]
        key_dim: usize,
        #[arg(long, default_value_t = 160)]
        embed_dim: usize,
    },
    /// Train and probe over a grid of group counts, lambdas and seeds;
    /// writes sweep.csv.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,4")]
        groups: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn is_empty(&self) -> bool {
        self.config.is_none() && self.overrides.is_empty()
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                RunConfig::from_text(&text)?
            }
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `cfg` may be `None` only when resuming, in which case the checkpoint's
/// config is used unchanged.
fn train_into(
    cfg: Option<&RunConfig>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(Model, crate::trainer::History)> {
    let dataset = load_dataset(data)?;
    let model = match resume {
        Some(path) => {
            let mut model = load_checkpoint(path)?;
            let Some(cfg) = cfg else {
                return finish_training(model, &dataset, out);
            };
            let stored = RunConfig {
                epochs: cfg.epochs,
                ..model.config().clone()
            };
            if &stored != cfg {
                return Err(Error::Config(
                    "resume config may differ from the checkpoint's only in `epochs`".into(),
                ));
            }
            model.config.epochs = cfg.epochs;
            model
        }
        None => {
            let cfg = cfg.ok_or_else(|| Error::Contract("training needs a config".into()))?;
            Model::init(cfg, dataset.feature_dim())?
        }
    };
    finish_training(model, &dataset, out)
}

fn finish_training(
    mut model: Model,
    dataset: &crate::data::Dataset,
    out: &Path,
) -> Result<(Model, crate::trainer::History)> {
    let epochs = model.config().epochs;
    let history = model.train_until(dataset, epochs)?;
    create_dir(out)?;
    save_checkpoint(&model, out.join("checkpoint.bin"))?;
    history.save_csv(out.join("history.csv"))?;
    write_file(&out.join("config.txt"), &model.config().to_text())?;
    Ok((model, history))
}

/// Run one parsed invocation, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let out_err = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::GenData {
            out,
            seed,
            graphs,
            nodes,
            features,
        } => {
            let ds = generate_planted_motif_dataset(seed, graphs, nodes, features)?;
            save_dataset(&ds, &out)?;
            writeln!(stdout, "wrote {} graphs to {}", ds.len(), out.display()).map_err(out_err)?;
        }
        Command::Train {
            data,
            config,
            out,
            resume,
        } => {
            let cfg = if resume.is_some() && config.is_empty() {
                None
            } else {
                Some(config.resolve()?)
            };
            let (model, history) = train_into(cfg.as_ref(), &data, &out, resume.as_deref())?;
            let last = history.epoch_means().last().map(|&(_, m)| m);
            writeln!(
                stdout,
                "trained {} to epoch {} ({} steps); final epoch mean loss {}",
                model.config().pipeline,
                model.epoch(),
                history.len(),
                last.map_or("n/a".to_string(), |m| m.to_string())
            )
            .map_err(out_err)?;
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            split_seed,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let table = extract_embeddings(&model, &dataset)?;
            let probe = linear_probe(&table, split_seed)?;
            create_dir(&out)?;
            write_file(&out.join("embeddings.csv"), &table.to_csv())?;
            write_file(&out.join("probe.json"), &probe.to_json())?;
            write_file(&out.join("probe.csv"), &probe.to_csv())?;
            writeln!(
                stdout,
                "test accuracy {} (train {}, validation {}, C={})",
                probe.test.accuracy, probe.train.accuracy, probe.validation.accuracy, probe.c
            )
            .map_err(out_err)?;
        }
        Command::Analyze { checkpoint, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let m = query_cosine_matrix(&model)?;
            create_dir(&out)?;
            write_file(&out.join("query_cosine.csv"), &matrix_csv(&m))?;
            writeln!(
                stdout,
                "mean off-diagonal |cosine| {}",
                mean_off_diagonal_abs(&m)
            )
            .map_err(out_err)?;
        }
        Command::ExportAttn {
            checkpoint,
            data,
            graphs,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let mut csv = format!("{ATTENTION_CSV_HEADER}\n");
            let mut summary = String::new();
            for &id in &graphs {
                let g = dataset.graphs().get(id).ok_or_else(|| {
                    Error::Dataset(format!("graph {id} out of range for {} graphs", dataset.len()))
                })?;
                let export = export_attention(&model, g)?;
                csv.push_str(&export.to_csv(id));
                let _ = writeln!(summary, "graph {id}: top node per group {:?}", export.argmax);
            }
            write_file(&out, &csv)?;
            stdout.write_all(summary.as_bytes()).map_err(out_err)?;
        }
        Command::CountParams {
            groups,
            node_dim,
            key_dim,
            embed_dim,
        } => {
            let c = count_head_params(groups, node_dim, key_dim, embed_dim)?;
            writeln!(stdout, "groupcl_head {}", c.groupcl_head).map_err(out_err)?;
            writeln!(stdout, "graphcl_head {}", c.graphcl_head).map_err(out_err)?;
        }
        Command::Sweep {
            data,
            config,
            groups,
            lambdas,
            seeds,
            split_seed,
            out,
        } => {
            let base = config.resolve()?;
            let dataset = load_dataset(&data)?;
            create_dir(&out)?;
            let mut csv = String::from(
                "groups,lambda,seed,final_loss,train_accuracy,validation_accuracy,test_accuracy\n",
            );
            for &p in &groups {
                for &lambda in &lambdas {
                    for &seed in &seeds {
                        let mut cfg = base.clone();
                        cfg.groups = p;
                        cfg.lambda = lambda;
                        cfg.seed = seed;
                        cfg.validate()?;
                        let (model, history) = crate::trainer::train(&cfg, &dataset)?;
                        let table = extract_embeddings(&model, &dataset)?;
                        let probe = linear_probe(&table, split_seed)?;
                        let last = history.epoch_means().last().map_or(f64::NAN, |&(_, m)| m);
                        let row = format!(
                            "{p},{lambda},{seed},{last},{},{},{}\n",
                            probe.train.accuracy, probe.validation.accuracy, probe.test.accuracy
                        );
                        stdout.write_all(row.as_bytes()).map_err(out_err)?;
                        csv.push_str(&row);
                    }
                }
            }
            write_file(&out.join("sweep.csv"), &csv)?;
        }
    }
    Ok(())
}

/// Single-line, machine-parsable error report.
pub fn format_error(kind: &str, message: &str) -> String {
    let escaped = message
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n");
    format!("error kind={kind} message=\"{escaped}\"")
}

/// Parse `args` and run. Returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            let _ = writeln!(stderr, "{}", format_error("usage", first));
            return 2;
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", format_error(e.kind(), &e.to_string()));
            1
        }
    }
}
