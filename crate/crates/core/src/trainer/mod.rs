//! Training loops for GroupCL, GroupIG and the GraphCL baseline.

mod checkpoint;
mod config;
mod model;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Estimator, Pipeline, RunConfig, KEYS as CONFIG_KEYS};
pub use model::{Architecture, Branch, GroupEmbeddingsOrSingle, Model, Readout, StepOutcome};

use crate::data::{Dataset, Graph};
use crate::error::{Error, Result};
use crate::objectives::LossBreakdown;
use crate::rng::{stream_rng, Stream};

/// One logged encoder step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Global optimizer step after this update, starting at 1.
    pub step: u64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "epoch,step,intra_pos,intra_neg,inter,total";

impl History {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn extend(&mut self, other: History) {
        self.rows.extend(other.rows);
    }

    /// Mean total loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((e, sum, n)) if *e == row.epoch => {
                    *sum += row.loss.total;
                    *n += 1;
                }
                _ => out.push((row.epoch, row.loss.total, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let l = &r.loss;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.step, l.intra_positive, l.intra_negative, l.inter_penalty, l.total
            );
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Dataset order for `epoch`: a permutation drawn from the `(Shuffle, epoch)`
/// stream.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    order
}

impl Model {
    /// Train from the current epoch up to (not including) `until`.
    ///
    /// Every epoch is a pure function of the seed, the epoch index and the
    /// state at its start, so stopping and resuming gives the same result as
    /// an uninterrupted run.
    pub fn train_until(&mut self, dataset: &Dataset, until: usize) -> Result<History> {
        if dataset.is_empty() {
            return Err(Error::Dataset("cannot train on an empty dataset".into()));
        }
        let graphs: Vec<&Graph> = dataset.graphs().iter().collect();
        self.check_width(&graphs)?;
        let mut history = History::default();
        while self.epoch < until {
            let epoch = self.epoch;
            let order = epoch_order(self.config.seed, epoch, dataset.len());
            let mut steps = 0;
            for ids in order.chunks(self.config.batch_size) {
                if ids.len() < 2 {
                    log::warn!(
                        "epoch {epoch}: skipping batch of {} graph(s), negatives need at least 2",
                        ids.len()
                    );
                    continue;
                }
                let batch: Vec<&Graph> = ids.iter().map(|&i| graphs[i]).collect();
                let out = self.step_encoder(&batch, ids, epoch)?;
                if self.arch.varnet.is_some() {
                    for _ in 0..self.config.varnet_steps {
                        self.step_varnet(&out.groups)?;
                    }
                }
                history.rows.push(HistoryRow {
                    epoch,
                    step: self.optimizer.step,
                    loss: out.loss,
                });
                steps += 1;
            }
            if steps == 0 {
                return Err(Error::Dataset(format!(
                    "epoch {epoch} had no batch with at least 2 graphs"
                )));
            }
            if let Some((_, mean)) = history.epoch_means().last() {
                log::info!("epoch {epoch}: mean loss {mean:.6}");
            }
            self.epoch += 1;
        }
        Ok(history)
    }
}

/// Initialise a model for `config` and train it for `config.epochs`.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<(Model, History)> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let mut model = Model::init(config, dataset.feature_dim())?;
    let history = model.train_until(dataset, config.epochs)?;
    Ok((model, history))
}

fn train_pipeline(expected: Pipeline, config: &RunConfig, dataset: &Dataset) -> Result<(Model, History)> {
    if config.pipeline != expected {
        return Err(Error::Config(format!(
            "config pipeline is {} but {} was requested",
            config.pipeline, expected
        )));
    }
    train(config, dataset)
}

pub fn train_groupcl(config: &RunConfig, dataset: &Dataset) -> Result<(Model, History)> {
    train_pipeline(Pipeline::GroupCl, config, dataset)
}

pub fn train_groupig(config: &RunConfig, dataset: &Dataset) -> Result<(Model, History)> {
    train_pipeline(Pipeline::GroupIg, config, dataset)
}

pub fn train_baseline_graphcl(config: &RunConfig, dataset: &Dataset) -> Result<(Model, History)> {
    train_pipeline(Pipeline::GraphClBaseline, config, dataset)
}
