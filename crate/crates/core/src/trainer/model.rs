//! Model state and the per-batch forward passes of the three pipelines.

use std::collections::BTreeMap;

use crate::augment::sample_view;
use crate::data::{batch_graphs, Batch, Graph};
use crate::error::{Error, Result};
use crate::gin::{readout_projection, GinConfig, GinEncoder, GraphInput, Linear, ProjectionHead};
use crate::numeric::{Adam, AdamConfig, Bindings, ParamSet, Tape, Tensor, Var};
use crate::objectives::{
    total_loss, varnet_likelihood_loss, InterSpace, LossBreakdown, Pairing, VarNet,
};
use crate::representor::{duplicate_rep, GroupEmbeddings, Representor, RepresentorConfig};
use crate::rng::{stream_rng, Stream};

use super::config::{Estimator, Pipeline, RunConfig};

/// Graph-level readout of one branch.
#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    Groups(Representor),
    Head(ProjectionHead),
}

/// Encoder plus readout for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub encoder: GinEncoder,
    pub readout: Readout,
}

impl Branch {
    fn new(prefix: &str, config: &RunConfig, feature_dim: usize) -> Result<Self> {
        let encoder = GinEncoder::new(
            &format!("{prefix}.enc"),
            GinConfig {
                input_dim: feature_dim,
                hidden_dim: config.gin_hidden,
                layers: config.gin_layers,
                node_dim: config.node_dim,
                learn_eps: config.learn_eps,
                eps: config.gin_eps,
            },
        );
        let readout = match config.pipeline {
            Pipeline::GraphClBaseline => Readout::Head(ProjectionHead::new(
                prefix,
                config.node_dim,
                config.embed_dim,
            )),
            _ => Readout::Groups(Representor::new(
                &format!("{prefix}.rep"),
                RepresentorConfig {
                    node_dim: config.node_dim,
                    key_dim: config.key_dim,
                    groups: config.groups,
                    embed_dim: config.embed_dim,
                    scale_scores: config.scale_scores,
                },
            )?),
        };
        Ok(Self { encoder, readout })
    }

    fn init(&self, params: &mut ParamSet, rng: &mut impl rand::Rng) {
        self.encoder.init(params, rng);
        match &self.readout {
            Readout::Groups(rep) => rep.init(params, rng),
            Readout::Head(head) => head.init(params, rng),
        }
    }

    pub fn representor(&self) -> Option<&Representor> {
        match &self.readout {
            Readout::Groups(rep) => Some(rep),
            Readout::Head(_) => None,
        }
    }

    /// Graph-level representation as a list of groups. The baseline head
    /// yields a single L2-normalised group.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        input: &GraphInput,
    ) -> Result<(Var, GroupEmbeddingsOrSingle)> {
        let nodes = self.encoder.encode_nodes(tape, vars, input)?;
        let out = match &self.readout {
            Readout::Groups(rep) => {
                GroupEmbeddingsOrSingle::Groups(rep.forward(tape, vars, nodes, &input.segments)?)
            }
            Readout::Head(head) => {
                let h = readout_projection(tape, vars, nodes, &input.segments, head)?;
                GroupEmbeddingsOrSingle::Single(tape.row_l2_normalize(h)?)
            }
        };
        Ok((nodes, out))
    }
}

#[derive(Debug, Clone)]
pub enum GroupEmbeddingsOrSingle {
    Groups(GroupEmbeddings),
    Single(Var),
}

impl GroupEmbeddingsOrSingle {
    pub fn groups(&self) -> Vec<Var> {
        match self {
            Self::Groups(g) => g.groups.clone(),
            Self::Single(v) => vec![*v],
        }
    }

    pub fn attention(&self) -> Option<Var> {
        match self {
            Self::Groups(g) => Some(g.attention),
            Self::Single(_) => None,
        }
    }
}

/// Layer layout derived from a config and the input feature width. Holds no
/// parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub main: Branch,
    /// Second branch for view r when views are untied.
    pub aux: Option<Branch>,
    /// GroupIG node map to the group width.
    pub node_map: Option<Linear>,
    pub varnet: Option<VarNet>,
}

impl Architecture {
    pub fn new(config: &RunConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let main = Branch::new("main", config, feature_dim)?;
        let aux = match (config.pipeline, config.tie_views) {
            (Pipeline::GroupIg, _) | (_, true) => None,
            _ => Some(Branch::new("aux", config, feature_dim)?),
        };
        let node_map = (config.pipeline == Pipeline::GroupIg && config.node_map).then(|| {
            Linear::new("ig.node_map", config.node_dim, config.value_dim(), false)
        });
        let varnet = (config.pipeline != Pipeline::GraphClBaseline
            && config.estimator == Estimator::Param)
            .then(|| VarNet::new("varnet", config.value_dim(), config.value_dim()));
        Ok(Self {
            main,
            aux,
            node_map,
            varnet,
        })
    }

    pub fn view_r(&self) -> &Branch {
        self.aux.as_ref().unwrap_or(&self.main)
    }
}

/// Outcome of one encoder update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    /// Detached view-u group embeddings, one `B×d_V` tensor per group.
    pub groups: Vec<Tensor>,
}

/// All trainable state of a run.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) config: RunConfig,
    pub(crate) feature_dim: usize,
    pub(crate) arch: Architecture,
    pub(crate) params: ParamSet,
    pub(crate) varnet_params: ParamSet,
    pub(crate) optimizer: Adam,
    pub(crate) varnet_optimizer: Option<Adam>,
    pub(crate) epoch: usize,
}

impl Model {
    /// Fresh parameters drawn from the `Init` stream of `config.seed`.
    pub fn init(config: &RunConfig, feature_dim: usize) -> Result<Self> {
        let arch = Architecture::new(config, feature_dim)?;
        let mut rng = stream_rng(config.seed, Stream::Init, &[]);
        let mut params = ParamSet::new();
        arch.main.init(&mut params, &mut rng);
        if let Some(aux) = &arch.aux {
            aux.init(&mut params, &mut rng);
        }
        if let Some(map) = &arch.node_map {
            map.init(&mut params, &mut rng);
        }
        let mut varnet_params = ParamSet::new();
        if let Some(v) = &arch.varnet {
            v.init(&mut varnet_params, &mut rng);
        }
        let adam = AdamConfig::with_lr(config.lr);
        let optimizer = Adam::new(adam, &params)?;
        let varnet_optimizer = match &arch.varnet {
            Some(_) => Some(Adam::new(adam, &varnet_params)?),
            None => None,
        };
        Ok(Self {
            config: config.clone(),
            feature_dim,
            arch,
            params,
            varnet_params,
            optimizer,
            varnet_optimizer,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn varnet_params(&self) -> &ParamSet {
        &self.varnet_params
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn varnet_optimizer(&self) -> Option<&Adam> {
        self.varnet_optimizer.as_ref()
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Query matrix `d_K×p` of the main representor, if the pipeline has one.
    pub fn queries(&self) -> Option<&Tensor> {
        let rep = self.arch.main.representor()?;
        self.params.get(rep.query_name()).ok()
    }

    pub(crate) fn check_width(&self, graphs: &[&Graph]) -> Result<()> {
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != self.feature_dim) {
            return Err(Error::shape(
                "model-input",
                format!(
                    "graph feature width {} but model expects {}",
                    g.feature_dim(),
                    self.feature_dim
                ),
            ));
        }
        Ok(())
    }

    /// Augmented views u and r of `graphs`, where `ids` are their dataset
    /// indices. Each view draws from its own `(epoch, id, view)` stream.
    pub fn sample_views(&self, graphs: &[&Graph], ids: &[usize], epoch: usize) -> Result<[Vec<Graph>; 2]> {
        let mut views = [Vec::with_capacity(graphs.len()), Vec::with_capacity(graphs.len())];
        for (g, &id) in graphs.iter().zip(ids) {
            for (v, out) in views.iter_mut().enumerate() {
                let mut rng = stream_rng(
                    self.config.seed,
                    Stream::Augment,
                    &[epoch as u64, id as u64, v as u64],
                );
                out.push(sample_view(g, &self.config.augmentation, &mut rng)?);
            }
        }
        Ok(views)
    }

    /// Group lists of view u and view r plus the positive-pair pattern, for
    /// the configured pipeline.
    pub fn contrastive_views(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        graphs: &[&Graph],
        ids: &[usize],
        epoch: usize,
    ) -> Result<(Vec<Var>, Vec<Var>, Pairing)> {
        self.check_width(graphs)?;
        match self.config.pipeline {
            Pipeline::GroupIg => {
                let batch = batch_graphs(graphs.iter().copied())?;
                let (u, r) = self.groupig_views(tape, vars, &batch)?;
                Ok((u, r, Pairing::Mask(batch.membership())))
            }
            _ => {
                let [view_u, view_r] = self.sample_views(graphs, ids, epoch)?;
                let bu = batch_graphs(&view_u)?;
                let br = batch_graphs(&view_r)?;
                let iu = GraphInput::new(tape, &bu);
                let ir = GraphInput::new(tape, &br);
                let (_, u) = self.arch.main.forward(tape, vars, &iu)?;
                let (_, r) = self.arch.view_r().forward(tape, vars, &ir)?;
                Ok((u.groups(), r.groups(), Pairing::SameIndex))
            }
        }
    }

    /// GroupIG views: graph-level groups, and the mapped, normalised node
    /// embeddings repeated once per group.
    pub fn groupig_views(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        batch: &Batch,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let input = GraphInput::new(tape, batch);
        let (nodes, out) = self.arch.main.forward(tape, vars, &input)?;
        let mapped = match &self.arch.node_map {
            Some(map) => map.forward(tape, vars, nodes)?,
            None => nodes,
        };
        let r = tape.row_l2_normalize(mapped)?;
        let u = out.groups();
        let r = duplicate_rep(&r, u.len());
        Ok((u, r))
    }

    /// One optimizer step on the encoder side. Varnet parameters, when
    /// present, enter as constants and are left untouched.
    pub fn step_encoder(&mut self, graphs: &[&Graph], ids: &[usize], epoch: usize) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let (u, r, pairing) = self.contrastive_views(&mut tape, &vars, graphs, ids, epoch)?;
        let varnet_vars = self.varnet_params.bind(&mut tape, false);
        let lambda = match self.config.pipeline {
            Pipeline::GraphClBaseline => 0.0,
            _ => self.config.lambda,
        };
        let inter = match &self.arch.varnet {
            Some(varnet) => InterSpace::Param {
                varnet,
                vars: &varnet_vars,
            },
            None => InterSpace::NonParam,
        };
        let (loss, breakdown) = total_loss(&mut tape, &u, &r, &pairing, lambda, inter)?;
        let grads = tape.backward(loss)?;
        let grads = vars.gradients(&grads);
        self.optimizer.step(&mut self.params, &grads)?;
        Ok(StepOutcome {
            loss: breakdown,
            groups: u.iter().map(|&g| tape.value(g).clone()).collect(),
        })
    }

    /// One optimizer step of the varnet on fixed group embeddings. Returns
    /// the likelihood loss before the update.
    pub fn step_varnet(&mut self, groups: &[Tensor]) -> Result<f64> {
        let (Some(varnet), Some(opt)) = (&self.arch.varnet, self.varnet_optimizer.as_mut()) else {
            return Err(Error::Contract("model has no varnet".into()));
        };
        let mut tape = Tape::new();
        let vars = self.varnet_params.bind(&mut tape, true);
        let u: Vec<Var> = groups.iter().map(|g| tape.constant(g.clone())).collect();
        let loss = varnet_likelihood_loss(&mut tape, &u, varnet, &vars)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        opt.step(&mut self.varnet_params, &vars.gradients(&grads))?;
        Ok(value)
    }

    /// Loss of one batch at the current parameters, without updating.
    pub fn evaluate_loss(&self, graphs: &[&Graph], ids: &[usize], epoch: usize) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let (u, r, pairing) = self.contrastive_views(&mut tape, &vars, graphs, ids, epoch)?;
        let varnet_vars = self.varnet_params.bind(&mut tape, false);
        let lambda = match self.config.pipeline {
            Pipeline::GraphClBaseline => 0.0,
            _ => self.config.lambda,
        };
        let inter = match &self.arch.varnet {
            Some(varnet) => InterSpace::Param {
                varnet,
                vars: &varnet_vars,
            },
            None => InterSpace::NonParam,
        };
        Ok(total_loss(&mut tape, &u, &r, &pairing, lambda, inter)?.1)
    }

    /// Concatenated graph embeddings (`B×d_o`) and, for group readouts, the
    /// `N×p` attention matrix, for un-augmented graphs.
    pub fn embed(&self, graphs: &[&Graph]) -> Result<(Tensor, Option<Tensor>)> {
        self.check_width(graphs)?;
        let batch = batch_graphs(graphs.iter().copied())?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let input = GraphInput::new(&mut tape, &batch);
        let (_, out) = self.arch.main.forward(&mut tape, &vars, &input)?;
        let groups = out.groups();
        let joined = if groups.len() == 1 {
            groups[0]
        } else {
            tape.concat(&groups, crate::numeric::Axis::Cols)?
        };
        let attention = out.attention().map(|a| tape.value(a).clone());
        Ok((tape.value(joined).clone(), attention))
    }

    /// Every parameter tensor including the varnet's, keyed by name.
    pub fn all_params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .chain(self.varnet_params.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}
