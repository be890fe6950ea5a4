//! GIN node encoder and the sum-readout projection head.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::numeric::{Bindings, ParamSet, Segments, SparseMatrix, Tape, Tensor, Var};

/// Dense layer `x·W (+ b)` whose weights live in a [`ParamSet`] under
/// `{name}.w` and `{name}.b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    name: String,
    d_in: usize,
    d_out: usize,
    bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        let a = (6.0 / (self.d_in + self.d_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let w = Tensor::from_fn(self.d_in, self.d_out, |_, _| dist.sample(rng));
        params.insert(self.weight_name(), w);
        if self.bias {
            params.insert(self.bias_name(), Tensor::zeros(1, self.d_out));
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &Bindings, x: Var) -> Result<Var> {
        let w = vars.get(&self.weight_name())?;
        let y = tape.matmul(x, w)?;
        if self.bias {
            tape.add(y, vars.get(&self.bias_name())?)
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GinConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Output width; a bias-free linear lift from `hidden_dim` is appended
    /// when it differs from the last layer's width.
    pub node_dim: usize,
    pub learn_eps: bool,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinLayer {
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    eps: EpsTerm,
}

#[derive(Debug, Clone, PartialEq)]
enum EpsTerm {
    Fixed(f64),
    Learned(String),
}

impl GinLayer {
    fn new(prefix: &str, index: usize, d_in: usize, d_hidden: usize, cfg: &GinConfig) -> Self {
        let base = format!("{prefix}.gin{index}");
        let eps = if cfg.learn_eps {
            EpsTerm::Learned(format!("{base}.eps"))
        } else {
            EpsTerm::Fixed(cfg.eps)
        };
        Self {
            mlp_in: Linear::new(format!("{base}.mlp0"), d_in, d_hidden, true),
            mlp_out: Linear::new(format!("{base}.mlp1"), d_hidden, d_hidden, true),
            eps,
        }
    }

    fn init(&self, params: &mut ParamSet, rng: &mut impl Rng, eps: f64) {
        self.mlp_in.init(params, rng);
        self.mlp_out.init(params, rng);
        if let EpsTerm::Learned(name) = &self.eps {
            params.insert(name.clone(), Tensor::scalar(eps));
        }
    }

    /// `MLP((1+ε)·H[v] + Σ_{u∈N(v)} H[u])` for every node `v`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        adjacency: &Arc<SparseMatrix>,
        h: Var,
    ) -> Result<Var> {
        if tape.shape(h)[1] != self.mlp_in.d_in() {
            return Err(Error::shape(
                "gin-layer",
                format!(
                    "input width {} but layer expects {}",
                    tape.shape(h)[1],
                    self.mlp_in.d_in()
                ),
            ));
        }
        let neighbors = tape.sparse_matmul(adjacency, h)?;
        let own = match &self.eps {
            EpsTerm::Fixed(eps) if *eps == 0.0 => h,
            EpsTerm::Fixed(eps) => tape.scale(h, 1.0 + eps)?,
            EpsTerm::Learned(name) => {
                let eps = vars.get(name)?;
                let scaled = tape.mul(h, eps)?;
                tape.add(h, scaled)?
            }
        };
        let pre = tape.add(own, neighbors)?;
        let z = self.mlp_in.forward(tape, vars, pre)?;
        let z = tape.relu(z)?;
        self.mlp_out.forward(tape, vars, z)
    }
}

/// Tape-side view of a [`Batch`]: the feature constant plus the structure
/// needed by aggregation and readout.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub x: Var,
    pub adjacency: Arc<SparseMatrix>,
    pub segments: Segments,
}

impl GraphInput {
    pub fn new(tape: &mut Tape, batch: &Batch) -> Self {
        Self {
            x: tape.constant(batch.features().clone()),
            adjacency: batch.neighbor_matrix(),
            segments: batch.segments().clone(),
        }
    }
}

/// Stack of GIN layers, optionally followed by a linear lift.
#[derive(Debug, Clone, PartialEq)]
pub struct GinEncoder {
    config: GinConfig,
    layers: Vec<GinLayer>,
    lift: Option<Linear>,
}

impl GinEncoder {
    pub fn new(prefix: &str, config: GinConfig) -> Self {
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = config.input_dim;
        for l in 0..config.layers {
            layers.push(GinLayer::new(prefix, l, width, config.hidden_dim, &config));
            width = config.hidden_dim;
        }
        let lift = (width != config.node_dim)
            .then(|| Linear::new(format!("{prefix}.lift"), width, config.node_dim, false));
        Self {
            config,
            layers,
            lift,
        }
    }

    pub fn config(&self) -> &GinConfig {
        &self.config
    }

    pub fn layers(&self) -> &[GinLayer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.config.node_dim
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        for layer in &self.layers {
            layer.init(params, rng, self.config.eps);
        }
        if let Some(lift) = &self.lift {
            lift.init(params, rng);
        }
    }

    /// Node embeddings `U` for every node of the batch.
    pub fn encode_nodes(&self, tape: &mut Tape, vars: &Bindings, input: &GraphInput) -> Result<Var> {
        let mut h = input.x;
        for layer in &self.layers {
            h = layer.forward(tape, vars, &input.adjacency, h)?;
        }
        match &self.lift {
            Some(lift) => lift.forward(tape, vars, h),
            None => Ok(h),
        }
    }
}

/// Two dense layers with ReLU between, applied to sum-pooled node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    first: Linear,
    second: Linear,
}

impl ProjectionHead {
    pub fn new(prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            first: Linear::new(format!("{prefix}.head0"), d_in, d_out, true),
            second: Linear::new(format!("{prefix}.head1"), d_out, d_out, true),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.first.init(params, rng);
        self.second.init(params, rng);
    }

    pub fn layers(&self) -> [&Linear; 2] {
        [&self.first, &self.second]
    }

    pub fn forward(&self, tape: &mut Tape, vars: &Bindings, x: Var) -> Result<Var> {
        if tape.shape(x)[1] != self.first.d_in() {
            return Err(Error::shape(
                "readout-projection",
                format!(
                    "embedding width {} but head expects {}",
                    tape.shape(x)[1],
                    self.first.d_in()
                ),
            ));
        }
        let z = self.first.forward(tape, vars, x)?;
        let z = tape.relu(z)?;
        self.second.forward(tape, vars, z)
    }
}

/// Per-graph sum of node embeddings followed by the projection head.
pub fn readout_projection(
    tape: &mut Tape,
    vars: &Bindings,
    node_embeddings: Var,
    segments: &Segments,
    head: &ProjectionHead,
) -> Result<Var> {
    let pooled = tape.segment_sum(node_embeddings, segments)?;
    head.forward(tape, vars, pooled)
}
