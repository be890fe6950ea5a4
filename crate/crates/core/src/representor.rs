//! Attention representor: `p` learned queries attend over a graph's nodes
//! and each produces one graph-level group embedding.
//!
//! For node embeddings `U` of one graph:
//!
//! ```text
//! K = U·W_K    V = U·W_V    A = softmax_nodes(K·Q)    [u¹ … uᵖ] = Vᵀ·A
//! ```
//!
//! and every `uᵏ` is then scaled to unit length.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gin::Linear;
use crate::numeric::{Axis, Bindings, ParamSet, Segments, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepresentorConfig {
    pub node_dim: usize,
    pub key_dim: usize,
    pub groups: usize,
    pub embed_dim: usize,
    /// Divide attention scores by `sqrt(key_dim)` before the softmax.
    pub scale_scores: bool,
}

impl RepresentorConfig {
    pub fn value_dim(&self) -> usize {
        self.embed_dim / self.groups
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representor {
    config: RepresentorConfig,
    key: Linear,
    value: Linear,
    query: String,
}

/// Output of the representor for one batch.
#[derive(Debug, Clone)]
pub struct GroupEmbeddings {
    /// One `B×d_V` matrix per group; row `i` is graph `i`'s embedding.
    pub groups: Vec<Var>,
    /// `N×p` attention weights, each column normalised within each graph.
    pub attention: Var,
}

impl GroupEmbeddings {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// The `p` group vectors of graph `i`.
    pub fn graph_vectors(&self, tape: &Tape, i: usize) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|&g| tape.value(g).row_slice(i).to_vec())
            .collect()
    }
}

impl Representor {
    pub fn new(prefix: &str, config: RepresentorConfig) -> Result<Self> {
        if config.groups == 0 {
            return Err(Error::Config("number of groups must be at least 1".into()));
        }
        if config.embed_dim % config.groups != 0 || config.embed_dim == 0 {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible into {} groups",
                config.embed_dim, config.groups
            )));
        }
        Ok(Self {
            key: Linear::new(format!("{prefix}.key"), config.node_dim, config.key_dim, false),
            value: Linear::new(
                format!("{prefix}.value"),
                config.node_dim,
                config.value_dim(),
                false,
            ),
            query: format!("{prefix}.query"),
            config,
        })
    }

    pub fn config(&self) -> &RepresentorConfig {
        &self.config
    }

    pub fn key_name(&self) -> String {
        self.key.weight_name()
    }

    pub fn value_name(&self) -> String {
        self.value.weight_name()
    }

    pub fn query_name(&self) -> &str {
        &self.query
    }

    /// Glorot projections; queries drawn from `N(0, 1/d_K)`.
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        self.key.init(params, rng);
        self.value.init(params, rng);
        let scale = 1.0 / (self.config.key_dim as f64).sqrt();
        let q = Tensor::from_fn(self.config.key_dim, self.config.groups, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        params.insert(self.query.clone(), q);
    }

    pub fn project_kv(&self, tape: &mut Tape, vars: &Bindings, u: Var) -> Result<(Var, Var)> {
        if tape.shape(u)[1] != self.config.node_dim {
            return Err(Error::shape(
                "project-kv",
                format!(
                    "node embedding width {} but representor expects {}",
                    tape.shape(u)[1],
                    self.config.node_dim
                ),
            ));
        }
        let k = self.key.forward(tape, vars, u)?;
        let v = self.value.forward(tape, vars, u)?;
        Ok((k, v))
    }

    pub fn attention(&self, tape: &mut Tape, k: Var, q: Var, segments: &Segments) -> Result<Var> {
        attention(tape, k, q, segments, self.config.scale_scores)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        u: Var,
        segments: &Segments,
    ) -> Result<GroupEmbeddings> {
        let (k, v) = self.project_kv(tape, vars, u)?;
        let q = vars.get(&self.query)?;
        let a = self.attention(tape, k, q, segments)?;
        group_embed(tape, v, a, segments)
    }
}

/// Scores `K·Q` normalised over each graph's nodes, per query column.
pub fn attention(
    tape: &mut Tape,
    k: Var,
    q: Var,
    segments: &Segments,
    scale_scores: bool,
) -> Result<Var> {
    if tape.shape(k)[1] != tape.shape(q)[0] {
        return Err(Error::shape(
            "attention",
            format!("keys {:?} vs queries {:?}", tape.shape(k), tape.shape(q)),
        ));
    }
    let mut scores = tape.matmul(k, q)?;
    if scale_scores {
        scores = tape.scale(scores, 1.0 / (tape.shape(k)[1] as f64).sqrt())?;
    }
    tape.segment_softmax(scores, segments)
}

/// Attention-weighted value sums per graph and group, each L2-normalised.
pub fn group_embed(tape: &mut Tape, v: Var, a: Var, segments: &Segments) -> Result<GroupEmbeddings> {
    if tape.shape(v)[0] != tape.shape(a)[0] {
        return Err(Error::shape(
            "group-embed",
            format!("values {:?} vs attention {:?}", tape.shape(v), tape.shape(a)),
        ));
    }
    let p = tape.shape(a)[1];
    let mut groups = Vec::with_capacity(p);
    for k in 0..p {
        let weights = tape.slice_cols(a, k, k + 1)?;
        let weighted = tape.mul(v, weights)?;
        let pooled = tape.segment_sum(weighted, segments)?;
        groups.push(tape.row_l2_normalize(pooled)?);
    }
    Ok(GroupEmbeddings {
        groups,
        attention: a,
    })
}

/// Concatenate the groups in order into one `B×(p·d_V)` matrix.
pub fn concat_groups(tape: &mut Tape, ge: &GroupEmbeddings) -> Result<Var> {
    if ge.groups.len() == 1 {
        return Ok(ge.groups[0]);
    }
    tape.concat(&ge.groups, Axis::Cols)
}

/// `p` value-independent copies of one representation.
pub fn duplicate_rep<T: Clone>(r: &T, p: usize) -> Vec<T> {
    vec![r.clone(); p]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{batch_graphs, Graph};
    use approx::assert_abs_diff_eq;

    fn segs(v: &[std::ops::Range<usize>]) -> Segments {
        v.to_vec().into()
    }

    #[test]
    fn identity_key_projection() {
        let rep = Representor::new(
            "rep",
            RepresentorConfig {
                node_dim: 3,
                key_dim: 3,
                groups: 1,
                embed_dim: 2,
                scale_scores: false,
            },
        )
        .unwrap();
        let mut p = ParamSet::new();
        p.insert(rep.key_name(), Tensor::identity(3));
        p.insert(rep.value_name(), Tensor::zeros(3, 2));
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let u = tape.constant(Tensor::from_fn(4, 3, |i, j| (i * j) as f64 - 1.0));
        let (k, v) = rep.project_kv(&mut tape, &vars, u).unwrap();
        assert_eq!(tape.value(k), tape.value(u));
        assert_eq!(tape.value(v).shape(), [4, 2]);
    }

    #[test]
    fn full_width_shapes() {
        let rep = Representor::new(
            "rep",
            RepresentorConfig {
                node_dim: 160,
                key_dim: 100,
                groups: 4,
                embed_dim: 160,
                scale_scores: false,
            },
        )
        .unwrap();
        let mut p = ParamSet::new();
        rep.init(&mut p, &mut crate::rng::stream_rng(0, crate::rng::Stream::Init, &[]));
        assert_eq!(p.get(rep.query_name()).unwrap().shape(), [100, 4]);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let u = tape.constant(Tensor::zeros(7, 160));
        let (k, v) = rep.project_kv(&mut tape, &vars, u).unwrap();
        assert_eq!(tape.shape(k), [7, 100]);
        assert_eq!(tape.shape(v), [7, 40]);
        assert!(tape.value(k).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn indivisible_embedding_rejected() {
        let cfg = RepresentorConfig {
            node_dim: 4,
            key_dim: 4,
            groups: 3,
            embed_dim: 160,
            scale_scores: false,
        };
        assert!(matches!(Representor::new("rep", cfg), Err(Error::Config(_))));
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::filled(3, 2, 0.7));
        let q = tape.constant(Tensor::from_fn(2, 2, |i, j| (i + 2 * j) as f64));
        let a = attention(&mut tape, k, q, &segs(&[0..3]), false).unwrap();
        for &w in tape.value(a).data() {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn dominant_score_takes_the_weight() {
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::from_rows(&[vec![20.0], vec![0.0], vec![0.0]]).unwrap());
        let q = tape.constant(Tensor::scalar(1.0));
        let a = attention(&mut tape, k, q, &segs(&[0..3]), false).unwrap();
        // e^20 / (e^20 + 2)
        let expected = 1.0 / (1.0 + 2.0 * (-20f64).exp());
        assert_abs_diff_eq!(tape.value(a).get(0, 0), expected, epsilon = 1e-15);
        assert!(tape.value(a).get(0, 0) > 0.999);
    }

    #[test]
    fn attention_normalises_each_graph() {
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::from_fn(5, 2, |i, j| (i as f64 - j as f64) * 0.3));
        let q = tape.constant(Tensor::from_fn(2, 3, |i, j| (i + j) as f64 - 1.0));
        let a = attention(&mut tape, k, q, &segs(&[0..2, 2..5]), false).unwrap();
        let a = tape.value(a);
        for seg in [0..2, 2..5] {
            for j in 0..3 {
                let s: f64 = seg.clone().map(|i| a.get(i, j)).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_node_group_is_normalised_value() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::row(&[3.0, 4.0]).unwrap());
        let a = tape.constant(Tensor::row(&[1.0, 1.0, 1.0]).unwrap());
        let ge = group_embed(&mut tape, v, a, &segs(&[0..1])).unwrap();
        assert_eq!(ge.num_groups(), 3);
        for g in ge.graph_vectors(&tape, 0) {
            assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
            assert_abs_diff_eq!(g[1], 0.8, epsilon = 1e-15);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let g: Vec<Var> = (0..4)
            .map(|k| tape.constant(Tensor::from_fn(2, 40, |i, j| (k * 100 + i * 40 + j) as f64)))
            .collect();
        let a = tape.constant(Tensor::zeros(2, 4));
        let ge = GroupEmbeddings {
            groups: g.clone(),
            attention: a,
        };
        let h = concat_groups(&mut tape, &ge).unwrap();
        assert_eq!(tape.shape(h), [2, 160]);
        for (k, &gk) in g.iter().enumerate() {
            let part = tape.value(h).slice_cols(40 * k, 40 * (k + 1));
            assert_eq!(&part, tape.value(gk));
        }
        let single = GroupEmbeddings {
            groups: vec![g[0]],
            attention: a,
        };
        assert_eq!(concat_groups(&mut tape, &single).unwrap(), g[0]);
    }

    #[test]
    fn duplicates_are_independent() {
        let r = vec![1.0, 2.0];
        assert_eq!(duplicate_rep(&r, 1), vec![r.clone()]);
        let mut copies = duplicate_rep(&r, 4);
        assert_eq!(copies.len(), 4);
        assert!(copies.iter().all(|c| *c == r));
        copies[0][0] = 9.0;
        assert_eq!(copies[1], r);
    }

    #[test]
    fn group_embed_through_batch() {
        let g = Graph::new(Tensor::filled(2, 1, 1.0), vec![(0, 1)], None).unwrap();
        let batch = batch_graphs([&g, &g]).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_fn(4, 2, |i, _| 1.0 + i as f64));
        let a = tape.constant(Tensor::filled(4, 1, 0.5));
        let ge = group_embed(&mut tape, v, a, batch.segments()).unwrap();
        let vals = tape.value(ge.groups[0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..2 {
            assert_abs_diff_eq!(vals.get(i, 0), s, epsilon = 1e-15);
        }
    }
}
