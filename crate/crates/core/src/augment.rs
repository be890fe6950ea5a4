//! Stochastic graph views: node dropping, edge perturbation, attribute
//! masking and random-walk subgraphs.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, IndexedRandom};
use rand::Rng;

use crate::data::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentKind {
    NodeDrop,
    EdgePerturb,
    AttributeMask,
    Subgraph,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::NodeDrop,
        AugmentKind::EdgePerturb,
        AugmentKind::AttributeMask,
        AugmentKind::Subgraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::NodeDrop => "node-drop",
            AugmentKind::EdgePerturb => "edge-perturb",
            AugmentKind::AttributeMask => "attribute-mask",
            AugmentKind::Subgraph => "subgraph",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation kind `{s}`")))
    }
}

/// Which augmentations a view may use and how strongly.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    kinds: Vec<AugmentKind>,
    ratio: f64,
}

impl AugmentationPolicy {
    pub fn new(kinds: Vec<AugmentKind>, ratio: f64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("augmentation policy needs at least one kind".into()));
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "augmentation ratio must be in [0, 1), got {ratio}"
            )));
        }
        let mut unique = Vec::new();
        for k in kinds {
            if !unique.contains(&k) {
                unique.push(k);
            }
        }
        Ok(Self {
            kinds: unique,
            ratio,
        })
    }

    pub fn kinds(&self) -> &[AugmentKind] {
        &self.kinds
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            kinds: vec![AugmentKind::NodeDrop, AugmentKind::AttributeMask],
            ratio: 0.2,
        }
    }
}

/// `⌊ratio·n⌋`, tolerant of products like `0.3 * 10 = 2.9999…`.
fn floor_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Remove the given nodes and their incident edges; survivors keep their
/// relative order.
pub fn remove_nodes(g: &Graph, dropped: &[usize]) -> Result<Graph> {
    let dropped: HashSet<usize> = dropped.iter().copied().collect();
    let keep: Vec<usize> = (0..g.num_nodes()).filter(|v| !dropped.contains(v)).collect();
    if keep.is_empty() {
        return Err(Error::Contract("node drop would remove every node".into()));
    }
    g.induced_subgraph(&keep)
}

pub fn node_drop(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    let n = g.num_nodes();
    let k = floor_count(ratio, n);
    if k >= n {
        return Err(Error::Contract(format!(
            "node drop ratio {ratio} removes all {n} nodes"
        )));
    }
    if k == 0 {
        return Ok(g.clone());
    }
    let dropped = index::sample(rng, n, k).into_vec();
    remove_nodes(g, &dropped)
}

/// Remove `⌊ratio·|E|⌋` edges and add as many edges drawn from the original
/// non-edges; fewer are added when the graph has too few non-edges.
pub fn edge_perturb(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    let m = g.edges().len();
    let k = floor_count(ratio, m);
    if k == 0 {
        return Ok(g.clone());
    }
    let removed: HashSet<usize> = index::sample(rng, m, k).into_iter().collect();
    let existing = g.edge_set();
    let n = g.num_nodes();
    let non_edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|e| !existing.contains(e))
        .collect();
    let add = k.min(non_edges.len());
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    edges.extend(
        index::sample(rng, non_edges.len(), add)
            .into_iter()
            .map(|i| non_edges[i]),
    );
    Graph::new(g.features().clone(), edges, g.label())
}

pub fn attribute_mask(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    let n = g.num_nodes();
    let k = floor_count(ratio, n);
    if k == 0 {
        return Ok(g.clone());
    }
    let mut x = g.features().clone();
    for v in index::sample(rng, n, k) {
        x.row_slice_mut(v).fill(0.0);
    }
    Graph::new(x, g.edges().to_vec(), g.label())
}

/// Grow a node set of size `⌈(1−ratio)·N⌉` by repeatedly adding a uniform
/// neighbour of the current set, then return the induced subgraph. When the
/// frontier empties before the target size (disconnected input) the walk
/// restarts from a uniform unvisited node.
pub fn subgraph_sample(g: &Graph, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    let n = g.num_nodes();
    let target = (((1.0 - ratio) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let target = target.min(n);
    let adj = g.neighbors();
    let mut kept = vec![false; n];
    let mut frontier: Vec<usize> = Vec::new();
    let mut count = 0;

    let add = |v: usize, kept: &mut Vec<bool>, frontier: &mut Vec<usize>| {
        kept[v] = true;
        frontier.retain(|&w| w != v);
        for &w in &adj[v] {
            if !kept[w] && !frontier.contains(&w) {
                frontier.push(w);
            }
        }
    };

    let start = rng.random_range(0..n);
    add(start, &mut kept, &mut frontier);
    count += 1;
    while count < target {
        let next = if let Some(&v) = frontier.choose(rng) {
            v
        } else {
            let unvisited: Vec<usize> = (0..n).filter(|&v| !kept[v]).collect();
            *unvisited.choose(rng).expect("count < target <= n")
        };
        add(next, &mut kept, &mut frontier);
        count += 1;
    }
    let keep: Vec<usize> = (0..n).filter(|&v| kept[v]).collect();
    g.induced_subgraph(&keep)
}

pub fn apply(kind: AugmentKind, g: &Graph, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    match kind {
        AugmentKind::NodeDrop => node_drop(g, ratio, rng),
        AugmentKind::EdgePerturb => edge_perturb(g, ratio, rng),
        AugmentKind::AttributeMask => attribute_mask(g, ratio, rng),
        AugmentKind::Subgraph => subgraph_sample(g, ratio, rng),
    }
}

/// Draw one augmentation kind uniformly from the policy and apply it.
pub fn sample_view(g: &Graph, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Result<Graph> {
    let kind = *policy.kinds.choose(rng).expect("policy is non-empty");
    apply(kind, g, policy.ratio, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;
    use crate::rng::{stream_rng, Stream};

    fn rng(seed: u64) -> crate::rng::StreamRng {
        stream_rng(seed, Stream::Augment, &[])
    }

    fn path(n: usize) -> Graph {
        Graph::new(
            Tensor::from_fn(n, 2, |i, j| (i * 2 + j) as f64),
            (0..n - 1).map(|i| (i, i + 1)).collect(),
            None,
        )
        .unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(
            Tensor::from_fn(3, 1, |i, _| i as f64 + 1.0),
            vec![(0, 1), (1, 2), (2, 0)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn ratio_zero_is_identity() {
        let g = path(6);
        let mut r = rng(1);
        assert_eq!(node_drop(&g, 0.0, &mut r).unwrap(), g);
        assert_eq!(edge_perturb(&g, 0.0, &mut r).unwrap(), g);
        assert_eq!(attribute_mask(&g, 0.0, &mut r).unwrap(), g);
        assert_eq!(subgraph_sample(&g, 0.0, &mut r).unwrap(), g);
    }

    #[test]
    fn node_drop_floor_count() {
        let g = path(10);
        let out = node_drop(&g, 0.2, &mut rng(2)).unwrap();
        assert_eq!(out.num_nodes(), 8);
    }

    #[test]
    fn dropping_triangle_middle_keeps_closing_edge() {
        let out = remove_nodes(&triangle(), &[1]).unwrap();
        assert_eq!(out.num_nodes(), 2);
        // former (2,0) becomes (1,0)
        assert_eq!(out.edges(), &[(1, 0)]);
        assert_eq!(out.features().data(), &[1.0, 3.0]);
    }

    #[test]
    fn node_drop_cannot_empty_graph() {
        assert!(remove_nodes(&triangle(), &[0, 1, 2]).is_err());
    }

    #[test]
    fn edge_perturb_on_complete_graph_only_removes() {
        let out = edge_perturb(&triangle(), 1.0 / 3.0, &mut rng(3)).unwrap();
        assert_eq!(out.num_nodes(), 3);
        assert_eq!(out.edges().len(), 2);
    }

    #[test]
    fn edge_perturb_on_edgeless_graph_is_noop() {
        let g = Graph::new(Tensor::zeros(3, 1), vec![], None).unwrap();
        assert_eq!(edge_perturb(&g, 0.5, &mut rng(0)).unwrap(), g);
    }

    #[test]
    fn attribute_mask_zeroes_rows() {
        let g = Graph::new(
            Tensor::filled(5, 3, 1.0),
            vec![(0, 1), (2, 3)],
            None,
        )
        .unwrap();
        let out = attribute_mask(&g, 0.4, &mut rng(4)).unwrap();
        let zero_rows = (0..5)
            .filter(|&v| out.features().row_slice(v).iter().all(|&x| x == 0.0))
            .count();
        assert_eq!(zero_rows, 2);
        assert_eq!(out.edges(), g.edges());
    }

    #[test]
    fn subgraph_on_path_is_contiguous() {
        for seed in 0..20 {
            let out = subgraph_sample(&path(10), 0.5, &mut rng(seed)).unwrap();
            assert_eq!(out.num_nodes(), 5);
            assert_eq!(out.edges().len(), 4);
            assert!(out.is_connected());
        }
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::new(vec![], 0.2).is_err());
        assert!(AugmentationPolicy::new(vec![AugmentKind::NodeDrop], 1.0).is_err());
        assert!(AugmentationPolicy::new(vec![AugmentKind::NodeDrop], -0.1).is_err());
        assert_eq!("subgraph".parse::<AugmentKind>().unwrap(), AugmentKind::Subgraph);
        assert!("shuffle".parse::<AugmentKind>().is_err());
    }

    #[test]
    fn mask_only_policy_at_zero_is_identity() {
        let policy = AugmentationPolicy::new(vec![AugmentKind::AttributeMask], 0.0).unwrap();
        let g = path(7);
        assert_eq!(sample_view(&g, &policy, &mut rng(5)).unwrap(), g);
    }

    #[test]
    fn same_stream_same_view() {
        let policy = AugmentationPolicy::new(AugmentKind::ALL.to_vec(), 0.3).unwrap();
        let g = path(12);
        let a = sample_view(&g, &policy, &mut rng(9)).unwrap();
        let b = sample_view(&g, &policy, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }
}
