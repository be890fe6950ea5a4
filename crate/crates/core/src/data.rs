//! Graphs, datasets, the line-delimited dataset file, the planted-motif
//! generator and block-segment batching.
//!
//! Dataset files hold one JSON record per line:
//!
//! ```text
//! {"n":3,"x":[1.0,0.0,0.0,1.0,1.0,1.0],"e":[0,1,1,2,2,0],"y":0}
//! ```
//!
//! `n` is the node count, `x` the row-major `n×d` feature matrix, `e` a flat
//! list of undirected edge endpoint pairs and `y` an optional class label.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Segments, SparseMatrix, Tensor};
use crate::rng::{stream_rng, Stream};

/// Undirected graph with node features. Self-loops are never stored; GIN
/// aggregation adds the self term itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    label: Option<usize>,
}

impl Graph {
    pub fn new(features: Tensor, edges: Vec<(usize, usize)>, label: Option<usize>) -> Result<Self> {
        let n = features.rows();
        let mut seen = HashSet::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Dataset(format!(
                    "edge ({a},{b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::Dataset(format!("self-loop on node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Dataset(format!("duplicate edge ({a},{b})")));
            }
        }
        Ok(Self {
            features,
            edges,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Undirected edge set with endpoints ordered `(min, max)`.
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.num_nodes()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Subgraph induced by `keep` (ascending node ids), re-indexed in order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::Dataset("induced subgraph would have no nodes".into()));
        }
        let mut new_id = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in keep.iter().enumerate() {
            new_id[v] = i;
        }
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(keep.len() * d);
        for &v in keep {
            data.extend_from_slice(self.features.row_slice(v));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| new_id[a] != usize::MAX && new_id[b] != usize::MAX)
            .map(|&(a, b)| (new_id[a], new_id[b]))
            .collect();
        Graph::new(Tensor::new(keep.len(), d, data)?, edges, self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    graphs: Vec<Graph>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Build a dataset; `num_classes` defaults to one past the largest label.
    pub fn new(graphs: Vec<Graph>, num_classes: Option<usize>) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
        if let Some((i, g)) = graphs
            .iter()
            .enumerate()
            .find(|(_, g)| g.feature_dim() != feature_dim)
        {
            return Err(Error::Dataset(format!(
                "graph {i} has feature dim {} but dataset uses {feature_dim}",
                g.feature_dim()
            )));
        }
        let inferred = graphs
            .iter()
            .filter_map(Graph::label)
            .max()
            .map_or(0, |m| m + 1);
        let num_classes = num_classes.unwrap_or(inferred);
        if inferred > num_classes {
            return Err(Error::Dataset(format!(
                "label {} outside {num_classes} classes",
                inferred - 1
            )));
        }
        Ok(Self {
            graphs,
            feature_dim,
            num_classes,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.graphs.iter().map(Graph::label).collect()
    }

    /// Number of graphs per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.graphs.iter().filter_map(Graph::label) {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    x: Vec<f64>,
    e: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<usize>,
}

impl GraphRecord {
    fn from_graph(g: &Graph) -> Self {
        Self {
            n: g.num_nodes(),
            x: g.features.data().to_vec(),
            e: g.edges.iter().flat_map(|&(a, b)| [a, b]).collect(),
            y: g.label,
        }
    }

    fn into_graph(self, feature_dim: Option<usize>) -> std::result::Result<Graph, String> {
        if self.n == 0 {
            return Err("graph must have at least one node".into());
        }
        if self.x.len() % self.n != 0 || self.x.is_empty() {
            return Err(format!(
                "{} feature values do not form {} rows",
                self.x.len(),
                self.n
            ));
        }
        let d = self.x.len() / self.n;
        if let Some(expected) = feature_dim {
            if d != expected {
                return Err(format!("feature dim {d}, expected {expected}"));
            }
        }
        if self.e.len() % 2 != 0 {
            return Err("edge list has odd length".into());
        }
        let edges = self.e.chunks(2).map(|c| (c[0], c[1])).collect();
        let features = Tensor::new(self.n, d, self.x).map_err(|e| e.to_string())?;
        Graph::new(features, edges, self.y).map_err(|e| e.to_string())
    }
}

/// Parse dataset text. `path` is used only in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut graphs = Vec::new();
    let mut feature_dim = None;
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: GraphRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let g = record.into_graph(feature_dim).map_err(err)?;
        feature_dim = Some(g.feature_dim());
        graphs.push(g);
    }
    Dataset::new(graphs, None)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    for g in dataset.graphs() {
        serde_json::to_writer(&mut *out, &GraphRecord::from_graph(g))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Background edge probability of the planted-motif generator.
pub const BACKGROUND_DENSITY: f64 = 0.15;
const FEATURE_NOISE: f64 = 0.01;

/// Two balanced classes of random graphs: class 0 carries a planted 4-clique,
/// class 1 a planted 6-cycle. Features are a one-hot degree bucket (capped at
/// `feature_dim - 1`) plus small Gaussian noise.
pub fn generate_planted_motif_dataset(
    seed: u64,
    num_graphs: usize,
    nodes_per_graph: usize,
    feature_dim: usize,
) -> Result<Dataset> {
    if num_graphs == 0 || num_graphs % 2 != 0 {
        return Err(Error::Dataset(format!(
            "num_graphs must be positive and even, got {num_graphs}"
        )));
    }
    if nodes_per_graph < 8 {
        return Err(Error::Dataset(format!(
            "nodes_per_graph must be at least 8, got {nodes_per_graph}"
        )));
    }
    if feature_dim < 4 {
        return Err(Error::Dataset(format!(
            "feature_dim must be at least 4, got {feature_dim}"
        )));
    }
    let noise = Normal::new(0.0, FEATURE_NOISE).expect("valid sigma");
    let n = nodes_per_graph;
    let mut graphs = Vec::with_capacity(num_graphs);
    for gi in 0..num_graphs {
        let mut rng = stream_rng(seed, Stream::Data, &[gi as u64]);
        let label = gi % 2;
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(BACKGROUND_DENSITY) {
                    edges.insert((a, b));
                }
            }
        }
        let motif: Vec<usize> = if label == 0 {
            index::sample(&mut rng, n, 4).into_vec()
        } else {
            index::sample(&mut rng, n, 6).into_vec()
        };
        if label == 0 {
            for (i, &a) in motif.iter().enumerate() {
                for &b in &motif[i + 1..] {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        } else {
            for i in 0..motif.len() {
                let (a, b) = (motif[i], motif[(i + 1) % motif.len()]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let mut edges: Vec<_> = edges.into_iter().collect();
        edges.sort_unstable();

        let mut degree = vec![0usize; n];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut x = Tensor::zeros(n, feature_dim);
        for v in 0..n {
            let bucket = degree[v].min(feature_dim - 1);
            for j in 0..feature_dim {
                let base = if j == bucket { 1.0 } else { 0.0 };
                x.set(v, j, base + noise.sample(&mut rng));
            }
        }
        graphs.push(Graph::new(x, edges, Some(label))?);
    }
    Dataset::new(graphs, Some(2))
}

/// Several graphs packed into one node matrix with per-graph row segments.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    segments: Segments,
    labels: Vec<Option<usize>>,
}

pub fn batch_graphs<'a, I>(graphs: I) -> Result<Batch>
where
    I: IntoIterator<Item = &'a Graph>,
{
    let graphs: Vec<&Graph> = graphs.into_iter().collect();
    let Some(first) = graphs.first() else {
        return Err(Error::Dataset("cannot batch an empty graph list".into()));
    };
    let d = first.feature_dim();
    let mut data = Vec::new();
    let mut edges = Vec::new();
    let mut segments = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    let mut offset = 0;
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(Error::Dataset(format!(
                "graph {i} has feature dim {}, batch uses {d}",
                g.feature_dim()
            )));
        }
        data.extend_from_slice(g.features.data());
        edges.extend(g.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
        segments.push(offset..offset + g.num_nodes());
        labels.push(g.label);
        offset += g.num_nodes();
    }
    Ok(Batch {
        features: Tensor::new(offset, d, data)?,
        edges,
        segments: segments.into(),
        labels,
    })
}

impl Batch {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn segments(&self) -> &Segments {
        &self.segments
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_graphs(&self) -> usize {
        self.segments.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Symmetric neighbour matrix (no self term) for sum aggregation.
    pub fn neighbor_matrix(&self) -> Arc<SparseMatrix> {
        let n = self.total_nodes();
        let entries = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        Arc::new(SparseMatrix::new(n, n, entries).expect("edges within batch"))
    }

    /// `B×N` indicator: entry `(i, v)` is 1 when node `v` belongs to graph `i`.
    pub fn membership(&self) -> Tensor {
        let mut m = Tensor::zeros(self.num_graphs(), self.total_nodes());
        for (i, seg) in self.segments.iter().enumerate() {
            for v in seg.clone() {
                m.set(i, v, 1.0);
            }
        }
        m
    }

    pub fn unbatch(&self) -> Result<Vec<Graph>> {
        let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.num_graphs()];
        let mut owner = vec![0; self.total_nodes()];
        for (i, seg) in self.segments.iter().enumerate() {
            for v in seg.clone() {
                owner[v] = i;
            }
        }
        for &(a, b) in &self.edges {
            let gi = owner[a];
            let start = self.segments[gi].start;
            per_graph[gi].push((a - start, b - start));
        }
        self.segments
            .iter()
            .zip(per_graph)
            .zip(&self.labels)
            .map(|((seg, edges), &label)| {
                Graph::new(self.features.slice_rows(seg.start, seg.end), edges, label)
            })
            .collect()
    }
}

/// Shuffle `0..n` with the split stream of `seed`, then cut into contiguous
/// train/validation/test index lists.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::Contract(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Contract(format!(
            "split of {n} items by {fractions:?} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, &[]));
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DatasetSplit {
    /// Class counts for train, validation and test, in that order.
    pub fn class_counts(&self) -> [Vec<usize>; 3] {
        [
            self.train.class_counts(),
            self.validation.class_counts(),
            self.test.class_counts(),
        ]
    }
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let [train, val, test] = split_indices(dataset.len(), fractions, seed)?;
    Ok(DatasetSplit {
        train: dataset.subset(&train),
        validation: dataset.subset(&val),
        test: dataset.subset(&test),
    })
}
