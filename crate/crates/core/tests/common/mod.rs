#![allow(dead_code)]

use groupcl::data::{batch_graphs, Batch, Graph};
use groupcl::numeric::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Rows drawn uniformly from the unit sphere.
pub fn unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = uniform(rng, rows, cols, -1.0, 1.0);
    for i in 0..rows {
        let row = t.row_slice_mut(i);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    t
}

pub fn random_graph(rng: &mut impl Rng, n: usize, d: usize, density: f64) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(uniform(rng, n, d, -2.0, 2.0), edges, Some(rng.random_range(0..2))).unwrap()
}

pub fn random_graphs(rng: &mut impl Rng, count: usize, max_nodes: usize, d: usize) -> Vec<Graph> {
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=max_nodes);
            random_graph(rng, n, d, 0.4)
        })
        .collect()
}

pub fn random_batch(rng: &mut impl Rng, count: usize, max_nodes: usize, d: usize) -> Batch {
    batch_graphs(&random_graphs(rng, count, max_nodes, d)).unwrap()
}

/// Node `v` of `g` becomes node `perm[v]`.
pub fn permute(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.num_nodes();
    let mut x = Tensor::zeros(n, g.feature_dim());
    for v in 0..n {
        x.row_slice_mut(perm[v]).copy_from_slice(g.features().row_slice(v));
    }
    let edges = g.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
    Graph::new(x, edges, g.label()).unwrap()
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
