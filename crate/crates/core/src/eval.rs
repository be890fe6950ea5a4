//! Embedding extraction, linear probe and diagnostics on trained models.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{split_indices, Dataset, Graph, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::numeric::{Adam, AdamConfig, ParamSet, Tensor};
use crate::trainer::{Model, Readout};

/// Frozen graph embeddings, one row per graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub embeddings: Tensor,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<usize>, labels: Vec<Option<usize>>, embeddings: Tensor) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != embeddings.rows() {
            return Err(Error::shape(
                "embedding-table",
                format!(
                    "{} ids, {} labels, {} rows",
                    ids.len(),
                    labels.len(),
                    embeddings.rows()
                ),
            ));
        }
        Ok(Self {
            ids,
            labels,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.embeddings.cols()
    }

    /// `id,label,e0,…` with an empty label field for unlabeled graphs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,label");
        for j in 0..self.width() {
            let _ = write!(s, ",e{j}");
        }
        s.push('\n');
        for (i, (&id, label)) in self.ids.iter().zip(&self.labels).enumerate() {
            let _ = write!(s, "{id},");
            if let Some(y) = label {
                let _ = write!(s, "{y}");
            }
            for x in self.embeddings.row_slice(i) {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }
}

/// Embed every graph of `dataset` without augmentation, in batches of the
/// model's batch size.
pub fn extract_embeddings(model: &Model, dataset: &Dataset) -> Result<EmbeddingTable> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot embed an empty dataset".into()));
    }
    let graphs: Vec<&Graph> = dataset.graphs().iter().collect();
    let mut rows = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(model.config().batch_size) {
        let (emb, _) = model.embed(chunk)?;
        for i in 0..emb.rows() {
            rows.push(emb.row_slice(i).to_vec());
        }
    }
    EmbeddingTable::new(
        (0..dataset.len()).collect(),
        dataset.labels(),
        Tensor::from_rows(&rows)?,
    )
}

/// Inverse regularisation strengths tried by the probe.
pub const PROBE_C_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
pub const PROBE_STEPS: usize = 300;
pub const PROBE_LR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitScore {
    pub size: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub num_classes: usize,
    /// Selected inverse regularisation strength.
    pub c: f64,
    pub train: SplitScore,
    pub validation: SplitScore,
    pub test: SplitScore,
    /// Test accuracy per true class; `None` when the class is absent.
    pub per_class_test_accuracy: Vec<Option<f64>>,
    /// Validation accuracy for each entry of [`PROBE_C_GRID`].
    pub validation_by_c: Vec<f64>,
}

impl ProbeResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("probe result serialises")
    }

    /// `split,size,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,size,accuracy\n");
        for (name, sc) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            let _ = writeln!(s, "{name},{},{}", sc.size, sc.accuracy);
        }
        s
    }
}

struct Standardized {
    x: Tensor,
    y: Vec<usize>,
}

fn gather(table: &EmbeddingTable, idx: &[usize], labels: &[usize], mean: &[f64], std: &[f64]) -> Standardized {
    let d = table.width();
    let x = Tensor::from_fn(idx.len(), d, |i, j| {
        (table.embeddings.get(idx[i], j) - mean[j]) / std[j]
    });
    Standardized {
        x,
        y: idx.iter().map(|&i| labels[i]).collect(),
    }
}

fn logits(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut z = x.matmul(w).expect("probe shapes agree");
    for i in 0..z.rows() {
        for (v, bias) in z.row_slice_mut(i).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    z
}

fn softmax_rows(z: &mut Tensor) {
    for i in 0..z.rows() {
        let row = z.row_slice_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Mean cross-entropy and predictions.
fn evaluate(data: &Standardized, w: &Tensor, b: &Tensor) -> (f64, Vec<usize>) {
    let mut p = logits(&data.x, w, b);
    softmax_rows(&mut p);
    let mut ce = 0.0;
    let mut pred = Vec::with_capacity(data.y.len());
    for (i, &y) in data.y.iter().enumerate() {
        let row = p.row_slice(i);
        ce -= row[y].max(1e-300).ln();
        let best = (0..row.len())
            .max_by(|&a, &c| row[a].total_cmp(&row[c]).then(c.cmp(&a)))
            .unwrap_or(0);
        pred.push(best);
    }
    (ce / data.y.len() as f64, pred)
}

fn fit(train: &Standardized, k: usize, alpha: f64) -> Result<(Tensor, Tensor)> {
    let d = train.x.cols();
    let n = train.y.len() as f64;
    let mut params = ParamSet::new();
    params.insert("w", Tensor::zeros(d, k));
    params.insert("b", Tensor::zeros(1, k));
    let mut opt = Adam::new(AdamConfig::with_lr(PROBE_LR), &params)?;
    let xt = train.x.transpose();
    for _ in 0..PROBE_STEPS {
        let w = params.get("w")?;
        let b = params.get("b")?;
        let mut g = logits(&train.x, w, b);
        softmax_rows(&mut g);
        for (i, &y) in train.y.iter().enumerate() {
            let row = g.row_slice_mut(i);
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let mut gw = xt.matmul(&g)?;
        gw.add_assign(&w.map(|v| alpha * v));
        let gb = Tensor::from_fn(1, k, |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
        let grads = BTreeMap::from([("w".to_string(), gw), ("b".to_string(), gb)]);
        opt.step(&mut params, &grads)?;
    }
    Ok((params.get("w")?.clone(), params.get("b")?.clone()))
}

fn score(data: &Standardized, pred: &[usize], k: usize) -> SplitScore {
    let mut confusion = vec![vec![0; k]; k];
    for (&y, &p) in data.y.iter().zip(pred) {
        confusion[y][p] += 1;
    }
    let correct = data.y.iter().zip(pred).filter(|(y, p)| y == p).count();
    SplitScore {
        size: data.y.len(),
        accuracy: correct as f64 / data.y.len() as f64,
        confusion,
    }
}

/// Multinomial logistic regression on frozen embeddings.
///
/// The table is split 8:1:1 with `split_seed`, features are standardised with
/// training statistics, and for each `C` in [`PROBE_C_GRID`] a model is fit by
/// full-batch Adam on cross-entropy plus `‖W‖²/(2·C·n_train)`. The `C` with the
/// best validation accuracy is kept, ties going to the lower validation loss
/// and then to the smaller `C`.
pub fn linear_probe(table: &EmbeddingTable, split_seed: u64) -> Result<ProbeResult> {
    let labels: Vec<usize> = table
        .labels
        .iter()
        .enumerate()
        .map(|(i, y)| y.ok_or_else(|| Error::Dataset(format!("graph {} has no label", table.ids[i]))))
        .collect::<Result<_>>()?;
    if !table.embeddings.is_finite() {
        return Err(Error::numeric("linear-probe", "embeddings contain non-finite values"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let [tr, va, te] = split_indices(table.len(), DEFAULT_SPLIT, split_seed)?;
    let mut present: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Dataset(format!(
            "training split has a single class ({:?}); the probe needs at least 2",
            present
        )));
    }
    let d = table.width();
    let n_train = tr.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| tr.iter().map(|&i| table.embeddings.get(i, j)).sum::<f64>() / n_train)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = tr
                .iter()
                .map(|&i| (table.embeddings.get(i, j) - mean[j]).powi(2))
                .sum::<f64>()
                / n_train;
            if var.sqrt() < 1e-12 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    let train = gather(table, &tr, &labels, &mean, &std);
    let val = gather(table, &va, &labels, &mean, &std);
    let test = gather(table, &te, &labels, &mean, &std);

    let mut best: Option<(f64, f64, f64, Tensor, Tensor)> = None;
    let mut validation_by_c = Vec::with_capacity(PROBE_C_GRID.len());
    for &c in &PROBE_C_GRID {
        let (w, b) = fit(&train, k, 1.0 / (c * n_train))?;
        let (loss, pred) = evaluate(&val, &w, &b);
        let acc = score(&val, &pred, k).accuracy;
        validation_by_c.push(acc);
        let better = match &best {
            None => true,
            Some((a, l, ..)) => acc > *a || (acc == *a && loss < *l),
        };
        if better {
            best = Some((acc, loss, c, w, b));
        }
    }
    let (_, _, c, w, b) = best.expect("grid is non-empty");
    let split_score = |data: &Standardized| {
        let (_, pred) = evaluate(data, &w, &b);
        score(data, &pred, k)
    };
    let test_score = split_score(&test);
    let per_class_test_accuracy = test_score
        .confusion
        .iter()
        .enumerate()
        .map(|(y, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[y] as f64 / n as f64)
        })
        .collect();
    Ok(ProbeResult {
        num_classes: k,
        c,
        train: split_score(&train),
        validation: split_score(&val),
        test: test_score,
        per_class_test_accuracy,
        validation_by_c,
    })
}

/// Cosine similarity between the columns of `q`; the diagonal is exactly 1.
pub fn cosine_matrix(q: &Tensor) -> Result<Tensor> {
    let p = q.cols();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|k| (0..q.rows()).map(|i| q.get(i, k)).collect())
        .collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(k) = norms.iter().position(|&n| n < 1e-12) {
        return Err(Error::numeric(
            "query-cosine",
            format!("query column {k} has zero norm"),
        ));
    }
    Ok(Tensor::from_fn(p, p, |k, l| {
        if k == l {
            return 1.0;
        }
        let dot: f64 = cols[k].iter().zip(&cols[l]).map(|(a, b)| a * b).sum();
        (dot / (norms[k] * norms[l])).clamp(-1.0, 1.0)
    }))
}

/// Cosine similarity of the learned query vectors.
pub fn query_cosine_matrix(model: &Model) -> Result<Tensor> {
    let q = model
        .queries()
        .ok_or_else(|| Error::Contract("model has no representor queries".into()))?;
    cosine_matrix(q)
}

/// Mean of `|m[k][l]|` over `k≠l`; 0 for a 1×1 matrix.
pub fn mean_off_diagonal_abs(m: &Tensor) -> f64 {
    let p = m.rows();
    if p < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..p {
        for l in 0..p {
            if k != l {
                s += m.get(k, l).abs();
            }
        }
    }
    s / (p * (p - 1)) as f64
}

pub fn matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row_slice(i).iter().map(|x| x.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionRecord {
    pub node: usize,
    pub group: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionExport {
    /// Node-major: all groups of node 0, then node 1, …
    pub records: Vec<AttentionRecord>,
    /// Node with the largest weight in each group; ties go to the lower index.
    pub argmax: Vec<usize>,
}

impl AttentionExport {
    pub fn to_csv(&self, graph_id: usize) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{graph_id},{},{},{}", r.node, r.group, r.weight);
        }
        s
    }
}

pub const ATTENTION_CSV_HEADER: &str = "graph,node,group,weight";

/// Attention weights of every (node, group) pair of one graph.
pub fn export_attention(model: &Model, graph: &Graph) -> Result<AttentionExport> {
    let (_, attention) = model.embed(&[graph])?;
    let a = attention
        .ok_or_else(|| Error::Contract("model readout has no attention".into()))?;
    let mut records = Vec::with_capacity(a.len());
    for node in 0..a.rows() {
        for group in 0..a.cols() {
            records.push(AttentionRecord {
                node,
                group,
                weight: a.get(node, group),
            });
        }
    }
    let argmax = (0..a.cols())
        .map(|k| {
            (0..a.rows())
                .max_by(|&i, &j| a.get(i, k).total_cmp(&a.get(j, k)).then(j.cmp(&i)))
                .unwrap_or(0)
        })
        .collect();
    Ok(AttentionExport { records, argmax })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeadParamCount {
    pub groupcl_head: usize,
    pub graphcl_head: usize,
}

/// Weight counts of the two readouts, biases excluded: queries plus key and
/// value projections for GroupCL, two `d_o×d_o` layers for GraphCL.
pub fn count_head_params(p: usize, d_n: usize, d_k: usize, d_o: usize) -> Result<HeadParamCount> {
    if p == 0 || d_o % p != 0 {
        return Err(Error::Config(format!(
            "embedding dim {d_o} is not divisible into {p} groups"
        )));
    }
    Ok(HeadParamCount {
        groupcl_head: p * d_k + d_n * d_k + d_n * (d_o / p),
        graphcl_head: 2 * d_o * d_o,
    })
}

/// Weight scalars actually allocated in the model's main readout, biases
/// excluded.
pub fn readout_weight_count(model: &Model) -> Result<usize> {
    let params = model.params();
    Ok(match &model.architecture().main.readout {
        Readout::Groups(rep) => {
            params.get(&rep.key_name())?.len()
                + params.get(&rep.value_name())?.len()
                + params.get(rep.query_name())?.len()
        }
        Readout::Head(head) => {
            let mut n = 0;
            for lin in head.layers() {
                n += params.get(&lin.weight_name())?.len();
            }
            n
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_head_counts() {
        let c = count_head_params(4, 160, 100, 160).unwrap();
        assert_eq!(c.groupcl_head, 22_800);
        assert_eq!(c.graphcl_head, 51_200);
        assert_eq!(count_head_params(1, 160, 100, 160).unwrap().groupcl_head, 41_700);
        assert!(count_head_params(3, 160, 100, 160).is_err());
    }

    #[test]
    fn cosine_of_identical_and_orthogonal() {
        let same = Tensor::filled(3, 4, 0.5);
        let m = cosine_matrix(&same).unwrap();
        assert!(m.data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let m = cosine_matrix(&Tensor::identity(3)).unwrap();
        assert_eq!(m, Tensor::identity(3));
        assert_eq!(mean_off_diagonal_abs(&m), 0.0);
        assert!(cosine_matrix(&Tensor::zeros(2, 2)).is_err());
    }
}
