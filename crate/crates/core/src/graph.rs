//! Attributed graphs: CSV ingestion, normalized operators and a stochastic
//! block model generator.
//!
//! On-disk layout of a dataset directory (no headers, UTF-8, LF or CRLF):
//!
//! * `features.csv` – one node per line, comma-separated decimals
//! * `edges.csv` – one `src,dst` pair per line, 0-indexed
//! * `labels.csv` – optional, one integer per line

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const FEATURES_FILE: &str = "features.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// Undirected attributed graph with optional ground-truth classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    x: DenseMatrix,
    a: DenseMatrix,
    labels: Option<Vec<usize>>,
    classes: Vec<i64>,
}

impl Graph {
    /// Validates and assembles a graph. `labels` holds the original class
    /// values; they are remapped to `0..K` in sorted order.
    pub fn new(x: DenseMatrix, a: DenseMatrix, labels: Option<Vec<i64>>) -> Result<Self> {
        let n = x.rows();
        if a.shape() != (n, n) {
            return Err(Error::Contract(format!(
                "adjacency is {:?} but there are {n} nodes",
                a.shape()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Contract("features contain non-finite values".into()));
        }
        for i in 0..n {
            if a.get(i, i) != 0.0 {
                return Err(Error::Contract(format!("self-loop on node {i}")));
            }
            for j in 0..n {
                let v = a.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Contract(format!("adjacency entry ({i},{j}) = {v}")));
                }
                if v != a.get(j, i) {
                    return Err(Error::Contract(format!("adjacency not symmetric at ({i},{j})")));
                }
            }
        }
        let (labels, classes) = match labels {
            None => (None, Vec::new()),
            Some(raw) => {
                if raw.len() != n {
                    return Err(Error::Contract(format!(
                        "{} labels for {n} nodes",
                        raw.len()
                    )));
                }
                let classes: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                let mapped = raw
                    .iter()
                    .map(|v| classes.binary_search(v).expect("value drawn from the same set"))
                    .collect();
                (Some(mapped), classes)
            }
        };
        Ok(Self {
            x,
            a,
            labels,
            classes,
        })
    }

    /// Attribute matrix, `N x D`.
    pub fn features(&self) -> &DenseMatrix {
        &self.x
    }

    /// Binary symmetric adjacency without self-loops, `N x N`.
    pub fn adjacency(&self) -> &DenseMatrix {
        &self.a
    }

    /// Ground-truth classes remapped to `0..K`.
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Original class values; index `c` holds the value remapped to `c`.
    pub fn class_values(&self) -> &[i64] {
        &self.classes
    }

    pub fn node_count(&self) -> usize {
        self.x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Number of ground-truth classes, zero when unlabeled.
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn edge_count(&self) -> usize {
        (self.a.sum() / 2.0).round() as usize
    }

    /// Copy of this graph with replaced features.
    pub fn with_features(&self, x: DenseMatrix) -> Result<Self> {
        if x.rows() != self.node_count() {
            return Err(Error::Shape {
                op: "with_features",
                left: x.shape(),
                right: self.x.shape(),
            });
        }
        Ok(Self {
            x,
            ..self.clone()
        })
    }
}

/// `Ã = D̂^{-1/2} (A + I) D̂^{-1/2}` and `L̃ = I − Ã`.
pub fn normalized_operators(graph: &Graph) -> (DenseMatrix, DenseMatrix) {
    let n = graph.node_count();
    let a = graph.adjacency();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.row(i).iter().sum::<f64>() + 1.0).sqrt())
        .collect();
    let mut a_tilde = DenseMatrix::zeros(n, n);
    let mut l_tilde = DenseMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let self_loop = if i == j { 1.0 } else { 0.0 };
            let v = (a.get(i, j) + self_loop) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            a_tilde.set(i, j, v);
            l_tilde.set(i, j, self_loop - v);
        }
    }
    (a_tilde, l_tilde)
}

/// Reads `features.csv`, `edges.csv` and (if present) `labels.csv`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let features_path = dir.join(FEATURES_FILE);
    let edges_path = dir.join(EDGES_FILE);
    let labels_path = dir.join(LABELS_FILE);

    let x = read_features(&features_path)?;
    let n = x.rows();
    let a = read_edges(&edges_path, n)?;
    let labels = if labels_path.exists() {
        Some(read_labels(&labels_path, n)?)
    } else {
        None
    };
    Graph::new(x, a, labels)
}

/// Writes a graph in the layout read by [`load_dataset`].
pub fn save_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut out = String::new();
    for row in graph.features().row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // `{}` on f64 prints the shortest representation that parses back exactly
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    write_file(&dir.join(FEATURES_FILE), &out)?;

    out.clear();
    let a = graph.adjacency();
    for i in 0..graph.node_count() {
        for j in (i + 1)..graph.node_count() {
            if a.get(i, j) != 0.0 {
                writeln!(out, "{i},{j}").unwrap();
            }
        }
    }
    write_file(&dir.join(EDGES_FILE), &out)?;

    if let Some(labels) = graph.labels() {
        out.clear();
        for &l in labels {
            writeln!(out, "{}", graph.class_values()[l]).unwrap();
        }
        write_file(&dir.join(LABELS_FILE), &out)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers, CR stripped.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn read_features(path: &Path) -> Result<DenseMatrix> {
    let lines = data_lines(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    for (line, text) in &lines {
        let cells: Vec<&str> = text.split(',').map(str::trim).collect();
        let expected = *cols.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: *line,
                expected,
                found: cells.len(),
            });
        }
        for cell in cells {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line: *line,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    path: path.to_path_buf(),
                    line: *line,
                    cell: cell.to_string(),
                });
            }
            data.push(v);
        }
    }
    let Some(cols) = cols else {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: "no feature rows".into(),
        });
    };
    DenseMatrix::from_vec(lines.len(), cols, data)
}

fn read_edges(path: &Path, n: usize) -> Result<DenseMatrix> {
    let mut a = DenseMatrix::zeros(n, n);
    for (line, text) in data_lines(path)? {
        let cells: Vec<&str> = text.split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: 2,
                found: cells.len(),
            });
        }
        let mut ends = [0usize; 2];
        for (slot, cell) in ends.iter_mut().zip(&cells) {
            let idx: usize = cell.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line,
                cell: cell.to_string(),
            })?;
            if idx >= n {
                return Err(Error::IndexOutOfRange {
                    path: path.to_path_buf(),
                    line,
                    index: idx,
                    nodes: n,
                });
            }
            *slot = idx;
        }
        let [src, dst] = ends;
        // self-loops are re-added uniformly when building normalized operators
        if src != dst {
            a.set(src, dst, 1.0);
            a.set(dst, src, 1.0);
        }
    }
    Ok(a)
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<i64>> {
    let lines = data_lines(path)?;
    let mut labels = Vec::with_capacity(lines.len());
    for (line, text) in &lines {
        let v: i64 = text.parse().map_err(|_| Error::NonNumeric {
            path: path.to_path_buf(),
            line: *line,
            cell: text.clone(),
        })?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("{} labels for {n} feature rows", labels.len()),
        });
    }
    Ok(labels)
}

/// Stochastic block model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Offset added to feature `j` of every node in block `b` whenever
    /// `j % blocks == b`.
    pub feature_shift: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            blocks: 3,
            per_block: 50,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 8,
            feature_shift: 1.5,
            seed: 0,
        }
    }
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.p_in) || !p_ok(self.p_out) || self.p_out > self.p_in {
            return Err(Error::Config(format!(
                "SBM needs 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.blocks == 0 || self.per_block == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "SBM blocks, per_block and feature_dim must be positive".into(),
            ));
        }
        if !self.feature_shift.is_finite() {
            return Err(Error::Config("SBM feature_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Samples a planted-partition graph. Nodes are ordered block by block and
/// labelled with their block id.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph> {
    params.validate()?;
    let n = params.blocks * params.per_block;
    let block = |i: usize| i / params.per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block(i) == block(j) {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }

    let mut x = DenseMatrix::zeros(n, params.feature_dim);
    for i in 0..n {
        let b = block(i);
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            let shift = if j % params.blocks == b {
                params.feature_shift
            } else {
                0.0
            };
            *v = noise + shift;
        }
    }
    let labels = (0..n).map(|i| block(i) as i64).collect();
    Graph::new(x, a, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> Graph {
        let mut a = DenseMatrix::zeros(n, n);
        for &(i, j) in edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        Graph::new(DenseMatrix::filled(n, 1, 1.0), a, None).unwrap()
    }

    #[test]
    fn operators_single_edge() {
        let g = graph_from_edges(2, &[(0, 1)]);
        let (at, lt) = normalized_operators(&g);
        assert!(at.max_abs_diff(&DenseMatrix::filled(2, 2, 0.5)) < 1e-15);
        assert_eq!(at.add(&lt).unwrap(), DenseMatrix::identity(2));
    }

    #[test]
    fn operators_edgeless() {
        let g = graph_from_edges(3, &[]);
        let (at, lt) = normalized_operators(&g);
        assert_eq!(at, DenseMatrix::identity(3));
        assert_eq!(lt, DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn operators_triangle() {
        let g = graph_from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let (at, lt) = normalized_operators(&g);
        assert!(at.max_abs_diff(&DenseMatrix::filled(3, 3, 1.0 / 3.0)) < 1e-15);
        assert_eq!(at.add(&lt).unwrap(), DenseMatrix::identity(3));
    }

    #[test]
    fn graph_rejects_asymmetric_adjacency() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 1, 1.0);
        assert!(Graph::new(DenseMatrix::zeros(2, 1), a, None).is_err());
    }

    #[test]
    fn labels_are_remapped_in_sorted_order() {
        let g = Graph::new(
            DenseMatrix::zeros(3, 1),
            DenseMatrix::zeros(3, 3),
            Some(vec![7, 2, 7]),
        )
        .unwrap();
        assert_eq!(g.labels().unwrap(), &[1, 0, 1]);
        assert_eq!(g.class_values(), &[2, 7]);
        assert_eq!(g.class_count(), 2);
    }

    #[test]
    fn sbm_extreme_probabilities_give_disjoint_cliques() {
        let g = generate_sbm(&SbmParams {
            blocks: 2,
            per_block: 3,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            feature_shift: 1.0,
            seed: 3,
        })
        .unwrap();
        let a = g.adjacency();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 };
                assert_eq!(a.get(i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn sbm_is_deterministic_per_seed() {
        let p = SbmParams::default();
        assert_eq!(generate_sbm(&p).unwrap(), generate_sbm(&p).unwrap());
        let other = SbmParams { seed: 1, ..p };
        assert_ne!(generate_sbm(&p).unwrap(), generate_sbm(&other).unwrap());
    }

    #[test]
    fn sbm_rejects_bad_probabilities() {
        for (p_in, p_out) in [(0.2, 0.3), (1.5, 0.0), (0.5, -0.1)] {
            let p = SbmParams {
                p_in,
                p_out,
                ..SbmParams::default()
            };
            assert!(matches!(generate_sbm(&p), Err(Error::Config(_))));
        }
    }
}
