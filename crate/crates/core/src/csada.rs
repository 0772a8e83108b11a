//! Pseudo-label driven sample weighting.
//!
//! Each epoch the fused node embedding is clustered with K-means. Nodes
//! closest to their centers form the high-confidence set, and pairs inside
//! that set get a weight that depends on whether they share a pseudo label
//! and on how similar they currently are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const KMEANS_MAX_ITER: usize = 300;

/// `Z = (Z^a + Z^b) / 2`.
pub fn fuse_embeddings(z_a: &DenseMatrix, z_b: &DenseMatrix) -> Result<DenseMatrix> {
    z_a.mean_of_two(z_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `k x d`
    pub centers: DenseMatrix,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
    /// Distortion after every assignment step.
    pub distortion_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.row_iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeding(z: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let n = z.rows();
    let mut centers = DenseMatrix::zeros(k, z.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(z.row(first));
    let mut closest: Vec<f64> = z.row_iter().map(|p| squared_distance(p, z.row(first))).collect();

    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding leaving us on a zero-weight point
            if closest[chosen] == 0.0 {
                chosen = closest
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(z.row(pick));
        for (i, p) in z.row_iter().enumerate() {
            closest[i] = closest[i].min(squared_distance(p, z.row(pick)));
        }
    }
    centers
}

fn lloyd(z: &DenseMatrix, mut centers: DenseMatrix) -> KMeansResult {
    let (n, d) = z.shape();
    let k = centers.rows();
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut distortion = 0.0;
        for (i, p) in z.row_iter().enumerate() {
            let (c, dist) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            distortion += dist;
        }
        history.push(distortion);
        if !changed {
            break;
        }

        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in z.row_iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        // re-seed empty clusters from the point farthest from its center
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&i, &j| {
                    let di = squared_distance(z.row(i), centers.row(labels[i]));
                    let dj = squared_distance(z.row(j), centers.row(labels[j]));
                    di.total_cmp(&dj).then(j.cmp(&i))
                });
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                counts[c] += 1;
                let p = z.row(i).to_vec();
                centers.row_mut(c).copy_from_slice(&p);
            }
        }
    }

    let inertia = z
        .row_iter()
        .zip(&labels)
        .map(|(p, &c)| squared_distance(p, centers.row(c)))
        .sum();
    KMeansResult {
        labels,
        centers,
        inertia,
        distortion_history: history,
    }
}

/// Lloyd's algorithm from a single k-means++ initialization.
pub fn kmeans(z: &DenseMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_restarts(z, k, seed, 1)
}

/// Best of `restarts` independent k-means++ runs by inertia.
pub fn kmeans_restarts(z: &DenseMatrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > z.rows() {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} points",
            z.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let centers = plus_plus_seeding(z, k, &mut rng);
        let run = lloyd(z, centers);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Softmax over nodes of the negated distance to the assigned center, so
/// that nodes near their center score highest.
pub fn confidence_scores(z: &DenseMatrix, labels: &[usize], centers: &DenseMatrix) -> Result<Vec<f64>> {
    if labels.len() != z.rows() {
        return Err(Error::Contract(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= centers.rows()) {
        return Err(Error::Contract(format!(
            "label {bad} has no center among {}",
            centers.rows()
        )));
    }
    let scores: Vec<f64> = z
        .row_iter()
        .zip(labels)
        .map(|(p, &c)| -squared_distance(p, centers.row(c)).sqrt())
        .collect();
    Ok(softmax(&scores))
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `round(N (1 − τ))`, halves rounded up.
pub fn high_confidence_count(n: usize, tau: f64) -> usize {
    // tolerance absorbs representation error such as 5 * (1 - 0.9) = 0.4999…
    let m = (n as f64 * (1.0 - tau) + 0.5 + 1e-9).floor();
    (m.max(0.0) as usize).min(n)
}

/// Indices of the `M` most confident nodes, ties going to the lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighConfidenceSet {
    indices: Vec<usize>,
    members: Vec<bool>,
}

impl HighConfidenceSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn everyone(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            members: vec![true; n],
        }
    }
}

pub fn select_high_confidence(conf: &[f64], tau: f64) -> Result<HighConfidenceSet> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("confidence factor must lie in [0, 1), got {tau}")));
    }
    let n = conf.len();
    let m = high_confidence_count(n, tau);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps lower indices first among equal confidences
    order.sort_by(|&i, &j| conf[j].total_cmp(&conf[i]));
    order.truncate(m);
    order.sort_unstable();
    let mut members = vec![false; n];
    for &i in &order {
        members[i] = true;
    }
    Ok(HighConfidenceSet {
        indices: order,
        members,
    })
}

/// Linear decay of the confidence factor across the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub total_epochs: usize,
}

impl TauSchedule {
    pub fn new(tau_start: f64, tau_end: f64, total_epochs: usize) -> Result<Self> {
        if !(tau_start < 1.0 && tau_start >= tau_end && tau_end >= 0.0) {
            return Err(Error::Config(format!(
                "tau schedule needs 1 > tau_start >= tau_end >= 0, got {tau_start} -> {tau_end}"
            )));
        }
        Ok(Self {
            tau_start,
            tau_end,
            total_epochs,
        })
    }

    /// A schedule that stays at `tau`.
    pub fn fixed(tau: f64, total_epochs: usize) -> Result<Self> {
        Self::new(tau, tau, total_epochs)
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.total_epochs <= 1 {
            return self.tau_start;
        }
        let last = (self.total_epochs - 1) as f64;
        let progress = (epoch as f64 / last).min(1.0);
        self.tau_start + (self.tau_end - self.tau_start) * progress
    }
}

/// `Q_ij = 1` iff nodes `i` and `j` share a pseudo label.
pub fn pseudo_label_correlation(labels: &[usize]) -> DenseMatrix {
    let n = labels.len();
    let mut q = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q.set(i, j, 1.0);
            }
        }
    }
    q
}

pub fn validate_exponents(beta: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(1.0..=5.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [1, 5], got {gamma}")));
    }
    Ok(())
}

/// Weight of a pair whose endpoints are both high-confidence, given the
/// normalized similarity.
pub fn pair_weight(s_hat: f64, same_cluster: bool, beta: f64, gamma: f64) -> f64 {
    let exponent = if same_cluster { beta } else { gamma };
    (1.0 - s_hat).max(0.0).powf(exponent).exp()
}

/// Pairwise weights for one similarity matrix. Pairs with an endpoint
/// outside the high-confidence set keep weight 1.
pub fn modulation_weights(
    s: &DenseMatrix,
    q: &DenseMatrix,
    high: &HighConfidenceSet,
    beta: f64,
    gamma: f64,
) -> Result<DenseMatrix> {
    validate_exponents(beta, gamma)?;
    if s.shape() != q.shape() {
        return Err(Error::Shape {
            op: "modulation_weights",
            left: s.shape(),
            right: q.shape(),
        });
    }
    if s.rows() != high.members().len() {
        return Err(Error::Contract(format!(
            "confidence set covers {} nodes, similarity has {}",
            high.members().len(),
            s.rows()
        )));
    }
    let s_hat = s.minmax_normalize()?;
    let mut w = DenseMatrix::filled(s.rows(), s.cols(), 1.0);
    for &i in high.indices() {
        for &j in high.indices() {
            let same = q.get(i, j) == 1.0;
            w.set(i, j, pair_weight(s_hat.get(i, j), same, beta, gamma));
        }
    }
    Ok(w)
}

/// Clustering snapshot built from the fused embedding for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub labels: Vec<usize>,
    pub centers: DenseMatrix,
    pub conf: Vec<f64>,
    pub high: HighConfidenceSet,
    pub q: DenseMatrix,
}

impl ClusterState {
    pub fn compute(z: &DenseMatrix, k: usize, tau: f64, seed: u64, restarts: usize) -> Result<Self> {
        let km = kmeans_restarts(z, k, seed, restarts)?;
        let conf = confidence_scores(z, &km.labels, &km.centers)?;
        let high = select_high_confidence(&conf, tau)?;
        let q = pseudo_label_correlation(&km.labels);
        Ok(Self {
            labels: km.labels,
            centers: km.centers,
            conf,
            high,
            q,
        })
    }
}
