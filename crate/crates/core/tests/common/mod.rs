//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the engine's loss or metric code; the oracles
//! work on plain nested vectors with straight-line loops.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ragc::csada::ClusterState;
use ragc::graph::{generate_sbm, normalized_operators, Graph, SbmParams};
use ragc::hca::{self, AugmentedViews, EncoderParams, SimilaritySet, StructureBuffer};
use ragc::objective::{forward, unit_weights, weight_set, EpochProblem, Variant};
use ragc::tensor::{DenseMatrix, Tape};

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &DenseMatrix) -> Grid {
    m.row_iter().map(|r| r.to_vec()).collect()
}

/// Four matrices indexed `[anchor view][contrast view]`, 0 = a, 1 = b.
pub type Quad = [[Grid; 2]; 2];

pub fn quad(s: &SimilaritySet) -> Quad {
    [[grid(&s.aa), grid(&s.ab)], [grid(&s.ba), grid(&s.bb)]]
}

/// Scalar loss straight from the per-node definition: the positive is the
/// cross-view self pair, the negatives are every `j != i` in both views.
pub fn oracle_total_loss(s: &Quad, w: &Quad) -> f64 {
    let n = s[0][0].len();
    let mut total = 0.0;
    for l in 0..2 {
        let m_cross = 1 - l;
        for i in 0..n {
            let num = (w[l][m_cross][i][i] * s[l][m_cross][i][i]).exp();
            let mut neg = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                for m in 0..2 {
                    neg += (w[l][m][i][j] * s[l][m][i][j]).exp();
                }
            }
            total += -(num / (num + neg)).ln();
        }
    }
    total / (2.0 * n as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unweighted InfoNCE computed from the embeddings themselves.
pub fn oracle_infonce(views: &AugmentedViews, alpha: f64) -> f64 {
    let z = [grid(&views.z_a), grid(&views.z_b)];
    let e = [grid(&views.e_a), grid(&views.e_b)];
    let n = z[0].len();
    let sim = |l: usize, m: usize, i: usize, j: usize| {
        alpha * dot(&z[l][i], &z[m][j]) + (1.0 - alpha) * dot(&e[l][i], &e[m][j])
    };
    let mut total = 0.0;
    for l in 0..2 {
        for i in 0..n {
            let pos = sim(l, 1 - l, i, i).exp();
            let mut all = pos;
            for j in (0..n).filter(|&j| j != i) {
                all += sim(l, l, i, j).exp() + sim(l, 1 - l, i, j).exp();
            }
            total -= (pos / all).ln();
        }
    }
    total / (2.0 * n as f64)
}

/// Every permutation of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(k - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut values: Vec<usize> = labels.to_vec();
    values.sort_unstable();
    values.dedup();
    let ids = labels
        .iter()
        .map(|l| values.binary_search(l).unwrap())
        .collect();
    (ids, values.len())
}

/// Brute-force ACC and macro-F1: try every bijection between padded
/// cluster and class ids, keep the most accurate, break ties by F1.
pub fn oracle_acc_f1(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let size = kp.max(kt);
    let n = pred.len();
    let mut best = (0usize, f64::NEG_INFINITY);
    for perm in permutations(size) {
        let hits = (0..n).filter(|&i| perm[p[i]] == t[i]).count();
        let mut f1_sum = 0.0;
        for c in 0..kt {
            let cluster = (0..kp).find(|&q| perm[q] == c);
            let f1 = match cluster {
                None => 0.0,
                Some(q) => {
                    let tp = (0..n).filter(|&i| p[i] == q && t[i] == c).count() as f64;
                    let predicted = (0..n).filter(|&i| p[i] == q).count() as f64;
                    let actual = (0..n).filter(|&i| t[i] == c).count() as f64;
                    let (precision, recall) = (tp / predicted, tp / actual);
                    if precision + recall == 0.0 {
                        0.0
                    } else {
                        2.0 * precision * recall / (precision + recall)
                    }
                }
            };
            f1_sum += f1;
        }
        let f1 = f1_sum / kt as f64;
        if hits > best.0 || (hits == best.0 && f1 > best.1) {
            best = (hits, f1);
        }
    }
    (best.0 as f64 / n as f64, best.1)
}

/// ARI from explicit enumeration of all sample pairs.
pub fn oracle_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut in_pred, mut in_truth, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let sp = pred[i] == pred[j];
            let st = truth[i] == truth[j];
            total += 1;
            in_pred += u64::from(sp);
            in_truth += u64::from(st);
            both += u64::from(sp && st);
        }
    }
    let expected = in_pred as f64 * in_truth as f64 / total as f64;
    let max = 0.5 * (in_pred + in_truth) as f64;
    if max == expected {
        return 1.0;
    }
    (both as f64 - expected) / (max - expected)
}

/// NMI from per-sample probability estimates.
pub fn oracle_nmi(pred: &[usize], truth: &[usize], geometric: bool) -> f64 {
    let n = pred.len() as f64;
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let prob = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64 / n;
    let pp: Vec<f64> = (0..kp).map(|a| prob(&|i| p[i] == a)).collect();
    let pt: Vec<f64> = (0..kt).map(|b| prob(&|i| t[i] == b)).collect();
    let h = |v: &[f64]| -> f64 { v.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum() };
    let (hp, ht) = (h(&pp), h(&pt));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (a, &pa) in pp.iter().enumerate() {
        for (b, &pb) in pt.iter().enumerate() {
            let joint = prob(&|i| p[i] == a && t[i] == b);
            if joint > 0.0 {
                mi += joint * (joint / (pa * pb)).ln();
            }
        }
    }
    let denom = if geometric { (hp * ht).sqrt() } else { 0.5 * (hp + ht) };
    (mi / denom).clamp(0.0, 1.0)
}

/// Independent scalar version of the pair weight.
pub fn oracle_weight(s_hat: f64, positive: bool, beta: f64, gamma: f64) -> f64 {
    let base = 1.0 - s_hat;
    let e = if positive { beta } else { gamma };
    std::f64::consts::E.powf(base.powf(e))
}

/// Small random graph with planted communities.
pub fn small_graph(n_per_block: usize, blocks: usize, feature_dim: usize, seed: u64) -> Graph {
    generate_sbm(&SbmParams {
        blocks,
        per_block: n_per_block,
        p_in: 0.6,
        p_out: 0.1,
        feature_dim,
        feature_shift: 1.0,
        seed,
    })
    .unwrap()
}

/// A realistic single-epoch problem: perturbed and smoothed attributes,
/// a once-refined structure buffer and pair weights from actual pseudo
/// labels.
pub fn epoch_problem(
    graph: &Graph,
    embed_dim: usize,
    k: usize,
    variant: Variant,
    seed: u64,
) -> (EpochProblem, EncoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, l_tilde) = normalized_operators(graph);
    let smoothed = hca::build_x_aug(graph.features(), &l_tilde, 0.01, 0.05, 2, 1, seed).unwrap();
    let mut params = EncoderParams::init(graph.feature_dim(), graph.node_count(), embed_dim, seed ^ 0xabc);
    params.alpha_raw = rng.random_range(-1.0..1.0);

    let initial = StructureBuffer::from_adjacency(graph.adjacency()).unwrap();
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, &params, &smoothed.x_aug, &initial, variant).unwrap();
    let views = fwd.views.values(&tape);
    let sims = fwd.sims.values(&tape);
    let buffer = if variant == Variant::NoHca {
        initial
    } else {
        hca::refine_structure(&views, &initial).unwrap()
    };
    let weights = if variant == Variant::NoCsada {
        unit_weights(graph.node_count())
    } else {
        let fused = views.z_a.mean_of_two(&views.z_b).unwrap();
        let tau = rng.random_range(0.0..0.8);
        let state = ClusterState::compute(&fused, k, tau, seed, 1).unwrap();
        weight_set(&sims, &state, rng.random_range(0.05..0.95), rng.random_range(1.0..5.0)).unwrap()
    };
    (
        EpochProblem {
            x_aug: smoothed.x_aug,
            buffer,
            weights,
            variant,
        },
        params,
    )
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter entry. Entries where both are below `floor` are
/// compared against `floor` instead.
pub fn gradient_check(problem: &EpochProblem, params: &EncoderParams, h: f64, floor: f64) -> f64 {
    let (_, grads) = problem.loss_and_grad(params).unwrap();
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic - numeric).abs() / scale);
    };

    type Field = fn(&mut EncoderParams) -> &mut DenseMatrix;
    let fields: [(Field, &DenseMatrix); 4] = [
        (|p| &mut p.node_a, &grads.node_a),
        (|p| &mut p.node_b, &grads.node_b),
        (|p| &mut p.edge_a, &grads.edge_a),
        (|p| &mut p.edge_b, &grads.edge_b),
    ];
    for (field, grad) in fields {
        for idx in 0..grad.len() {
            let mut plus = params.clone();
            field(&mut plus).data_mut()[idx] += h;
            let mut minus = params.clone();
            field(&mut minus).data_mut()[idx] -= h;
            let numeric = (problem.loss(&plus).unwrap() - problem.loss(&minus).unwrap()) / (2.0 * h);
            compare(grad.data()[idx], numeric);
        }
    }
    let mut plus = params.clone();
    plus.alpha_raw += h;
    let mut minus = params.clone();
    minus.alpha_raw -= h;
    let numeric = (problem.loss(&plus).unwrap() - problem.loss(&minus).unwrap()) / (2.0 * h);
    compare(grads.alpha_raw, numeric);
    worst
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}
