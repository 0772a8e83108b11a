//! External clustering metrics and multi-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class ids and counts for both label vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    /// `counts[p][c]`: samples in predicted cluster `p` and true class `c`.
    pub counts: Vec<Vec<u64>>,
    pub pred_sizes: Vec<u64>,
    pub truth_sizes: Vec<u64>,
    pub n: u64,
}

fn compress(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // sorted order so ids do not depend on first appearance
    let ordered: BTreeMap<usize, usize> = ids.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    (labels.iter().map(|l| ordered[l]).collect(), ordered.len())
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.is_empty() {
            return Err(Error::Contract("metrics need at least one sample".into()));
        }
        if pred.len() != truth.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} ground-truth labels",
                pred.len(),
                truth.len()
            )));
        }
        let (p, kp) = compress(pred);
        let (t, kt) = compress(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let pred_sizes = counts.iter().map(|r| r.iter().sum()).collect();
        let truth_sizes = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            pred_sizes,
            truth_sizes,
            n: pred.len() as u64,
        })
    }

    pub fn pred_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn truth_classes(&self) -> usize {
        self.truth_sizes.len()
    }

    /// F1 of true class `c` when predicted cluster `p` is mapped onto it.
    pub fn pair_f1(&self, p: usize, c: usize) -> f64 {
        2.0 * self.counts[p][c] as f64 / (self.pred_sizes[p] + self.truth_sizes[c]) as f64
    }
}

/// Minimum-cost perfect assignment on a square cost matrix; returns the
/// column assigned to every row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials and matching are 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    assignment
}

/// Cluster-to-class mapping maximizing matched samples; among equally
/// accurate mappings the one with the highest macro-F1 is chosen.
/// `None` marks clusters mapped to no present class.
pub fn optimal_mapping(table: &Contingency) -> Vec<Option<usize>> {
    let (kp, kt) = (table.pred_clusters(), table.truth_classes());
    let size = kp.max(kt);
    // F1 terms sum to at most kt < kt + 1, so one extra match always wins
    let tie_scale = 1.0 / (kt as f64 + 1.0);
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|p| {
            (0..size)
                .map(|c| {
                    if p < kp && c < kt {
                        -(table.counts[p][c] as f64 + tie_scale * table.pair_f1(p, c))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    (0..kp)
        .map(|p| Some(assignment[p]).filter(|&c| c < kt))
        .collect()
}

fn matched(table: &Contingency, mapping: &[Option<usize>]) -> u64 {
    mapping
        .iter()
        .enumerate()
        .filter_map(|(p, c)| c.map(|c| table.counts[p][c]))
        .sum()
}

fn mapped_f1(table: &Contingency, mapping: &[Option<usize>]) -> f64 {
    let mut per_class = vec![0.0; table.truth_classes()];
    for (p, c) in mapping.iter().enumerate() {
        if let Some(c) = *c {
            per_class[c] = table.pair_f1(p, c);
        }
    }
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    let mapping = optimal_mapping(&table);
    Ok(matched(&table, &mapping) as f64 / table.n as f64)
}

pub fn macro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    Ok(mapped_f1(&table, &optimal_mapping(&table)))
}

/// Normalizer for mutual information.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNorm {
    #[default]
    Geometric,
    Arithmetic,
}

impl FromStr for NmiNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "arithmetic" => Ok(Self::Arithmetic),
            other => Err(Error::Config(format!("unknown NMI normalization {other:?}"))),
        }
    }
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNorm::Geometric)
}

pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    let n = table.n as f64;
    let hp = entropy(&table.pred_sizes, n);
    let ht = entropy(&table.truth_sizes, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (p, row) in table.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count > 0 {
                let joint = count as f64 / n;
                let indep = (table.pred_sizes[p] as f64 / n) * (table.truth_sizes[c] as f64 / n);
                mi += joint * (joint / indep).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Geometric => (hp * ht).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (hp + ht),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::Contract("adjusted Rand index needs at least two samples".into()));
    }
    let table = Contingency::new(pred, truth)?;
    let index: u64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: u64 = table.pred_sizes.iter().map(|&s| pairs(s)).sum();
    let b: u64 = table.truth_sizes.iter().map(|&s| pairs(s)).sum();
    let total = pairs(table.n) as f64;
    let expected = a as f64 * b as f64 / total;
    let max = 0.5 * (a + b) as f64;
    if max == expected {
        // only reachable when both partitions are identical and trivial
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / (max - expected))
}

/// Scores of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 4] = ["ACC", "NMI", "ARI", "F1"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.acc, self.nmi, self.ari, self.f1]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            acc: v[0],
            nmi: v[1],
            ari: v[2],
            f1: v[3],
        }
    }
}

pub fn evaluate(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<MetricValues> {
    let table = Contingency::new(pred, truth)?;
    let mapping = optimal_mapping(&table);
    Ok(MetricValues {
        acc: matched(&table, &mapping) as f64 / table.n as f64,
        nmi: nmi_with(pred, truth, norm)?,
        ari: if pred.len() < 2 { 1.0 } else { ari(pred, truth)? },
        f1: mapped_f1(&table, &mapping),
    })
}

/// Per-seed scores with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricValues>,
    pub mean: MetricValues,
    pub std: MetricValues,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Percent-scaled `mean±std` with two decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

impl MetricReport {
    pub fn aggregate(seeds: Vec<u64>, per_seed: Vec<MetricValues>) -> Result<Self> {
        if per_seed.is_empty() || seeds.len() != per_seed.len() {
            return Err(Error::Contract(format!(
                "need one score set per seed, got {} for {} seeds",
                per_seed.len(),
                seeds.len()
            )));
        }
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            let column: Vec<f64> = per_seed.iter().map(|m| m.as_array()[k]).collect();
            (mean[k], std[k]) = mean_std(&column);
        }
        Ok(Self {
            seeds,
            per_seed,
            mean: MetricValues::from_array(mean),
            std: MetricValues::from_array(std),
        })
    }

    pub fn formatted(&self) -> [String; 4] {
        let (m, s) = (self.mean.as_array(), self.std.as_array());
        std::array::from_fn(|k| format_mean_std(m[k], s[k]))
    }
}

/// Aligned text table: one row per labelled report, one column per metric.
pub fn render_table(rows: &[(String, &MetricReport)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
    let cells: Vec<[String; 4]> = rows.iter().map(|(_, r)| r.formatted()).collect();
    let widths: Vec<usize> = (0..4)
        .map(|k| {
            cells
                .iter()
                .map(|c| c[k].chars().count())
                .chain([MetricValues::NAMES[k].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "run");
    for (name, &w) in MetricValues::NAMES.iter().zip(&widths) {
        let _ = write!(out, "  {name:>w$}");
    }
    out.push('\n');
    for ((label, _), row) in rows.iter().zip(&cells) {
        let _ = write!(out, "{label:<label_width$}");
        for k in 0..4 {
            let pad = widths[k] - row[k].chars().count();
            let _ = write!(out, "  {}{}", " ".repeat(pad), row[k]);
        }
        out.push('\n');
    }
    out
}
