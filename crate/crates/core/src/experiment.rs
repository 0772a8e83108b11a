//! Multi-seed experiment drivers behind the command-line tool.
//!
//! Every driver writes the same artifact set into its output directory:
//! `metrics.json`, `metrics.txt`, `loss_history.csv`, `embeddings.csv` and
//! `config_snapshot.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, save_dataset, Graph, SbmParams};
use crate::metrics::{self, render_table, MetricReport, MetricValues, NmiNorm};
use crate::objective::{train, RunConfig, TrainOutput, Variant};
use crate::tensor::DenseMatrix;

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const LOSS_CSV: &str = "loss_history.csv";
pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const CONFIG_SNAPSHOT: &str = "config_snapshot.txt";
pub const THREADS_ENV: &str = "RAGC_THREADS";

const STREAM_EVAL_NOISE: u64 = 4;

/// One seed's training run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub output: TrainOutput,
    pub metrics: Option<MetricValues>,
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap).min(jobs.max(1))
}

/// Trains once per seed, in parallel worker slots; results are in seed order.
pub fn run_seeds(
    graph: &Graph,
    run: &RunConfig,
    seeds: &[u64],
    workers: usize,
    norm: NmiNorm,
) -> Result<Vec<SeedRun>> {
    let one = |seed: u64| -> Result<SeedRun> {
        let cfg = RunConfig { seed, ..run.clone() };
        let output = train(graph, &cfg)?;
        let metrics = graph
            .labels()
            .map(|truth| metrics::evaluate(&output.labels, truth, norm))
            .transpose()?;
        Ok(SeedRun {
            seed,
            output,
            metrics,
        })
    };

    let workers = worker_count(workers, seeds.len());
    if workers <= 1 {
        return seeds.iter().map(|&s| one(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let result = one(seeds[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// One line of a report: a labelled multi-seed result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub variant: Variant,
    /// Evaluation-time attribute noise, for sweeps.
    pub sigma: Option<f64>,
    #[serde(flatten)]
    pub report: MetricReport,
    /// `mean±std` in percent, keyed by metric name.
    pub formatted: BTreeMap<String, String>,
    /// Best-over-seeds score relative to the full model's best.
    pub ratio_to_full: Option<MetricValues>,
    /// Percent change of the mean relative to the noise-free baseline.
    pub degradation_pct: Option<MetricValues>,
    /// Fingerprints of the perturbed attributes, one per seed.
    pub x_aug_digests: Vec<String>,
}

impl ReportRow {
    pub fn from_report(label: String, variant: Variant, sigma: Option<f64>, report: MetricReport) -> Self {
        let formatted = MetricValues::NAMES
            .iter()
            .zip(report.formatted())
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            label,
            variant,
            sigma,
            report,
            formatted,
            ratio_to_full: None,
            degradation_pct: None,
            x_aug_digests: Vec::new(),
        }
    }

    fn new(label: String, variant: Variant, sigma: Option<f64>, runs: &[SeedRun]) -> Result<Self> {
        let per_seed = runs
            .iter()
            .map(|r| {
                r.metrics
                    .ok_or_else(|| Error::Config("dataset has no labels to score against".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = MetricReport::aggregate(runs.iter().map(|r| r.seed).collect(), per_seed)?;
        let mut row = Self::from_report(label, variant, sigma, report);
        row.x_aug_digests = runs
            .iter()
            .map(|r| format!("{:016x}", r.output.x_aug_digest))
            .collect();
        Ok(row)
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub seeds: Vec<u64>,
    pub nmi_norm: NmiNorm,
    pub wall_seconds: f64,
    pub rows: Vec<ReportRow>,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config_snapshot: String,
    pub report: ExperimentReport,
    pub loss_histories: Vec<(String, u64, Vec<f64>)>,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn embeddings_csv(z: &DenseMatrix) -> String {
    let mut out = String::with_capacity(z.len() * 20);
    for row in z.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn loss_csv(histories: &[(String, u64, Vec<f64>)]) -> String {
    let mut out = String::from("run,seed,epoch,loss\n");
    for (label, seed, history) in histories {
        for (epoch, loss) in history.iter().enumerate() {
            let _ = writeln!(out, "{label},{seed},{epoch},{loss}");
        }
    }
    out
}

fn fmt_values(v: &MetricValues, suffix: &str) -> [String; 4] {
    v.as_array().map(|x| {
        if x.is_finite() {
            format!("{x:.4}{suffix}")
        } else {
            "n/a".into()
        }
    })
}

fn extra_columns(title: &str, rows: &[(String, [String; 4])]) -> String {
    let mut out = format!("\n{title}\n");
    let label_width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
    let width = rows
        .iter()
        .flat_map(|(_, c)| c.iter().map(|s| s.chars().count()))
        .max()
        .unwrap_or(0)
        .max(3);
    let _ = write!(out, "{:<label_width$}", "run");
    for name in MetricValues::NAMES {
        let _ = write!(out, "  {name:>width$}");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_width$}");
        for c in cells {
            let _ = write!(out, "  {c:>width$}");
        }
        out.push('\n');
    }
    out
}

struct Artifacts<'a> {
    out_dir: &'a Path,
    config: &'a ExperimentConfig,
    report: ExperimentReport,
    table: String,
    histories: Vec<(String, u64, Vec<f64>)>,
    embedding: &'a DenseMatrix,
}

fn write_artifacts(a: Artifacts<'_>) -> Result<ExperimentResult> {
    fs::create_dir_all(a.out_dir).map_err(|e| Error::io(a.out_dir, e))?;
    let snapshot = a.config.to_text();
    let files = [METRICS_JSON, METRICS_TXT, LOSS_CSV, EMBEDDINGS_CSV, CONFIG_SNAPSHOT]
        .map(|f| a.out_dir.join(f));
    write_file(&files[0], &(serde_json::to_string_pretty(&a.report)? + "\n"))?;
    write_file(&files[1], &a.table)?;
    write_file(&files[2], &loss_csv(&a.histories))?;
    write_file(&files[3], &embeddings_csv(a.embedding))?;
    write_file(&files[4], &snapshot)?;
    Ok(ExperimentResult {
        config_snapshot: snapshot,
        report: a.report,
        loss_histories: a.histories,
        files: files.to_vec(),
    })
}

fn histories(label: &str, runs: &[SeedRun]) -> Vec<(String, u64, Vec<f64>)> {
    runs.iter()
        .map(|r| (label.to_string(), r.seed, r.output.loss_history.clone()))
        .collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    Ok(())
}

/// Trains once per seed and reports the aggregated scores. The embedding
/// export holds the first seed's fused embedding.
pub fn cmd_train(cfg: &ExperimentConfig, graph: &Graph, out_dir: &Path, seeds: &[u64]) -> Result<ExperimentResult> {
    check_seeds(seeds)?;
    let run = cfg.resolve(graph.class_count())?;
    let start = Instant::now();
    let runs = run_seeds(graph, &run, seeds, cfg.workers, cfg.nmi_norm)?;
    let label = run.variant.to_string();
    let rows = if graph.labels().is_some() {
        vec![ReportRow::new(label.clone(), run.variant, None, &runs)?]
    } else {
        Vec::new()
    };
    let table = match rows.first() {
        Some(row) => render_table(&[(row.label.clone(), &row.report)]),
        None => "no ground-truth labels; metrics not computed\n".into(),
    };
    let report = ExperimentReport {
        command: "train".into(),
        seeds: seeds.to_vec(),
        nmi_norm: cfg.nmi_norm,
        wall_seconds: start.elapsed().as_secs_f64(),
        rows,
    };
    write_artifacts(Artifacts {
        out_dir,
        config: cfg,
        report,
        table,
        histories: histories(&label, &runs),
        embedding: &runs[0].output.embedding,
    })
}

/// Best-over-seeds ratio of `variant` to `full`, per metric.
pub fn best_ratio(variant: &MetricReport, full: &MetricReport) -> MetricValues {
    let best = |r: &MetricReport| {
        let mut b = [f64::NEG_INFINITY; 4];
        for v in &r.per_seed {
            for (slot, x) in b.iter_mut().zip(v.as_array()) {
                *slot = slot.max(x);
            }
        }
        b
    };
    let (v, f) = (best(variant), best(full));
    MetricValues::from_array(std::array::from_fn(|k| v[k] / f[k]))
}

/// Runs the full model and its three ablations with shared seeds.
pub fn cmd_ablate(cfg: &ExperimentConfig, graph: &Graph, out_dir: &Path, seeds: &[u64]) -> Result<ExperimentResult> {
    check_seeds(seeds)?;
    if graph.labels().is_none() {
        return Err(Error::Config("ablation needs ground-truth labels".into()));
    }
    let base = cfg.resolve(graph.class_count())?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut all_histories = Vec::new();
    let mut full_embedding = None;
    for variant in Variant::ALL {
        let run = RunConfig { variant, ..base.clone() };
        run.validate()?;
        let runs = run_seeds(graph, &run, seeds, cfg.workers, cfg.nmi_norm)?;
        all_histories.extend(histories(variant.name(), &runs));
        if variant == Variant::Full {
            full_embedding = Some(runs[0].output.embedding.clone());
        }
        rows.push(ReportRow::new(variant.to_string(), variant, None, &runs)?);
    }
    let full = rows[0].report.clone();
    for row in &mut rows {
        row.ratio_to_full = Some(best_ratio(&row.report, &full));
    }

    let mut table = render_table(&rows.iter().map(|r| (r.label.clone(), &r.report)).collect::<Vec<_>>());
    let ratios: Vec<(String, [String; 4])> = rows
        .iter()
        .map(|r| (r.label.clone(), fmt_values(r.ratio_to_full.as_ref().expect("set above"), "")))
        .collect();
    table.push_str(&extra_columns("best-over-seeds ratio to full", &ratios));

    let report = ExperimentReport {
        command: "ablate".into(),
        seeds: seeds.to_vec(),
        nmi_norm: cfg.nmi_norm,
        wall_seconds: start.elapsed().as_secs_f64(),
        rows,
    };
    write_artifacts(Artifacts {
        out_dir,
        config: cfg,
        report,
        table,
        histories: all_histories,
        embedding: full_embedding.as_ref().expect("full variant runs first"),
    })
}

/// `100 (value − baseline) / baseline` per metric; negative when worse.
/// Zero when the values agree; undefined (NaN) for a zero baseline otherwise.
pub fn degradation(baseline: &MetricValues, value: &MetricValues) -> MetricValues {
    let (b, v) = (baseline.as_array(), value.as_array());
    MetricValues::from_array(std::array::from_fn(|k| {
        if v[k] == b[k] {
            0.0
        } else if b[k] == 0.0 {
            f64::NAN
        } else {
            100.0 * (v[k] - b[k]) / b[k]
        }
    }))
}

/// Sweep rows: the noise-free baseline first, then one row per positive
/// sigma, each carrying its degradation against the baseline mean.
pub fn degradation_table(baseline: ReportRow, noisy: Vec<ReportRow>) -> Vec<ReportRow> {
    let reference = baseline.report.mean;
    let mut rows = Vec::with_capacity(noisy.len() + 1);
    let mut base = baseline;
    base.degradation_pct = Some(degradation(&reference, &reference));
    rows.push(base);
    for mut row in noisy {
        row.degradation_pct = Some(degradation(&reference, &row.report.mean));
        rows.push(row);
    }
    rows
}

/// Adds `N(0, sigma)` to every attribute.
pub fn add_feature_noise(x: &DenseMatrix, sigma: f64, seed: u64) -> Result<DenseMatrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = x.clone();
    for v in noisy.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(noisy)
}

/// Robustness to evaluation-time attribute noise.
pub fn cmd_noise_sweep(
    cfg: &ExperimentConfig,
    graph: &Graph,
    out_dir: &Path,
    seeds: &[u64],
    sigmas: &[f64],
) -> Result<ExperimentResult> {
    check_seeds(seeds)?;
    if graph.labels().is_none() {
        return Err(Error::Config("noise sweep needs ground-truth labels".into()));
    }
    let run = cfg.resolve(graph.class_count())?;
    let start = Instant::now();
    let label = |s: f64| format!("sigma={s}");

    let baseline_runs = run_seeds(graph, &run, seeds, cfg.workers, cfg.nmi_norm)?;
    let mut all_histories = histories(&label(0.0), &baseline_runs);
    let baseline = ReportRow::new(label(0.0), run.variant, Some(0.0), &baseline_runs)?;

    let mut noisy = Vec::new();
    for &sigma in sigmas {
        if sigma == 0.0 {
            continue;
        }
        let x = add_feature_noise(graph.features(), sigma, derive_seed(run.seed, STREAM_EVAL_NOISE))?;
        let noisy_graph = graph.with_features(x)?;
        let runs = run_seeds(&noisy_graph, &run, seeds, cfg.workers, cfg.nmi_norm)?;
        all_histories.extend(histories(&label(sigma), &runs));
        noisy.push(ReportRow::new(label(sigma), run.variant, Some(sigma), &runs)?);
    }
    let rows = degradation_table(baseline, noisy);

    let mut table = render_table(&rows.iter().map(|r| (r.label.clone(), &r.report)).collect::<Vec<_>>());
    let deltas: Vec<(String, [String; 4])> = rows
        .iter()
        .map(|r| {
            let d = r.degradation_pct.as_ref().expect("set by degradation_table");
            let cells = d.as_array().map(|x| {
                if x.is_finite() {
                    format!("{x:+.2}%")
                } else {
                    "n/a".into()
                }
            });
            (r.label.clone(), cells)
        })
        .collect();
    table.push_str(&extra_columns("change vs noise-free baseline", &deltas));

    let report = ExperimentReport {
        command: "noise-sweep".into(),
        seeds: seeds.to_vec(),
        nmi_norm: cfg.nmi_norm,
        wall_seconds: start.elapsed().as_secs_f64(),
        rows,
    };
    write_artifacts(Artifacts {
        out_dir,
        config: cfg,
        report,
        table,
        histories: all_histories,
        embedding: &baseline_runs[0].output.embedding,
    })
}

/// Writes a synthetic dataset in the loader's format.
pub fn cmd_gen_sbm(params: &SbmParams, out_dir: &Path) -> Result<Graph> {
    let graph = generate_sbm(params)?;
    save_dataset(&graph, out_dir)?;
    Ok(graph)
}

/// Parses `3`, `0,2,5` or `0..9` (inclusive).
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list {spec:?}"));
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let seeds: Vec<u64> = spec
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("0..=2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1, 4,9").unwrap(), vec![1, 4, 9]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn degradation_values() {
        let base = MetricValues::from_array([0.8, 0.5, 0.4, 0.0]);
        let worse = MetricValues::from_array([0.6, 0.5, 0.5, 0.1]);
        let d = degradation(&base, &worse);
        assert!((d.acc + 25.0).abs() < 1e-12);
        assert_eq!(d.nmi, 0.0);
        assert!((d.ari - 25.0).abs() < 1e-12);
        assert!(d.f1.is_nan());
        assert_eq!(degradation(&base, &base).as_array(), [0.0; 4]);
    }

    #[test]
    fn best_ratio_uses_best_seed() {
        let v = |a| MetricValues::from_array([a; 4]);
        let full = MetricReport::aggregate(vec![0, 1], vec![v(0.8), v(0.6)]).unwrap();
        let abl = MetricReport::aggregate(vec![0, 1], vec![v(0.4), v(0.7)]).unwrap();
        assert!((best_ratio(&abl, &full).acc - 0.875).abs() < 1e-15);
        assert_eq!(best_ratio(&full, &full).acc, 1.0);
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = DenseMatrix::filled(2, 3, 1.25);
        assert_eq!(add_feature_noise(&x, 0.0, 9).unwrap(), x);
        assert_ne!(add_feature_noise(&x, 0.1, 9).unwrap(), x);
        assert!(add_feature_noise(&x, -1.0, 9).is_err());
    }
}
