//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every training hyperparameter
//! has a key; later assignments (including command-line overrides) win.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SbmParams;
use crate::metrics::NmiNorm;
use crate::objective::{RunConfig, Variant};

/// Settings for one experiment command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    /// Cluster count; taken from the dataset labels when unset.
    pub k: Option<usize>,
    pub nmi_norm: NmiNorm,
    /// Concurrent seed runs, further capped by `RAGC_THREADS`.
    pub workers: usize,
    /// Noise levels for the robustness sweep.
    pub noise_sigmas: Vec<f64>,
    pub sbm: SbmParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            k: None,
            nmi_norm: NmiNorm::Geometric,
            workers: 1,
            noise_sigmas: vec![0.1, 0.2, 0.3],
            sbm: SbmParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 27] = [
        "k",
        "epochs",
        "lr",
        "beta",
        "gamma",
        "sigma_n",
        "mask_ratio",
        "t_n",
        "t_m",
        "embed_dim",
        "tau_start",
        "tau_end",
        "seed",
        "variant",
        "final_restarts",
        "epoch_restarts",
        "nmi_norm",
        "workers",
        "noise_sigmas",
        "sbm_blocks",
        "sbm_per_block",
        "sbm_p_in",
        "sbm_p_out",
        "sbm_feature_dim",
        "sbm_feature_shift",
        "sbm_seed",
        "dataset",
    ];

    /// Sets one key. The error is a bare message for the caller to locate.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let r = &mut self.run;
        match key {
            "k" => self.k = Some(parse(key, value)?),
            "epochs" => r.epochs = parse(key, value)?,
            "lr" => r.lr = parse(key, value)?,
            "beta" => r.beta = parse(key, value)?,
            "gamma" => r.gamma = parse(key, value)?,
            "sigma_n" => r.sigma_n = parse(key, value)?,
            "mask_ratio" => r.mask_ratio = parse(key, value)?,
            "t_n" => r.t_n = parse(key, value)?,
            "t_m" => r.t_m = parse(key, value)?,
            "embed_dim" => r.embed_dim = parse(key, value)?,
            "tau_start" => r.tau_start = parse(key, value)?,
            "tau_end" => r.tau_end = parse(key, value)?,
            "seed" => r.seed = parse(key, value)?,
            "variant" => r.variant = value.parse::<Variant>().map_err(|e| e.to_string())?,
            "final_restarts" => r.final_restarts = parse(key, value)?,
            "epoch_restarts" => r.epoch_restarts = parse(key, value)?,
            "nmi_norm" => self.nmi_norm = value.parse::<NmiNorm>().map_err(|e| e.to_string())?,
            "workers" => self.workers = parse(key, value)?,
            "noise_sigmas" => self.noise_sigmas = parse_list(key, value)?,
            "sbm_blocks" => self.sbm.blocks = parse(key, value)?,
            "sbm_per_block" => self.sbm.per_block = parse(key, value)?,
            "sbm_p_in" => self.sbm.p_in = parse(key, value)?,
            "sbm_p_out" => self.sbm.p_out = parse(key, value)?,
            "sbm_feature_dim" => self.sbm.feature_dim = parse(key, value)?,
            "sbm_feature_shift" => self.sbm.feature_shift = parse(key, value)?,
            "sbm_seed" => self.sbm.seed = parse(key, value)?,
            // informational only
            "dataset" => {}
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_str(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                detail: format!("expected key = value, found {content:?}"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|detail| Error::ConfigParse { line, detail })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::ConfigParse { line, detail } => Error::ConfigParse {
                line,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        })
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
            .map_err(|detail| Error::Config(format!("override {assignment:?}: {detail}")))
    }

    /// Run settings with the cluster count resolved.
    pub fn resolve(&self, classes_in_data: usize) -> Result<RunConfig> {
        let k = match self.k {
            Some(k) => k,
            None if classes_in_data > 0 => classes_in_data,
            None => {
                return Err(Error::Config(
                    "k is not set and the dataset has no labels to infer it from".into(),
                ))
            }
        };
        let run = RunConfig { k, ..self.run.clone() };
        run.validate()?;
        Ok(run)
    }

    /// Text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        let r = &self.run;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(k) = self.k {
            put("k", k.to_string());
        }
        put("epochs", r.epochs.to_string());
        put("lr", r.lr.to_string());
        put("beta", r.beta.to_string());
        put("gamma", r.gamma.to_string());
        put("sigma_n", r.sigma_n.to_string());
        put("mask_ratio", r.mask_ratio.to_string());
        put("t_n", r.t_n.to_string());
        put("t_m", r.t_m.to_string());
        put("embed_dim", r.embed_dim.to_string());
        put("tau_start", r.tau_start.to_string());
        put("tau_end", r.tau_end.to_string());
        put("seed", r.seed.to_string());
        put("variant", r.variant.to_string());
        put("final_restarts", r.final_restarts.to_string());
        put("epoch_restarts", r.epoch_restarts.to_string());
        put(
            "nmi_norm",
            match self.nmi_norm {
                NmiNorm::Geometric => "geometric".into(),
                NmiNorm::Arithmetic => "arithmetic".into(),
            },
        );
        put("workers", self.workers.to_string());
        put(
            "noise_sigmas",
            self.noise_sigmas
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        let s = &self.sbm;
        put("sbm_blocks", s.blocks.to_string());
        put("sbm_per_block", s.per_block.to_string());
        put("sbm_p_in", s.p_in.to_string());
        put("sbm_p_out", s.p_out.to_string());
        put("sbm_feature_dim", s.feature_dim.to_string());
        put("sbm_feature_shift", s.feature_shift.to_string());
        put("sbm_seed", s.seed.to_string());
        out
    }
}
