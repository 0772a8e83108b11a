//! Weighted contrastive objective and the training loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::csada::{self, ClusterState, TauSchedule};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::graph::{normalized_operators, Graph};
use crate::hca::{
    self, AugmentedViews, Blend, EncoderParams, SimilaritySet, StructureBuffer, ViewId,
};
use crate::tensor::{DenseMatrix, Tape, Var};

const STREAM_AUGMENT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_FINAL_KMEANS: u64 = 3;
const STREAM_EPOCH_KMEANS: u64 = 1 << 32;

/// Which components of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Confidence factor held at its starting value.
    NoDynamicTau,
    /// Plain low-pass filtering, node similarity only, no structure refinement.
    NoHca,
    /// All pair weights 1 (classical InfoNCE).
    NoCsada,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoDynamicTau,
        Variant::NoHca,
        Variant::NoCsada,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDynamicTau => "no_dynamic_tau",
            Variant::NoHca => "no_hca",
            Variant::NoCsada => "no_csada",
        }
    }

    pub fn uses_hca(self) -> bool {
        self != Variant::NoHca
    }

    pub fn uses_weights(self) -> bool {
        self != Variant::NoCsada
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Cluster count.
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma_n: f64,
    pub mask_ratio: f64,
    pub t_n: usize,
    pub t_m: usize,
    pub embed_dim: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub seed: u64,
    pub variant: Variant,
    /// K-means restarts for the final clustering.
    pub final_restarts: usize,
    /// K-means restarts for the per-epoch pseudo labels.
    pub epoch_restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 2,
            epochs: 400,
            lr: 1e-3,
            beta: 0.9,
            gamma: 2.0,
            sigma_n: 0.001,
            mask_ratio: 0.005,
            t_n: 2,
            t_m: 2,
            embed_dim: 500,
            tau_start: 0.8,
            tau_end: 0.2,
            seed: 0,
            variant: Variant::Full,
            final_restarts: 10,
            epoch_restarts: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        csada::validate_exponents(self.beta, self.gamma)?;
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return fail(format!("sigma_n must be >= 0, got {}", self.sigma_n));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio must lie in [0, 1], got {}", self.mask_ratio));
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be at least 1".into());
        }
        if self.final_restarts == 0 || self.epoch_restarts == 0 {
            return fail("k-means restarts must be at least 1".into());
        }
        self.tau_schedule().map(|_| ())
    }

    pub fn tau_schedule(&self) -> Result<TauSchedule> {
        match self.variant {
            Variant::NoDynamicTau => TauSchedule::fixed(self.tau_start, self.epochs),
            _ => TauSchedule::new(self.tau_start, self.tau_end, self.epochs),
        }
    }
}

/// Per-node losses of anchor view `l` as an `N x 1` column.
///
/// `L_i = ln(Σ_{m} Σ_{j≠i} e^{W S} + e^{W S}_ii (cross view)) − (W S)_ii (cross view)`,
/// which equals `−ln(num / (num + neg))`.
pub fn per_node_losses(
    tape: &mut Tape,
    sims: &SimilaritySet<Var>,
    weights: &SimilaritySet,
    l: ViewId,
) -> Result<Var> {
    let m = l.other();
    let s_same = *sims.get(l, l);
    let s_cross = *sims.get(l, m);
    let n = tape.value(s_same).rows();

    let w_same = tape.constant(weights.get(l, l).clone());
    let w_cross = tape.constant(weights.get(l, m).clone());
    let x_same = tape.hadamard(w_same, s_same)?;
    let x_cross = tape.hadamard(w_cross, s_cross)?;

    let mut off_diagonal = DenseMatrix::filled(n, n, 1.0);
    for i in 0..n {
        off_diagonal.set(i, i, 0.0);
    }
    let off_diagonal = tape.constant(off_diagonal);
    let e_same = tape.exp(x_same)?;
    let e_same = tape.hadamard(e_same, off_diagonal)?;
    let e_cross = tape.exp(x_cross)?;

    let row_same = tape.row_sum(e_same)?;
    let row_cross = tape.row_sum(e_cross)?;
    let denominator = tape.add(row_same, row_cross)?;
    let log_denominator = tape.ln(denominator)?;
    let positive = tape.diag(x_cross)?;
    tape.sub(log_denominator, positive)
}

/// `(1 / 2N) Σ_l Σ_i L(v_i^l)`.
pub fn total_loss(tape: &mut Tape, sims: &SimilaritySet<Var>, weights: &SimilaritySet) -> Result<Var> {
    let n = tape.value(sims.aa).rows();
    let la = per_node_losses(tape, sims, weights, ViewId::A)?;
    let lb = per_node_losses(tape, sims, weights, ViewId::B)?;
    let sa = tape.sum(la)?;
    let sb = tape.sum(lb)?;
    let both = tape.add(sa, sb)?;
    tape.scale(both, 1.0 / (2.0 * n as f64))
}

/// All-ones weights for `n` nodes.
pub fn unit_weights(n: usize) -> SimilaritySet {
    let ones = DenseMatrix::filled(n, n, 1.0);
    SimilaritySet {
        aa: ones.clone(),
        ab: ones.clone(),
        ba: ones.clone(),
        bb: ones,
    }
}

/// Pair weights for all four similarity matrices from one cluster state.
pub fn weight_set(sims: &SimilaritySet, state: &ClusterState, beta: f64, gamma: f64) -> Result<SimilaritySet> {
    sims.try_map(|_, _, s| csada::modulation_weights(s, &state.q, &state.high, beta, gamma))
}

/// Tape handles of the trainable parameters.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub node_a: Var,
    pub node_b: Var,
    pub edge_a: Var,
    pub edge_b: Var,
    pub alpha_raw: Var,
}

/// One forward pass through both encoders and the similarity blend.
pub struct Forward {
    pub params: ParamVars,
    pub views: AugmentedViews<Var>,
    pub sims: SimilaritySet<Var>,
}

pub fn forward(
    tape: &mut Tape,
    params: &EncoderParams,
    x_aug: &DenseMatrix,
    buffer: &StructureBuffer,
    variant: Variant,
) -> Result<Forward> {
    let vars = ParamVars {
        node_a: tape.leaf(params.node_a.clone()),
        node_b: tape.leaf(params.node_b.clone()),
        edge_a: tape.leaf(params.edge_a.clone()),
        edge_b: tape.leaf(params.edge_b.clone()),
        alpha_raw: tape.leaf(DenseMatrix::scalar(params.alpha_raw)),
    };
    let x = tape.constant(x_aug.clone());
    let (z_a, z_b) = hca::encode_nodes(tape, x, vars.node_a, vars.node_b)?;
    let (e_a, e_b) = hca::encode_edges(tape, buffer, vars.edge_a, vars.edge_b)?;
    let views = AugmentedViews { z_a, z_b, e_a, e_b };
    let blend = if variant.uses_hca() {
        Blend::Mixed(tape.sigmoid(vars.alpha_raw)?)
    } else {
        Blend::NodeOnly
    };
    let sims = hca::similarity_set(tape, &views, blend)?;
    Ok(Forward {
        params: vars,
        views,
        sims,
    })
}

fn collect_gradients(tape: &Tape, loss: Var, params: &EncoderParams, vars: &ParamVars) -> Result<EncoderParams> {
    let grads = tape.backward(loss)?;
    Ok(EncoderParams {
        node_a: grads.get_or_zeros(vars.node_a, &params.node_a),
        node_b: grads.get_or_zeros(vars.node_b, &params.node_b),
        edge_a: grads.get_or_zeros(vars.edge_a, &params.edge_a),
        edge_b: grads.get_or_zeros(vars.edge_b, &params.edge_b),
        alpha_raw: grads.get(vars.alpha_raw).map_or(0.0, |g| g.get(0, 0)),
    })
}

/// The loss of a single epoch as a function of the parameters, with the
/// node representation, structure buffer and pair weights held fixed.
#[derive(Debug, Clone)]
pub struct EpochProblem {
    pub x_aug: DenseMatrix,
    pub buffer: StructureBuffer,
    pub weights: SimilaritySet,
    pub variant: Variant,
}

impl EpochProblem {
    pub fn loss(&self, params: &EncoderParams) -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, params, &self.x_aug, &self.buffer, self.variant)?;
        let loss = total_loss(&mut tape, &fwd.sims, &self.weights)?;
        tape.value(loss).as_scalar()
    }

    pub fn loss_and_grad(&self, params: &EncoderParams) -> Result<(f64, EncoderParams)> {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, params, &self.x_aug, &self.buffer, self.variant)?;
        let loss = total_loss(&mut tape, &fwd.sims, &self.weights)?;
        let value = tape.value(loss).as_scalar()?;
        Ok((value, collect_gradients(&tape, loss, params, &fwd.params)?))
    }
}

/// Adam with the usual moment decay rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Updates every parameter slice in place from the matching gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract("one gradient per parameter required".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { op: "optimizer step" });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step);
        let bias2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[k].len() {
                return Err(Error::Contract(format!("parameter {k} changed size")));
            }
            for i in 0..p.len() {
                let m = &mut self.first[k][i];
                let v = &mut self.second[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (*m / bias1) / ((*v / bias2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub params: EncoderParams,
    pub buffer: StructureBuffer,
    pub optimizer: Adam,
    pub epoch: usize,
}

impl ModelState {
    fn apply(&mut self, grads: &EncoderParams) -> Result<()> {
        let mut alpha = [self.params.alpha_raw];
        let p = &mut self.params;
        self.optimizer.step(
            &mut [
                p.node_a.data_mut(),
                p.node_b.data_mut(),
                p.edge_a.data_mut(),
                p.edge_b.data_mut(),
                &mut alpha,
            ],
            &[
                grads.node_a.data(),
                grads.node_b.data(),
                grads.edge_a.data(),
                grads.edge_b.data(),
                &[grads.alpha_raw],
            ],
        )?;
        self.params.alpha_raw = alpha[0];
        Ok(())
    }
}

/// Values observed during one epoch, before the optimizer step.
#[derive(Debug)]
pub struct EpochSnapshot<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub tau: f64,
    /// Node/edge balance used for this epoch's similarities.
    pub alpha: f64,
    pub views: &'a AugmentedViews,
    pub sims: &'a SimilaritySet,
    /// Structure buffer after this epoch's refinement.
    pub buffer: &'a StructureBuffer,
    pub clusters: &'a ClusterState,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: ModelState,
    /// Fused node embedding `(Z^a + Z^b) / 2` after training.
    pub embedding: DenseMatrix,
    pub labels: Vec<usize>,
    pub loss_history: Vec<f64>,
    /// Fingerprint of the perturbed, smoothed attributes.
    pub x_aug_digest: u64,
}

pub fn train(graph: &Graph, cfg: &RunConfig) -> Result<TrainOutput> {
    train_with_observer(graph, cfg, |_| {})
}

pub fn train_with_observer(
    graph: &Graph,
    cfg: &RunConfig,
    mut observe: impl FnMut(&EpochSnapshot<'_>),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = graph.node_count();
    if cfg.k > n {
        return Err(Error::Config(format!("k = {} exceeds the {n} nodes", cfg.k)));
    }
    let schedule = cfg.tau_schedule()?;
    let (_, l_tilde) = normalized_operators(graph);
    let (sigma_n, mask_ratio) = if cfg.variant.uses_hca() {
        (cfg.sigma_n, cfg.mask_ratio)
    } else {
        (0.0, 0.0)
    };
    let smoothed = hca::build_x_aug(
        graph.features(),
        &l_tilde,
        sigma_n,
        mask_ratio,
        cfg.t_n,
        cfg.t_m,
        derive_seed(cfg.seed, STREAM_AUGMENT),
    )?;
    let x_aug = &smoothed.x_aug;

    let mut state = ModelState {
        params: EncoderParams::init(
            graph.feature_dim(),
            n,
            cfg.embed_dim,
            derive_seed(cfg.seed, STREAM_INIT),
        ),
        buffer: StructureBuffer::from_adjacency(graph.adjacency())?,
        optimizer: Adam::new(cfg.lr),
        epoch: 0,
    };
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let fwd = forward(&mut tape, &state.params, x_aug, &state.buffer, cfg.variant)?;
        let views = fwd.views.values(&tape);
        if cfg.variant.uses_hca() {
            state.buffer = hca::refine_structure(&views, &state.buffer)?;
        }
        let sims = fwd.sims.values(&tape);

        let tau = schedule.at(epoch);
        let fused = csada::fuse_embeddings(&views.z_a, &views.z_b)?;
        let clusters = ClusterState::compute(
            &fused,
            cfg.k,
            tau,
            derive_seed(cfg.seed, STREAM_EPOCH_KMEANS + epoch as u64),
            cfg.epoch_restarts,
        )?;
        let weights = if cfg.variant.uses_weights() {
            weight_set(&sims, &clusters, cfg.beta, cfg.gamma)?
        } else {
            unit_weights(n)
        };

        let loss = total_loss(&mut tape, &fwd.sims, &weights).map_err(|e| Error::NonFiniteLoss {
            epoch,
            detail: e.to_string(),
        })?;
        let value = tape.value(loss).as_scalar()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("loss evaluated to {value}"),
            });
        }
        history.push(value);
        observe(&EpochSnapshot {
            epoch,
            loss: value,
            tau,
            alpha: state.params.alpha(),
            views: &views,
            sims: &sims,
            buffer: &state.buffer,
            clusters: &clusters,
        });

        let grads = collect_gradients(&tape, loss, &state.params, &fwd.params)?;
        state.apply(&grads).map_err(|e| Error::NonFiniteLoss {
            epoch,
            detail: e.to_string(),
        })?;
        state.epoch = epoch + 1;
    }

    let mut tape = Tape::new();
    let fwd = forward(&mut tape, &state.params, x_aug, &state.buffer, cfg.variant)?;
    let views = fwd.views.values(&tape);
    let embedding = csada::fuse_embeddings(&views.z_a, &views.z_b)?;
    let final_clusters = csada::kmeans_restarts(
        &embedding,
        cfg.k,
        derive_seed(cfg.seed, STREAM_FINAL_KMEANS),
        cfg.final_restarts,
    )?;

    Ok(TrainOutput {
        state,
        embedding,
        labels: final_clusters.labels,
        loss_history: history,
        x_aug_digest: smoothed.digest(),
    })
}
