//! Hybrid node/edge augmentation.
//!
//! Node-level views come from perturbed, low-pass filtered attributes pushed
//! through two unshared linear encoders. Edge-level views encode the refined
//! structure buffer with a second pair of encoders. Both are row-normalized
//! and blended into cross-view similarity matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{logistic, DenseMatrix, Tape, Var};

/// One of the two augmented views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewId {
    A,
    B,
}

impl ViewId {
    pub const BOTH: [ViewId; 2] = [ViewId::A, ViewId::B];

    pub fn other(self) -> ViewId {
        match self {
            ViewId::A => ViewId::B,
            ViewId::B => ViewId::A,
        }
    }
}

/// Gaussian-noised and randomly masked copies of the attributes.
pub fn perturb_attributes(
    x: &DenseMatrix,
    sigma_n: f64,
    mask_ratio: f64,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(Error::Config(format!("sigma_n must be >= 0, got {sigma_n}")));
    }
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!(
            "mask ratio must lie in [0, 1], got {mask_ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = x.clone();
    if sigma_n > 0.0 {
        let normal = Normal::new(0.0, sigma_n).expect("sigma validated above");
        for v in noisy.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let mut masked = x.clone();
    for v in masked.data_mut() {
        // one draw per entry keeps the stream layout independent of r
        if rng.random::<f64>() < mask_ratio {
            *v = 0.0;
        }
    }
    Ok((noisy, masked))
}

/// Applies the low-pass filter `I − L̃` to `x` `order` times.
pub fn laplacian_smooth(x: &DenseMatrix, l_tilde: &DenseMatrix, order: usize) -> Result<DenseMatrix> {
    if order == 0 {
        return Ok(x.clone());
    }
    let filter = DenseMatrix::identity(l_tilde.rows()).sub(l_tilde)?;
    let mut out = x.clone();
    for _ in 0..order {
        out = filter.matmul(&out)?;
    }
    Ok(out)
}

/// Node-level representation fed to the node encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedFeatures {
    pub x_aug: DenseMatrix,
}

impl SmoothedFeatures {
    /// Stable fingerprint of the values, used to compare perturbation draws
    /// across runs.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the bit patterns
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.x_aug.data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Perturb, filter each branch, then average the two branches.
pub fn build_x_aug(
    x: &DenseMatrix,
    l_tilde: &DenseMatrix,
    sigma_n: f64,
    mask_ratio: f64,
    t_n: usize,
    t_m: usize,
    seed: u64,
) -> Result<SmoothedFeatures> {
    let (x_n, x_m) = perturb_attributes(x, sigma_n, mask_ratio, seed)?;
    let x_n = laplacian_smooth(&x_n, l_tilde, t_n)?;
    let x_m = laplacian_smooth(&x_m, l_tilde, t_m)?;
    Ok(SmoothedFeatures {
        x_aug: x_n.mean_of_two(&x_m)?,
    })
}

/// Trainable parameters of the four encoders and the balance scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `D x d`
    pub node_a: DenseMatrix,
    /// `D x d`
    pub node_b: DenseMatrix,
    /// `N x d`
    pub edge_a: DenseMatrix,
    /// `N x d`
    pub edge_b: DenseMatrix,
    /// Unconstrained; the balance weight is `logistic(alpha_raw)`.
    pub alpha_raw: f64,
}

impl EncoderParams {
    /// Uniform `±1/√fan_in` weights and `alpha = 0.5`.
    pub fn init(feature_dim: usize, nodes: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows.max(1) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            DenseMatrix::from_vec(rows, cols, data).expect("length matches shape")
        };
        let node_a = uniform(feature_dim, embed_dim);
        let node_b = uniform(feature_dim, embed_dim);
        let edge_a = uniform(nodes, embed_dim);
        let edge_b = uniform(nodes, embed_dim);
        Self {
            node_a,
            node_b,
            edge_a,
            edge_b,
            alpha_raw: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        logistic(self.alpha_raw)
    }

    pub fn embed_dim(&self) -> usize {
        self.node_a.cols()
    }
}

/// Dynamic semantic correlation matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureBuffer(DenseMatrix);

impl StructureBuffer {
    /// The buffer starts as the raw adjacency.
    pub fn from_adjacency(a: &DenseMatrix) -> Result<Self> {
        Self::new(a.clone())
    }

    pub fn new(m: DenseMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Contract(format!(
                "structure buffer must be square, got {:?}",
                m.shape()
            )));
        }
        if m.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("structure buffer entries must lie in [0, 1]".into()));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }
}

/// Row-normalized embeddings of both views; generic over tape handles
/// and plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedViews<T = DenseMatrix> {
    pub z_a: T,
    pub z_b: T,
    pub e_a: T,
    pub e_b: T,
}

impl<T> AugmentedViews<T> {
    pub fn node(&self, v: ViewId) -> &T {
        match v {
            ViewId::A => &self.z_a,
            ViewId::B => &self.z_b,
        }
    }

    pub fn edge(&self, v: ViewId) -> &T {
        match v {
            ViewId::A => &self.e_a,
            ViewId::B => &self.e_b,
        }
    }
}

impl AugmentedViews<Var> {
    /// Snapshot of the current values.
    pub fn values(&self, tape: &Tape) -> AugmentedViews {
        AugmentedViews {
            z_a: tape.value(self.z_a).clone(),
            z_b: tape.value(self.z_b).clone(),
            e_a: tape.value(self.e_a).clone(),
            e_b: tape.value(self.e_b).clone(),
        }
    }
}

/// `z_v = rownorm(x_aug · W_v)` for both views.
pub fn encode_nodes(tape: &mut Tape, x_aug: Var, w_a: Var, w_b: Var) -> Result<(Var, Var)> {
    let pa = tape.matmul(x_aug, w_a)?;
    let pb = tape.matmul(x_aug, w_b)?;
    Ok((tape.row_l2_normalize(pa)?, tape.row_l2_normalize(pb)?))
}

/// `e_v = rownorm((A_aug + I) · U_v)`; the buffer enters as a constant.
pub fn encode_edges(
    tape: &mut Tape,
    buffer: &StructureBuffer,
    u_a: Var,
    u_b: Var,
) -> Result<(Var, Var)> {
    let input = tape.constant(buffer.matrix().plus_identity()?);
    let pa = tape.matmul(input, u_a)?;
    let pb = tape.matmul(input, u_b)?;
    Ok((tape.row_l2_normalize(pa)?, tape.row_l2_normalize(pb)?))
}

/// How node and edge Gram matrices are blended.
#[derive(Debug, Clone, Copy)]
pub enum Blend {
    /// `alpha · node + (1 − alpha) · edge`, `alpha` a 1x1 tape value.
    Mixed(Var),
    /// Node-level similarity only (balance pinned at 1).
    NodeOnly,
}

/// `S^{l,m} = α Z^l (Z^m)ᵀ + (1 − α) E^l (E^m)ᵀ` on the tape.
pub fn contrastive_similarity(
    tape: &mut Tape,
    views: &AugmentedViews<Var>,
    blend: Blend,
    l: ViewId,
    m: ViewId,
) -> Result<Var> {
    let node = tape.matmul_nt(*views.node(l), *views.node(m))?;
    match blend {
        Blend::NodeOnly => Ok(node),
        Blend::Mixed(alpha) => {
            let edge = tape.matmul_nt(*views.edge(l), *views.edge(m))?;
            mix(tape, alpha, node, edge)
        }
    }
}

fn mix(tape: &mut Tape, alpha: Var, node: Var, edge: Var) -> Result<Var> {
    let weighted_node = tape.scalar_mul(alpha, node)?;
    let neg_alpha = tape.neg(alpha)?;
    let one_minus = tape.add_scalar(neg_alpha, 1.0)?;
    let weighted_edge = tape.scalar_mul(one_minus, edge)?;
    tape.add(weighted_node, weighted_edge)
}

/// The four similarity matrices, indexed by (anchor view, contrast view).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySet<T = DenseMatrix> {
    pub aa: T,
    pub ab: T,
    pub ba: T,
    pub bb: T,
}

impl<T> SimilaritySet<T> {
    pub fn get(&self, l: ViewId, m: ViewId) -> &T {
        match (l, m) {
            (ViewId::A, ViewId::A) => &self.aa,
            (ViewId::A, ViewId::B) => &self.ab,
            (ViewId::B, ViewId::A) => &self.ba,
            (ViewId::B, ViewId::B) => &self.bb,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ViewId, ViewId, &T)> {
        [
            (ViewId::A, ViewId::A, &self.aa),
            (ViewId::A, ViewId::B, &self.ab),
            (ViewId::B, ViewId::A, &self.ba),
            (ViewId::B, ViewId::B, &self.bb),
        ]
        .into_iter()
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(ViewId, ViewId, &T) -> Result<U>) -> Result<SimilaritySet<U>> {
        Ok(SimilaritySet {
            aa: f(ViewId::A, ViewId::A, &self.aa)?,
            ab: f(ViewId::A, ViewId::B, &self.ab)?,
            ba: f(ViewId::B, ViewId::A, &self.ba)?,
            bb: f(ViewId::B, ViewId::B, &self.bb)?,
        })
    }
}

impl SimilaritySet<Var> {
    pub fn values(&self, tape: &Tape) -> SimilaritySet {
        SimilaritySet {
            aa: tape.value(self.aa).clone(),
            ab: tape.value(self.ab).clone(),
            ba: tape.value(self.ba).clone(),
            bb: tape.value(self.bb).clone(),
        }
    }
}

/// All four similarity matrices, sharing Gram products between
/// `(a, b)` and `(b, a)` through a transpose.
pub fn similarity_set(tape: &mut Tape, views: &AugmentedViews<Var>, blend: Blend) -> Result<SimilaritySet<Var>> {
    let node_aa = tape.matmul_nt(views.z_a, views.z_a)?;
    let node_ab = tape.matmul_nt(views.z_a, views.z_b)?;
    let node_ba = tape.transpose(node_ab)?;
    let node_bb = tape.matmul_nt(views.z_b, views.z_b)?;
    match blend {
        Blend::NodeOnly => Ok(SimilaritySet {
            aa: node_aa,
            ab: node_ab,
            ba: node_ba,
            bb: node_bb,
        }),
        Blend::Mixed(alpha) => {
            let edge_aa = tape.matmul_nt(views.e_a, views.e_a)?;
            let edge_ab = tape.matmul_nt(views.e_a, views.e_b)?;
            let edge_ba = tape.transpose(edge_ab)?;
            let edge_bb = tape.matmul_nt(views.e_b, views.e_b)?;
            Ok(SimilaritySet {
                aa: mix(tape, alpha, node_aa, edge_aa)?,
                ab: mix(tape, alpha, node_ab, edge_ab)?,
                ba: mix(tape, alpha, node_ba, edge_ba)?,
                bb: mix(tape, alpha, node_bb, edge_bb)?,
            })
        }
    }
}

/// Plain-value similarity for a given balance weight.
pub fn similarity_values(views: &AugmentedViews, alpha: f64, l: ViewId, m: ViewId) -> Result<DenseMatrix> {
    let node = views.node(l).matmul_nt(views.node(m))?;
    let edge = views.edge(l).matmul_nt(views.edge(m))?;
    node.scale(alpha).add(&edge.scale(1.0 - alpha))
}

/// `A_aug ← Norm(Z^a (Z^b)ᵀ + E^a (E^b)ᵀ) ⊙ A_aug` on detached embeddings.
pub fn refine_structure(views: &AugmentedViews, buffer: &StructureBuffer) -> Result<StructureBuffer> {
    let sum = views
        .z_a
        .matmul_nt(&views.z_b)?
        .add(&views.e_a.matmul_nt(&views.e_b)?)?;
    let factor = sum.minmax_normalize()?;
    StructureBuffer::new(factor.hadamard(buffer.matrix())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_operators, Graph};

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn triangle_l_tilde() -> DenseMatrix {
        let mut a = DenseMatrix::filled(3, 3, 1.0);
        for i in 0..3 {
            a.set(i, i, 0.0);
        }
        let g = Graph::new(DenseMatrix::zeros(3, 1), a, None).unwrap();
        normalized_operators(&g).1
    }

    #[test]
    fn no_perturbation_is_identity() {
        let x = mat(&[&[1.0, 2.0], &[3.0, -4.0]]);
        let (n, m) = perturb_attributes(&x, 0.0, 0.0, 9).unwrap();
        assert_eq!(n, x);
        assert_eq!(m, x);
    }

    #[test]
    fn full_mask_zeroes_everything() {
        let x = DenseMatrix::filled(4, 5, 2.5);
        let (_, m) = perturb_attributes(&x, 0.1, 1.0, 1).unwrap();
        assert_eq!(m, DenseMatrix::zeros(4, 5));
    }

    #[test]
    fn perturbation_rejects_bad_ratio() {
        let x = DenseMatrix::zeros(1, 1);
        assert!(perturb_attributes(&x, 0.0, 1.5, 0).is_err());
        assert!(perturb_attributes(&x, -1.0, 0.5, 0).is_err());
    }

    #[test]
    fn smoothing_order_zero_and_edgeless() {
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let edgeless = DenseMatrix::zeros(2, 2);
        assert_eq!(laplacian_smooth(&x, &edgeless, 0).unwrap(), x);
        assert_eq!(laplacian_smooth(&x, &edgeless, 5).unwrap(), x);
    }

    #[test]
    fn smoothing_on_triangle_averages_rows() {
        let x = mat(&[&[3.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]]);
        let out = laplacian_smooth(&x, &triangle_l_tilde(), 1).unwrap();
        assert!(out.max_abs_diff(&DenseMatrix::filled(3, 2, 1.0)) < 1e-14);
    }

    #[test]
    fn x_aug_identity_cases() {
        let x = mat(&[&[3.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]]);
        let lt = triangle_l_tilde();
        assert_eq!(build_x_aug(&x, &lt, 0.0, 0.0, 0, 0, 4).unwrap().x_aug, x);
        let smoothed = laplacian_smooth(&x, &lt, 2).unwrap();
        assert_eq!(build_x_aug(&x, &lt, 0.0, 0.0, 2, 2, 4).unwrap().x_aug, smoothed);
        // both branches hit the averaging fixed point on K3
        let mixed = build_x_aug(&x, &lt, 0.0, 0.0, 2, 3, 4).unwrap().x_aug;
        assert!(mixed.max_abs_diff(&DenseMatrix::filled(3, 2, 1.0)) < 1e-14);
    }

    #[test]
    fn equal_node_weights_give_equal_views() {
        let mut tape = Tape::new();
        let x = tape.constant(mat(&[&[1.0, 2.0, 0.5], &[-1.0, 0.0, 2.0]]));
        let w = mat(&[&[0.2, -0.4], &[0.1, 0.3], &[0.7, 0.0]]);
        let wa = tape.leaf(w.clone());
        let wb = tape.leaf(w);
        let (za, zb) = encode_nodes(&mut tape, x, wa, wb).unwrap();
        assert_eq!(tape.value(za), tape.value(zb));
    }

    #[test]
    fn one_dimensional_embeddings_are_signs() {
        let mut tape = Tape::new();
        let x = tape.constant(mat(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.2, -0.1]]));
        let wa = tape.leaf(mat(&[&[0.3], &[-0.2]]));
        let wb = tape.leaf(mat(&[&[-1.0], &[0.4]]));
        let (za, zb) = encode_nodes(&mut tape, x, wa, wb).unwrap();
        for v in tape.value(za).data().iter().chain(tape.value(zb).data()) {
            assert_eq!(v.abs(), 1.0);
        }
    }

    #[test]
    fn identity_structure_gives_coordinate_edges() {
        let mut tape = Tape::new();
        let buffer = StructureBuffer::new(DenseMatrix::identity(3)).unwrap();
        let u = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]).unwrap();
        let ua = tape.leaf(u.clone());
        let ub = tape.leaf(u.clone());
        let (ea, eb) = encode_edges(&mut tape, &buffer, ua, ub).unwrap();
        assert_eq!(tape.value(ea), &u);
        assert_eq!(tape.value(eb), &u);
    }

    #[test]
    fn similarity_examples() {
        let e2 = DenseMatrix::identity(2);
        let views = AugmentedViews {
            z_a: e2.clone(),
            z_b: e2.clone(),
            e_a: mat(&[&[1.0, 0.0], &[1.0, 0.0]]),
            e_b: mat(&[&[1.0, 0.0], &[1.0, 0.0]]),
        };
        let s = similarity_values(&views, 0.25, ViewId::A, ViewId::B).unwrap();
        assert!(s.max_abs_diff(&mat(&[&[1.0, 0.75], &[0.75, 1.0]])) < 1e-15);
        let s = similarity_values(&views, 1.0, ViewId::A, ViewId::A).unwrap();
        assert_eq!(s, e2);
    }

    #[test]
    fn similarity_on_tape_matches_values() {
        let mut tape = Tape::new();
        let z = |t: &mut Tape, r: &[&[f64]]| t.leaf(mat(r).row_l2_normalize().unwrap());
        let views = AugmentedViews {
            z_a: z(&mut tape, &[&[1.0, 2.0], &[0.5, -1.0], &[0.0, 1.0]]),
            z_b: z(&mut tape, &[&[2.0, 1.0], &[1.0, 1.0], &[-1.0, 0.3]]),
            e_a: z(&mut tape, &[&[0.2, 2.0], &[1.5, -1.0], &[1.0, 1.0]]),
            e_b: z(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0]]),
        };
        let alpha_raw = tape.leaf(DenseMatrix::scalar(0.4));
        let alpha = tape.sigmoid(alpha_raw).unwrap();
        let set = similarity_set(&mut tape, &views, Blend::Mixed(alpha)).unwrap();
        let plain = views.values(&tape);
        for (l, m, var) in set.iter() {
            let single = contrastive_similarity(&mut tape, &views, Blend::Mixed(alpha), l, m).unwrap();
            let expect = similarity_values(&plain, logistic(0.4), l, m).unwrap();
            assert!(tape.value(*var).max_abs_diff(&expect) < 1e-14);
            assert!(tape.value(single).max_abs_diff(&expect) < 1e-14);
        }
    }

    #[test]
    fn refine_examples() {
        let zero = StructureBuffer::new(DenseMatrix::zeros(2, 2)).unwrap();
        let views = AugmentedViews {
            z_a: mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
            z_b: mat(&[&[1.0, 0.0], &[0.6, 0.8]]),
            e_a: mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
            e_b: mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
        };
        assert_eq!(refine_structure(&views, &zero).unwrap(), zero);

        // constant similarity sum collapses the factor to zero
        let flat = AugmentedViews {
            z_a: mat(&[&[1.0], &[1.0]]),
            z_b: mat(&[&[1.0], &[1.0]]),
            e_a: mat(&[&[1.0], &[1.0]]),
            e_b: mat(&[&[1.0], &[1.0]]),
        };
        let edge = StructureBuffer::new(mat(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(
            refine_structure(&flat, &edge).unwrap().matrix(),
            &DenseMatrix::zeros(2, 2)
        );

        // sum = [[2, 0.6], [0, 1.8]] -> Norm = [[1, 0.3], [0, 0.9]]
        let refined = refine_structure(&views, &edge).unwrap();
        assert!(refined.matrix().max_abs_diff(&mat(&[&[0.0, 0.3], &[0.0, 0.0]])) < 1e-15);
    }
}
