//! Client-side scoring model: user embedding, item embedding table, the
//! residual fusion layer (CIFM), the sparsity-aware gate variant (SAR),
//! prediction, and the composite loss with full analytic gradients.
//!
//! The L1 term is reported but never differentiated; the trainer applies it
//! through proximal soft-thresholding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::numeric::ops::{
    affine_backward, affine_forward, layer_norm_backward, layer_norm_forward, relu,
    relu_backward, sigmoid, softplus, LayerNormCache,
};
use crate::numeric::rng::RngStream;
use crate::{Matrix, Real, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    FedUtr,
    FedUtrSar,
    FcfBaseline,
    NoCifm,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedutr" => Ok(Mode::FedUtr),
            "fedutr_sar" => Ok(Mode::FedUtrSar),
            "fcf_baseline" => Ok(Mode::FcfBaseline),
            "no_cifm" => Ok(Mode::NoCifm),
            other => Err(Error::invalid(format!(
                "unknown mode {other:?}; expected fedutr | fedutr_sar | fcf_baseline | no_cifm"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::FedUtr => "fedutr",
            Mode::FedUtrSar => "fedutr_sar",
            Mode::FcfBaseline => "fcf_baseline",
            Mode::NoCifm => "no_cifm",
        }
    }

    /// Whether items are scored through the fusion layer.
    pub fn uses_cifm(&self) -> bool {
        matches!(self, Mode::FedUtr | Mode::FedUtrSar)
    }

    pub fn uses_sar(&self) -> bool {
        matches!(self, Mode::FedUtrSar)
    }
}

/// Fusion-layer parameters: single-layer MLP plus layer-norm affine.
/// Also reused as the gradient accumulator for the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct CifmParams {
    pub w: Matrix,
    pub b: Vector,
    pub gamma: Vector,
    pub beta: Vector,
}

pub fn cifm_param_count(d: usize) -> usize {
    d * d + 3 * d
}

/// The gate holds three vectors over the flattened fusion parameters.
pub fn lam_param_count(d: usize) -> usize {
    3 * cifm_param_count(d)
}

impl CifmParams {
    pub fn zeros(d: usize) -> Self {
        CifmParams {
            w: Matrix::zeros(d, d),
            b: Vector::zeros(d),
            gamma: Vector::zeros(d),
            beta: Vector::zeros(d),
        }
    }

    /// Training init: small Gaussian MLP weights, identity-like layer norm.
    pub fn init(d: usize, rng: &mut RngStream) -> Self {
        CifmParams {
            w: rng.gaussian_matrix(d, d, 0.0, 0.1),
            b: Vector::zeros(d),
            gamma: Vector::filled(d, 1.0),
            beta: Vector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn param_count(&self) -> usize {
        cifm_param_count(self.dim())
    }

    /// Flattens as W row-major, then b, gamma, beta.
    pub fn flatten(&self) -> Vector {
        let d = self.dim();
        let mut out = Vec::with_capacity(cifm_param_count(d));
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.b.as_slice());
        out.extend_from_slice(self.gamma.as_slice());
        out.extend_from_slice(self.beta.as_slice());
        Vector::from_vec(out)
    }

    pub fn from_flat(d: usize, flat: &Vector) -> Result<Self> {
        if flat.len() != cifm_param_count(d) {
            return Err(Error::shape(
                "cifm from_flat",
                cifm_param_count(d),
                flat.len(),
            ));
        }
        let s = flat.as_slice();
        let dd = d * d;
        Ok(CifmParams {
            w: Matrix::from_vec(d, d, s[..dd].to_vec())?,
            b: Vector::from_slice(&s[dd..dd + d]),
            gamma: Vector::from_slice(&s[dd + d..dd + 2 * d]),
            beta: Vector::from_slice(&s[dd + 2 * d..dd + 3 * d]),
        })
    }

    pub fn l1_norm(&self) -> Real {
        self.w.as_slice().iter().map(|v| v.abs()).sum::<Real>()
            + self.b.l1_norm()
            + self.gamma.l1_norm()
            + self.beta.l1_norm()
    }

    /// `self += alpha * other`, blockwise.
    pub fn axpy(&mut self, alpha: Real, other: &CifmParams) -> Result<()> {
        self.w.add_scaled(alpha, &other.w)?;
        self.b.axpy(alpha, &other.b)?;
        self.gamma.axpy(alpha, &other.gamma)?;
        self.beta.axpy(alpha, &other.beta)?;
        Ok(())
    }

    /// Proximal L1 step: soft-threshold every parameter by `tau`.
    pub fn proximal_shrink(&mut self, tau: Real) {
        if tau <= 0.0 {
            return;
        }
        for v in self.w.as_mut_slice() {
            *v = soft_threshold(*v, tau);
        }
        for part in [&mut self.b, &mut self.gamma, &mut self.beta] {
            for v in part.as_mut_slice() {
                *v = soft_threshold(*v, tau);
            }
        }
    }

    pub fn count_exact_zeros(&self) -> usize {
        self.flatten().iter().filter(|&&v| v == 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.is_finite() && self.gamma.is_finite() && self.beta.is_finite()
    }
}

/// `argmin_z (z - x)^2 / 2 + tau |z|`.
pub fn soft_threshold(x: Real, tau: Real) -> Real {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Scalar gate of the sparsity-aware block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarParams {
    pub w_s: Real,
    pub b_s: Real,
}

impl SarParams {
    pub fn zeros() -> Self {
        SarParams { w_s: 0.0, b_s: 0.0 }
    }

    /// Mix weight from the client's interaction count.
    pub fn alpha(&self, n_interactions: usize) -> Real {
        sigmoid(self.w_s * (1.0 + n_interactions as Real).ln() + self.b_s)
    }
}

#[derive(Debug, Clone)]
pub struct ClientModel {
    pub mode: Mode,
    /// Private user embedding; never part of any upload payload.
    pub user_vec: Vector,
    /// Local copy of the item embedding table.
    pub items: Matrix,
    pub cifm: CifmParams,
    pub sar: Option<SarParams>,
}

impl ClientModel {
    pub fn new(mode: Mode, user_vec: Vector, items: Matrix, cifm: CifmParams) -> Self {
        let sar = mode.uses_sar().then(SarParams::zeros);
        ClientModel {
            mode,
            user_vec,
            items,
            cifm,
            sar,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.user_vec.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    /// Item representation the score is computed against, per mode.
    pub fn fused_item(&self, item: ItemId, n_interactions: usize, ln_eps: Real) -> Result<Vector> {
        if item >= self.n_items() {
            return Err(Error::invalid(format!(
                "item id {item} out of range (m = {})",
                self.n_items()
            )));
        }
        let e = self.items.row_vector(item);
        fuse_item_embedding(
            self.mode,
            &self.cifm,
            self.sar.as_ref(),
            &e,
            n_interactions,
            ln_eps,
        )
    }

    /// Predicted interaction probability, strictly inside (0, 1).
    pub fn predict(&self, item: ItemId, n_interactions: usize, ln_eps: Real) -> Result<Real> {
        let fused = self.fused_item(item, n_interactions, ln_eps)?;
        Ok(sigmoid(self.user_vec.dot(&fused)?))
    }
}

/// Mode dispatch for the fused item embedding.
pub fn fuse_item_embedding(
    mode: Mode,
    cifm: &CifmParams,
    sar: Option<&SarParams>,
    e: &Vector,
    n_interactions: usize,
    ln_eps: Real,
) -> Result<Vector> {
    match mode {
        Mode::FcfBaseline | Mode::NoCifm => Ok(e.clone()),
        Mode::FedUtr => cifm_forward(cifm, e, ln_eps),
        Mode::FedUtrSar => {
            let sar = sar.ok_or_else(|| Error::invalid("SAR mode without gate parameters"))?;
            sar_forward(cifm, sar, e, n_interactions, ln_eps)
        }
    }
}

/// `LayerNorm(relu(W e + b) + e)`.
pub fn cifm_forward(cifm: &CifmParams, e: &Vector, ln_eps: Real) -> Result<Vector> {
    let pre = affine_forward(&cifm.w, &cifm.b, e)?;
    let act = relu(&pre);
    let z = act.add(e)?;
    crate::numeric::ops::layer_norm(&z, &cifm.gamma, &cifm.beta, ln_eps)
}

/// `LayerNorm(alpha * relu(W e + b) + (1 - alpha) * e)` with
/// `alpha = sigmoid(w_s * ln(1 + n) + b_s)`.
pub fn sar_forward(
    cifm: &CifmParams,
    sar: &SarParams,
    e: &Vector,
    n_interactions: usize,
    ln_eps: Real,
) -> Result<Vector> {
    let alpha = sar.alpha(n_interactions);
    let pre = affine_forward(&cifm.w, &cifm.b, e)?;
    let act = relu(&pre);
    let z = act.scale(alpha).add(&e.scale(1.0 - alpha))?;
    crate::numeric::ops::layer_norm(&z, &cifm.gamma, &cifm.beta, ln_eps)
}

struct FusedCache {
    e: Vector,
    pre: Vector,
    act: Vector,
    alpha: Real,
    ln: Option<LayerNormCache<Real>>,
    fused: Vector,
}

fn fused_forward_cached(
    mode: Mode,
    cifm: &CifmParams,
    sar: Option<&SarParams>,
    e: Vector,
    n_interactions: usize,
    ln_eps: Real,
) -> Result<FusedCache> {
    if !mode.uses_cifm() {
        return Ok(FusedCache {
            fused: e.clone(),
            pre: Vector::zeros(0),
            act: Vector::zeros(0),
            alpha: 1.0,
            ln: None,
            e,
        });
    }
    let alpha = match mode {
        Mode::FedUtrSar => sar
            .ok_or_else(|| Error::invalid("SAR mode without gate parameters"))?
            .alpha(n_interactions),
        _ => 1.0,
    };
    let pre = affine_forward(&cifm.w, &cifm.b, &e)?;
    let act = relu(&pre);
    let z = match mode {
        Mode::FedUtrSar => act.scale(alpha).add(&e.scale(1.0 - alpha))?,
        _ => act.add(&e)?,
    };
    let (fused, ln) = layer_norm_forward(&z, &cifm.gamma, &cifm.beta, ln_eps)?;
    Ok(FusedCache {
        e,
        pre,
        act,
        alpha,
        ln: Some(ln),
        fused,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub rec_loss: Real,
    /// Raw L1 norm of the fusion parameters.
    pub l1_penalty: Real,
    /// `rec_loss + lambda * l1_penalty`.
    pub total: Real,
}

#[derive(Debug, Clone)]
pub struct SarGrads {
    pub w_s: Real,
    pub b_s: Real,
}

/// Gradients of the smooth part of the objective. Item-row gradients are
/// keyed by item id in sorted order so updates are deterministic.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub user_vec: Vector,
    pub items: BTreeMap<ItemId, Vector>,
    pub cifm: Option<CifmParams>,
    pub sar: Option<SarGrads>,
}

/// Binary cross-entropy (sum over positives and sampled negatives) plus the
/// reported L1 penalty, with analytic gradients for every trainable block of
/// the mode. The non-smooth L1 part is excluded from the gradients.
pub fn loss_and_grads(
    model: &ClientModel,
    positives: &[ItemId],
    negatives: &[ItemId],
    lambda: Real,
    n_interactions: usize,
    ln_eps: Real,
) -> Result<(LossBreakdown, ModelGrads)> {
    if positives.is_empty() {
        return Err(Error::invalid("loss requires at least one positive item"));
    }
    let d = model.embed_dim();
    let uses_cifm = model.mode.uses_cifm();
    let mut rec_loss = 0.0;
    let mut g_user = Vector::zeros(d);
    let mut g_items: BTreeMap<ItemId, Vector> = BTreeMap::new();
    let mut g_cifm = uses_cifm.then(|| CifmParams::zeros(d));
    let mut g_sar = model.mode.uses_sar().then(|| SarGrads { w_s: 0.0, b_s: 0.0 });
    let log_n = (1.0 + n_interactions as Real).ln();

    let mut run = |item: ItemId, label: Real| -> Result<()> {
        if item >= model.n_items() {
            return Err(Error::invalid(format!(
                "item id {item} out of range (m = {})",
                model.n_items()
            )));
        }
        let cache = fused_forward_cached(
            model.mode,
            &model.cifm,
            model.sar.as_ref(),
            model.items.row_vector(item),
            n_interactions,
            ln_eps,
        )?;
        let score = model.user_vec.dot(&cache.fused)?;
        // -ln sigmoid(s) = softplus(-s); -ln(1 - sigmoid(s)) = softplus(s)
        rec_loss += if label > 0.5 {
            softplus(-score)
        } else {
            softplus(score)
        };
        let coef = sigmoid(score) - label;
        g_user.axpy(coef, &cache.fused)?;
        let g_fused = model.user_vec.scale(coef);

        let g_e = if let (Some(ln), Some(gc)) = (&cache.ln, g_cifm.as_mut()) {
            let ln_grads = layer_norm_backward(ln, &model.cifm.gamma, &g_fused)?;
            gc.gamma.axpy(1.0, &ln_grads.d_gamma)?;
            gc.beta.axpy(1.0, &ln_grads.d_beta)?;
            let g_z = ln_grads.d_x;
            let (g_act, mut g_e) = match model.mode {
                Mode::FedUtrSar => {
                    let g_act = g_z.scale(cache.alpha);
                    let g_e = g_z.scale(1.0 - cache.alpha);
                    if let Some(gs) = g_sar.as_mut() {
                        let sar = model.sar.as_ref().expect("sar params in sar mode");
                        let g_alpha = g_z.dot(&cache.act.sub(&cache.e)?)?;
                        let sig_grad = cache.alpha * (1.0 - cache.alpha);
                        gs.w_s += g_alpha * sig_grad * log_n;
                        gs.b_s += g_alpha * sig_grad;
                        let _ = sar;
                    }
                    (g_act, g_e)
                }
                _ => (g_z.clone(), g_z),
            };
            let g_pre = relu_backward(&cache.pre, &g_act)?;
            let aff = affine_backward(&model.cifm.w, &cache.e, &g_pre)?;
            gc.w.add_scaled(1.0, &aff.d_w)?;
            gc.b.axpy(1.0, &aff.d_b)?;
            g_e.axpy(1.0, &aff.d_x)?;
            g_e
        } else {
            g_fused
        };
        g_items
            .entry(item)
            .or_insert_with(|| Vector::zeros(d))
            .axpy(1.0, &g_e)?;
        Ok(())
    };

    for &i in positives {
        run(i, 1.0)?;
    }
    for &i in negatives {
        run(i, 0.0)?;
    }

    let l1_penalty = if uses_cifm { model.cifm.l1_norm() } else { 0.0 };
    Ok((
        LossBreakdown {
            rec_loss,
            l1_penalty,
            total: rec_loss + lambda * l1_penalty,
        },
        ModelGrads {
            user_vec: g_user,
            items: g_items,
            cifm: g_cifm,
            sar: g_sar,
        },
    ))
}

/// Trainable-parameter footprint in bytes.
///
/// The baseline counts the item table plus (optionally) the user embedding;
/// the fused modes add the fusion layer, the gate vectors over its flattened
/// parameters, and the two sparsity-gate scalars for the SAR variant.
pub fn parameter_count_bytes(
    mode: Mode,
    m_items: usize,
    d: usize,
    include_user: bool,
    bytes_per_param: usize,
) -> usize {
    let mut params = m_items * d + if include_user { d } else { 0 };
    if mode.uses_cifm() {
        params += cifm_param_count(d) + lam_param_count(d);
    }
    if mode.uses_sar() {
        params += 2;
    }
    params * bytes_per_param
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub mode: String,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    pub round: usize,
}

fn write_f64_blob(path: &Path, values: &[Real]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64_blob(path: &Path, expected_len: usize) -> Result<Vec<Real>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_len * 8 {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected_len * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| Real::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

/// Global-state checkpoint: JSON manifest plus raw little-endian f64 blobs.
pub fn save_checkpoint(
    dir: &Path,
    manifest: &CheckpointManifest,
    global_e: &Matrix,
    global_cifm: &CifmParams,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    write_f64_blob(&dir.join("item_embeddings.f64le"), global_e.as_slice())?;
    write_f64_blob(
        &dir.join("cifm.f64le"),
        global_cifm.flatten().as_slice(),
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Matrix, CifmParams)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let e_data = read_f64_blob(
        &dir.join("item_embeddings.f64le"),
        manifest.m * manifest.d,
    )?;
    let e = Matrix::from_vec(manifest.m, manifest.d, e_data)?;
    let cifm_data = read_f64_blob(&dir.join("cifm.f64le"), cifm_param_count(manifest.d))?;
    let cifm = CifmParams::from_flat(manifest.d, &Vector::from_vec(cifm_data))?;
    Ok((manifest, e, cifm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::finite_diff_check;
    use crate::LN_EPS;

    fn toy_model(mode: Mode, seed: u64, d: usize, m: usize) -> ClientModel {
        let mut rng = RngStream::from_seed(seed);
        let user_vec = rng.gaussian_vector(d, 0.0, 0.5);
        let items = rng.gaussian_matrix(m, d, 0.0, 0.8);
        let cifm = CifmParams::init(d, &mut rng);
        let mut model = ClientModel::new(mode, user_vec, items, cifm);
        if let Some(sar) = model.sar.as_mut() {
            sar.w_s = 0.3;
            sar.b_s = -0.1;
        }
        model
    }

    /// Shifts bias coordinates until every touched pre-activation is at
    /// least 1e-3 away from the ReLU kink.
    fn nudge_off_kinks(model: &mut ClientModel, items: &[ItemId]) {
        for _ in 0..50 {
            let mut clean = true;
            for &i in items {
                let e = model.items.row_vector(i);
                let pre = affine_forward(&model.cifm.w, &model.cifm.b, &e).unwrap();
                for j in 0..pre.len() {
                    if pre[j].abs() < 1e-3 {
                        model.cifm.b[j] += 3.7e-3;
                        clean = false;
                    }
                }
            }
            if clean {
                return;
            }
        }
        panic!("could not move pre-activations off the ReLU kink");
    }

    #[test]
    fn cifm_zero_mlp_is_pure_layer_norm_passthrough() {
        let d = 4;
        let mut cifm = CifmParams::zeros(d);
        cifm.gamma = Vector::filled(d, 1.0);
        let e = Vector::from_vec(vec![0.3, -0.7, 1.1, 0.2]);
        let out = cifm_forward(&cifm, &e, LN_EPS).unwrap();
        let expect =
            crate::numeric::ops::layer_norm(&e, &cifm.gamma, &cifm.beta, LN_EPS).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn cifm_gamma_zero_outputs_beta() {
        let d = 3;
        let mut cifm = CifmParams::init(d, &mut RngStream::from_seed(2));
        cifm.gamma = Vector::zeros(d);
        cifm.beta = Vector::from_vec(vec![5.0, -1.0, 2.0]);
        let out = cifm_forward(&cifm, &Vector::from_vec(vec![9.0, 8.0, 7.0]), LN_EPS).unwrap();
        assert_eq!(out.as_slice(), &[5.0, -1.0, 2.0]);
    }

    #[test]
    fn cifm_random_case_matches_straight_line_recompute() {
        let d = 5;
        let mut rng = RngStream::from_seed(7);
        let cifm = CifmParams::init(d, &mut rng);
        let e = rng.gaussian_vector(d, 0.0, 1.0);
        let out = cifm_forward(&cifm, &e, LN_EPS).unwrap();

        // independent recomputation, scalar by scalar
        let mut z = vec![0.0; d];
        for r in 0..d {
            let mut acc = cifm.b[r];
            for c in 0..d {
                acc += cifm.w.get(r, c) * e[c];
            }
            z[r] = acc.max(0.0) + e[r];
        }
        let mean: Real = z.iter().sum::<Real>() / d as Real;
        let var: Real = z.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
        for r in 0..d {
            let expect = cifm.gamma[r] * (z[r] - mean) / (var + LN_EPS).sqrt() + cifm.beta[r];
            assert!((out[r] - expect).abs() < 1e-12, "coord {r}");
        }
    }

    #[test]
    fn sar_neutral_gate_mixes_half_and_half() {
        let d = 4;
        let mut rng = RngStream::from_seed(3);
        let cifm = CifmParams::init(d, &mut rng);
        let sar = SarParams::zeros();
        let e = rng.gaussian_vector(d, 0.0, 1.0);
        assert_eq!(sar.alpha(17), 0.5);
        let out = sar_forward(&cifm, &sar, &e, 17, LN_EPS).unwrap();
        let act = relu(&affine_forward(&cifm.w, &cifm.b, &e).unwrap());
        let z = act.scale(0.5).add(&e.scale(0.5)).unwrap();
        let expect = crate::numeric::ops::layer_norm(&z, &cifm.gamma, &cifm.beta, LN_EPS).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn sar_zero_interactions_gate_reduces_to_bias() {
        let sar = SarParams { w_s: 100.0, b_s: -0.4 };
        assert!((sar.alpha(0) - sigmoid(-0.4)).abs() < 1e-15);
    }

    #[test]
    fn sar_negative_bias_limit_is_the_pure_universal_path() {
        let d = 4;
        let mut rng = RngStream::from_seed(5);
        let cifm = CifmParams::init(d, &mut rng);
        let sar = SarParams { w_s: 0.0, b_s: -20.0 };
        let e = rng.gaussian_vector(d, 0.0, 1.0);
        let out = sar_forward(&cifm, &sar, &e, 3, LN_EPS).unwrap();
        let direct =
            crate::numeric::ops::layer_norm(&e, &cifm.gamma, &cifm.beta, LN_EPS).unwrap();
        for i in 0..d {
            assert!((out[i] - direct[i]).abs() < 1e-6, "coord {i}");
        }
    }

    #[test]
    fn sar_alpha_is_increasing_in_interactions_for_positive_weight() {
        let sar = SarParams { w_s: 0.8, b_s: 0.0 };
        let mut prev = sar.alpha(0);
        for n in 1..50 {
            let a = sar.alpha(n);
            assert!(a > prev, "alpha not increasing at n={n}");
            prev = a;
        }
    }

    #[test]
    fn predict_closed_forms() {
        let d = 2;
        // fcf mode: score is sigmoid(u . e)
        let mut model = toy_model(Mode::FcfBaseline, 1, d, 3);
        model.user_vec = Vector::from_vec(vec![1.0, 0.0]);
        model.items.set_row(0, &Vector::from_vec(vec![0.0, 5.0])).unwrap();
        assert_eq!(model.predict(0, 1, LN_EPS).unwrap(), 0.5);
        model
            .items
            .set_row(1, &Vector::from_vec(vec![3.0_f64.ln(), 0.0]))
            .unwrap();
        assert!((model.predict(1, 1, LN_EPS).unwrap() - 0.75).abs() < 1e-12);
        assert!(model.predict(99, 1, LN_EPS).is_err());
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        for mode in [Mode::FedUtr, Mode::FedUtrSar, Mode::FcfBaseline, Mode::NoCifm] {
            let model = toy_model(mode, 11, 6, 8);
            for i in 0..8 {
                let p = model.predict(i, 4, LN_EPS).unwrap();
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn no_cifm_matches_fcf_given_identical_parameters() {
        let a = toy_model(Mode::NoCifm, 13, 5, 7);
        let mut b = a.clone();
        b.mode = Mode::FcfBaseline;
        for i in 0..7 {
            assert_eq!(
                a.predict(i, 3, LN_EPS).unwrap(),
                b.predict(i, 3, LN_EPS).unwrap()
            );
        }
    }

    #[test]
    fn balanced_loss_is_two_ln_two() {
        // one positive and one negative both scored at 0.5
        let d = 2;
        let mut model = toy_model(Mode::FcfBaseline, 1, d, 2);
        model.user_vec = Vector::from_vec(vec![1.0, 0.0]);
        model.items.set_row(0, &Vector::from_vec(vec![0.0, 1.0])).unwrap();
        model.items.set_row(1, &Vector::from_vec(vec![0.0, -1.0])).unwrap();
        let (loss, _) = loss_and_grads(&model, &[0], &[1], 0.0, 1, LN_EPS).unwrap();
        assert!((loss.rec_loss - 2.0 * (2.0_f64).ln()).abs() < 1e-12);
        assert_eq!(loss.total, loss.rec_loss);
    }

    #[test]
    fn l1_penalty_counts_every_fusion_parameter() {
        let d = 2;
        let mut model = toy_model(Mode::FedUtr, 1, d, 3);
        let flat = Vector::filled(cifm_param_count(d), 0.1);
        model.cifm = CifmParams::from_flat(d, &flat).unwrap();
        let (loss, _) = loss_and_grads(&model, &[0], &[1], 1.0, 1, LN_EPS).unwrap();
        assert!((loss.l1_penalty - 1.0).abs() < 1e-12);
        assert!((loss.total - (loss.rec_loss + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_positives_is_an_error() {
        let model = toy_model(Mode::FedUtr, 1, 4, 6);
        assert!(loss_and_grads(&model, &[], &[0], 0.0, 1, LN_EPS).is_err());
    }

    #[test]
    fn gradient_support_is_limited_to_touched_items() {
        let model = toy_model(Mode::FedUtr, 19, 4, 10);
        let (_, grads) = loss_and_grads(&model, &[2], &[5, 7], 0.0, 1, LN_EPS).unwrap();
        let touched: Vec<ItemId> = grads.items.keys().copied().collect();
        assert_eq!(touched, vec![2, 5, 7]);
    }

    fn check_block<F>(name: &str, x0: &Vector, analytic: &Vector, f: F, tol: Real)
    where
        F: Fn(&Vector) -> Real,
    {
        let report = finite_diff_check(f, x0, analytic, 1e-6, tol);
        assert!(
            report.passed,
            "{name}: max rel err {} > {tol}",
            report.max_rel_err
        );
    }

    /// Finite-difference check of every trainable block for one mode/seed.
    pub(crate) fn gradient_suite_case(mode: Mode, seed: u64) {
        let d = 6;
        let m = 10;
        let positives = [1usize, 4];
        let negatives = [0usize, 6, 8];
        let touched: Vec<ItemId> = positives.iter().chain(&negatives).copied().collect();
        let n_interactions = 5usize;
        let mut model = toy_model(mode, seed, d, m);
        if mode.uses_cifm() {
            nudge_off_kinks(&mut model, &touched);
        }
        let (_, grads) =
            loss_and_grads(&model, &positives, &negatives, 0.0, n_interactions, LN_EPS).unwrap();
        let rec = |m: &ClientModel| {
            loss_and_grads(m, &positives, &negatives, 0.0, n_interactions, LN_EPS)
                .unwrap()
                .0
                .rec_loss
        };

        // user embedding
        check_block(
            "user_vec",
            &model.user_vec,
            &grads.user_vec,
            |x| {
                let mut m2 = model.clone();
                m2.user_vec = x.clone();
                rec(&m2)
            },
            1e-4,
        );

        // touched item rows
        for &i in &touched {
            let x0 = model.items.row_vector(i);
            check_block(
                &format!("item row {i}"),
                &x0,
                &grads.items[&i],
                |x| {
                    let mut m2 = model.clone();
                    m2.items.set_row(i, x).unwrap();
                    rec(&m2)
                },
                1e-4,
            );
        }

        if let Some(g_cifm) = &grads.cifm {
            check_block(
                "cifm",
                &model.cifm.flatten(),
                &g_cifm.flatten(),
                |x| {
                    let mut m2 = model.clone();
                    m2.cifm = CifmParams::from_flat(d, x).unwrap();
                    rec(&m2)
                },
                1e-4,
            );
        }

        if let Some(g_sar) = &grads.sar {
            let sar = model.sar.unwrap();
            check_block(
                "sar",
                &Vector::from_vec(vec![sar.w_s, sar.b_s]),
                &Vector::from_vec(vec![g_sar.w_s, g_sar.b_s]),
                |x| {
                    let mut m2 = model.clone();
                    m2.sar = Some(SarParams { w_s: x[0], b_s: x[1] });
                    rec(&m2)
                },
                1e-4,
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        for mode in [Mode::FedUtr, Mode::FedUtrSar, Mode::FcfBaseline, Mode::NoCifm] {
            for seed in 0..5u64 {
                gradient_suite_case(mode, seed * 31 + 7);
            }
        }
    }

    #[test]
    fn soft_threshold_definition() {
        assert_eq!(soft_threshold(0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(-0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(0.75, 0.25), 0.5);
        assert_eq!(soft_threshold(-0.75, 0.25), -0.5);
    }

    #[test]
    fn parameter_count_reproduces_baseline_formula() {
        // (m*d + d) * 4 for the baseline with the user embedding included
        for (m, expect) in [
            (5370usize, 687_488usize),
            (1579, 202_240),
            (2307, 295_424),
            (3509, 449_280),
        ] {
            assert_eq!(
                parameter_count_bytes(Mode::FcfBaseline, m, 32, true, 4),
                expect
            );
        }
    }

    #[test]
    fn parameter_count_overhead_is_stable_across_corpora() {
        // the fused-mode overhead over the baseline depends only on d
        let d = 32;
        let overhead = |m: usize| {
            parameter_count_bytes(Mode::FedUtr, m, d, true, 4)
                - parameter_count_bytes(Mode::FcfBaseline, m, d, true, 4)
        };
        let expect = 4 * (cifm_param_count(d) + lam_param_count(d));
        assert_eq!(overhead(5370), expect);
        assert_eq!(overhead(1579), expect);
        assert_eq!(
            parameter_count_bytes(Mode::FedUtrSar, 100, d, true, 4)
                - parameter_count_bytes(Mode::FedUtr, 100, d, true, 4),
            8
        );
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = RngStream::from_seed(5);
        let cifm = CifmParams::init(7, &mut rng);
        let flat = cifm.flatten();
        assert_eq!(flat.len(), cifm_param_count(7));
        let back = CifmParams::from_flat(7, &flat).unwrap();
        assert_eq!(back, cifm);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::from_seed(8);
        let e = rng.gaussian_matrix(6, 4, 0.0, 1.0);
        let cifm = CifmParams::init(4, &mut rng);
        let manifest = CheckpointManifest {
            mode: Mode::FedUtr.as_str().into(),
            d: 4,
            m: 6,
            seed: 8,
            round: 3,
        };
        save_checkpoint(dir.path(), &manifest, &e, &cifm).unwrap();
        let (m2, e2, c2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(e2, e);
        assert_eq!(c2, cifm);
    }
}
