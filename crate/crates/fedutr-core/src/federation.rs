//! The federated round protocol: server distribution, client local training
//! with proximal SGD, gated parameter fusion on the client (LAM), Laplace
//! noise on uploads, uniform aggregation, and round orchestration for the
//! full method, the SAR variant, the FCF baseline, and every ablation.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::data::{
    group_users_by_sparsity, leave_one_out_split, sample_train_negatives, InteractionDataset,
    ItemCorpus, ItemId, SparsityGroups, SplitSpec, UserId,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_by_group, rank_and_score, GroupReport};
use crate::model::{
    cifm_param_count, fuse_item_embedding, lam_param_count, loss_and_grads, CifmParams,
    ClientModel, LossBreakdown, Mode, SarParams,
};
use crate::numeric::ops::sigmoid;
use crate::numeric::rng::{tags, RngStream};
use crate::urm::{random_init, UniversalProvider};
use crate::{Matrix, Real, Vector, LN_EPS};

/// Client-side gate over the flattened fusion parameters. Client-local;
/// never part of an upload payload.
#[derive(Debug, Clone, PartialEq)]
pub struct LamParams {
    pub a_g: Vector,
    pub a_l: Vector,
    pub c: Vector,
}

impl LamParams {
    /// Zero init, which gates every coordinate at exactly 1/2.
    pub fn zeros(d: usize) -> Self {
        let p = cifm_param_count(d);
        LamParams {
            a_g: Vector::zeros(p),
            a_l: Vector::zeros(p),
            c: Vector::zeros(p),
        }
    }

    pub fn flat_len(&self) -> usize {
        self.a_g.len()
    }

    pub fn param_count(&self) -> usize {
        3 * self.flat_len()
    }

    pub fn is_finite(&self) -> bool {
        self.a_g.is_finite() && self.a_l.is_finite() && self.c.is_finite()
    }
}

/// Per-coordinate gate values for global/local fusion:
/// `rho = sigmoid(a_g * theta_g + a_l * theta_u + c)`.
pub fn lam_gate(lam: &LamParams, theta_g: &Vector, theta_u: &Vector) -> Result<Vector> {
    if theta_g.len() != lam.flat_len() || theta_u.len() != lam.flat_len() {
        return Err(Error::shape(
            "lam_gate",
            lam.flat_len(),
            format!("{} / {}", theta_g.len(), theta_u.len()),
        ));
    }
    let mut rho = Vec::with_capacity(lam.flat_len());
    for j in 0..lam.flat_len() {
        rho.push(sigmoid(
            lam.a_g[j] * theta_g[j] + lam.a_l[j] * theta_u[j] + lam.c[j],
        ));
    }
    Ok(Vector::from_vec(rho))
}

/// Convex combination `rho * theta_g + (1 - rho) * theta_u`, returning both
/// the fused parameters and the gate.
pub fn lam_fuse_with_rho(
    lam: &LamParams,
    theta_global: &CifmParams,
    theta_prev_local: &CifmParams,
) -> Result<(CifmParams, Vector)> {
    let d = theta_global.dim();
    if theta_prev_local.dim() != d {
        return Err(Error::shape("lam_fuse", d, theta_prev_local.dim()));
    }
    let g = theta_global.flatten();
    let u = theta_prev_local.flatten();
    let rho = lam_gate(lam, &g, &u)?;
    let mut fused = Vec::with_capacity(g.len());
    for j in 0..g.len() {
        fused.push(rho[j] * g[j] + (1.0 - rho[j]) * u[j]);
    }
    Ok((CifmParams::from_flat(d, &Vector::from_vec(fused))?, rho))
}

pub fn lam_fuse(
    lam: &LamParams,
    theta_global: &CifmParams,
    theta_prev_local: &CifmParams,
) -> Result<CifmParams> {
    Ok(lam_fuse_with_rho(lam, theta_global, theta_prev_local)?.0)
}

/// Gradients of the gate parameters for an upstream gradient on the fused
/// parameters, chained through the round's fusion point.
struct LamGrads {
    a_g: Vector,
    a_l: Vector,
    c: Vector,
}

fn lam_backward(
    theta_g: &Vector,
    theta_u: &Vector,
    rho: &Vector,
    grad_fused: &Vector,
) -> LamGrads {
    let p = rho.len();
    let mut a_g = Vector::zeros(p);
    let mut a_l = Vector::zeros(p);
    let mut c = Vector::zeros(p);
    for j in 0..p {
        // d fused_j / d rho_j = theta_g_j - theta_u_j
        let d_rho = grad_fused[j] * (theta_g[j] - theta_u[j]);
        let sig = rho[j] * (1.0 - rho[j]);
        a_g[j] = d_rho * sig * theta_g[j];
        a_l[j] = d_rho * sig * theta_u[j];
        c[j] = d_rho * sig;
    }
    LamGrads { a_g, a_l, c }
}

/// Full experiment configuration for one run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: Real,
    pub lambda_l1: Real,
    pub negative_ratio: usize,
    /// Fraction of clients sampled each round, in (0, 1].
    pub participation: Real,
    /// Laplace scale for upload noise; 0 disables it.
    pub ldp_scale: Real,
    pub mode: Mode,
    /// Replace the provider's embeddings with random init.
    pub no_urm: bool,
    /// Score against raw embeddings (drops the fusion layer).
    pub no_cifm: bool,
    /// Skip the client-side gate; the round starts from the global fusion
    /// parameters directly.
    pub no_lam: bool,
    /// Treat lambda as zero at the proximal step.
    pub no_regular: bool,
    pub seed: u64,
    pub eval_k: usize,
    pub n_groups: usize,
    /// Evaluate on round 0, every `eval_every`-th round, and the final round.
    pub eval_every: usize,
    pub ln_eps: Real,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 32,
            rounds: 20,
            local_epochs: 1,
            learning_rate: 0.05,
            lambda_l1: 0.01,
            negative_ratio: 4,
            participation: 1.0,
            ldp_scale: 0.0,
            mode: Mode::FedUtr,
            no_urm: false,
            no_cifm: false,
            no_lam: false,
            no_regular: false,
            seed: 42,
            eval_k: 10,
            n_groups: 5,
            eval_every: 1,
            ln_eps: LN_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim must be at least 2"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.lambda_l1 < 0.0 {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.ldp_scale < 0.0 {
            return Err(Error::invalid("ldp_scale must be non-negative"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::invalid("participation must be in (0, 1]"));
        }
        if self.negative_ratio == 0 {
            return Err(Error::invalid("negative_ratio must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        Ok(())
    }

    /// Mode after applying the fusion-layer ablation flag.
    pub fn effective_mode(&self) -> Mode {
        if self.no_cifm {
            Mode::NoCifm
        } else {
            self.mode
        }
    }

    fn effective_lambda(&self) -> Real {
        if self.no_regular {
            0.0
        } else {
            self.lambda_l1
        }
    }

    fn lam_active(&self) -> bool {
        self.effective_mode().uses_cifm() && !self.no_lam
    }
}

/// A client's persistent state across rounds. The user embedding, gate
/// parameters, and sparsity gate stay on the client for the whole run.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub user_id: UserId,
    pub user_vec: Vector,
    pub sar: Option<SarParams>,
    pub lam: LamParams,
    /// The client's fusion parameters at the end of its previous round.
    pub prev_cifm: CifmParams,
    pub rng: RngStream,
}

/// Server-held global state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_e: Matrix,
    pub global_cifm: CifmParams,
    pub round: usize,
}

/// What the server sends to each participant at the start of a round.
pub struct ServerPayload<'a> {
    pub global_e: &'a Matrix,
    pub global_cifm: &'a CifmParams,
}

/// What a client sends back: its updated item-embedding table and fusion
/// parameters. This is the entire wire surface; user embeddings, gate
/// parameters, and interaction ids never appear here.
#[derive(Debug, Clone)]
pub struct ClientUpload {
    pub item_embeddings: Matrix,
    pub cifm: Option<CifmParams>,
}

impl ClientUpload {
    /// Serializes the payload exactly as it would cross the wire, for
    /// schema inspection.
    pub fn to_wire_json(&self) -> serde_json::Value {
        let e: Vec<Vec<Real>> = (0..self.item_embeddings.rows())
            .map(|r| self.item_embeddings.row(r).to_vec())
            .collect();
        json!({
            "item_embeddings": e,
            "cifm": self.cifm.as_ref().map(|c| c.flatten().into_vec()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClientRoundStats {
    /// Loss of the final local epoch, before its update.
    pub loss: LossBreakdown,
}

/// One client's local round: fuse the received fusion parameters with the
/// previous local ones through the gate, run proximal SGD epochs, store the
/// result, and build the (optionally noised) upload.
pub fn client_local_round(
    state: &mut ClientState,
    payload: &ServerPayload<'_>,
    ds: &InteractionDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<(ClientUpload, ClientRoundStats)> {
    let d = cfg.embed_dim;
    if payload.global_e.cols() != d || payload.global_cifm.dim() != d {
        return Err(Error::shape(
            "client_local_round payload",
            d,
            format!(
                "E {} cifm {}",
                payload.global_e.cols(),
                payload.global_cifm.dim()
            ),
        ));
    }
    let u = state.user_id;
    let mode = cfg.effective_mode();
    let positives = &split.train[u];
    if positives.is_empty() {
        return Err(Error::Dataset(format!("user {u} has no training items")));
    }
    let n_interactions = positives.len();
    let lambda = cfg.effective_lambda();
    let eta = cfg.learning_rate;

    // fusion point: working parameters for this round
    let fusion = if cfg.lam_active() {
        let (fused, rho) = lam_fuse_with_rho(&state.lam, payload.global_cifm, &state.prev_cifm)?;
        Some((
            fused,
            rho,
            payload.global_cifm.flatten(),
            state.prev_cifm.flatten(),
        ))
    } else {
        None
    };
    let working_cifm = match &fusion {
        Some((fused, _, _, _)) => fused.clone(),
        None => payload.global_cifm.clone(),
    };

    let mut model = ClientModel {
        mode,
        user_vec: state.user_vec.clone(),
        items: payload.global_e.clone(),
        cifm: working_cifm,
        sar: state.sar,
    };

    let mut last_loss = None;
    for _ in 0..cfg.local_epochs {
        let negatives = sample_train_negatives(ds, u, cfg.negative_ratio, &mut state.rng);
        let (loss, grads) = loss_and_grads(
            &model,
            positives,
            &negatives,
            lambda,
            n_interactions,
            cfg.ln_eps,
        )?;

        model.user_vec.axpy(-eta, &grads.user_vec)?;
        for (&item, g) in &grads.items {
            for (v, gv) in model.items.row_mut(item).iter_mut().zip(g.iter()) {
                *v -= eta * gv;
            }
        }
        if let Some(g_cifm) = &grads.cifm {
            model.cifm.axpy(-eta, g_cifm)?;
            if let Some((_, rho, theta_g, theta_u)) = &fusion {
                let lg = lam_backward(theta_g, theta_u, rho, &g_cifm.flatten());
                state.lam.a_g.axpy(-eta, &lg.a_g)?;
                state.lam.a_l.axpy(-eta, &lg.a_l)?;
                state.lam.c.axpy(-eta, &lg.c)?;
            }
            // proximal step realizes the L1 term exactly
            model.cifm.proximal_shrink(eta * lambda);
        }
        if let (Some(sar), Some(g_sar)) = (model.sar.as_mut(), &grads.sar) {
            sar.w_s -= eta * g_sar.w_s;
            sar.b_s -= eta * g_sar.b_s;
        }

        if !model.user_vec.is_finite()
            || !model.items.is_finite()
            || !model.cifm.is_finite()
            || !state.lam.is_finite()
        {
            return Err(Error::NonFinite(format!("client {u} local round")));
        }
        last_loss = Some(loss);
    }

    state.user_vec = model.user_vec;
    state.sar = model.sar;
    if mode.uses_cifm() {
        state.prev_cifm = model.cifm.clone();
    }

    let mut upload = ClientUpload {
        item_embeddings: model.items,
        cifm: mode.uses_cifm().then_some(model.cifm),
    };
    apply_ldp(&mut upload, cfg.ldp_scale, &mut state.rng)?;

    Ok((
        upload,
        ClientRoundStats {
            loss: last_loss.expect("at least one local epoch"),
        },
    ))
}

/// Adds i.i.d. Laplace(0, delta) noise to the uploaded item embeddings.
/// Fusion parameters are uploaded clean.
pub fn apply_ldp(upload: &mut ClientUpload, delta: Real, rng: &mut RngStream) -> Result<()> {
    rng.perturb_matrix_laplace(&mut upload.item_embeddings, delta)
}

/// Unweighted elementwise mean over the round's uploads; increments the
/// round counter.
pub fn server_aggregate(uploads: &[ClientUpload], server: &mut ServerState) -> Result<()> {
    if uploads.is_empty() {
        return Err(Error::invalid("aggregation needs at least one upload"));
    }
    let dims = server.global_e.dims();
    let d = server.global_cifm.dim();
    let weight = 1.0 / uploads.len() as Real;

    let mut e = Matrix::zeros(dims.0, dims.1);
    let mut cifm_acc: Option<CifmParams> = None;
    let mut cifm_count = 0usize;
    for up in uploads {
        if up.item_embeddings.dims() != dims {
            return Err(Error::shape(
                "server_aggregate embeddings",
                format!("{}x{}", dims.0, dims.1),
                format!(
                    "{}x{}",
                    up.item_embeddings.rows(),
                    up.item_embeddings.cols()
                ),
            ));
        }
        e.add_scaled(weight, &up.item_embeddings)?;
        if let Some(c) = &up.cifm {
            if c.dim() != d {
                return Err(Error::shape("server_aggregate cifm", d, c.dim()));
            }
            cifm_acc
                .get_or_insert_with(|| CifmParams::zeros(d))
                .axpy(1.0, c)?;
            cifm_count += 1;
        }
    }
    if cifm_count != 0 && cifm_count != uploads.len() {
        return Err(Error::invalid(
            "mixed uploads: some carry fusion parameters, some do not",
        ));
    }
    server.global_e = e;
    server.global_e.finite_or_err("aggregated embeddings")?;
    if let Some(mut acc) = cifm_acc {
        let scale = 1.0 / cifm_count as Real;
        acc.w.scale_in_place(scale);
        acc.b = acc.b.scale(scale);
        acc.gamma = acc.gamma.scale(scale);
        acc.beta = acc.beta.scale(scale);
        if !acc.is_finite() {
            return Err(Error::NonFinite("aggregated fusion parameters".into()));
        }
        server.global_cifm = acc;
    }
    server.round += 1;
    Ok(())
}

/// Uniform sample without replacement of `ceil(fraction * n)` clients.
pub fn sample_participants(
    n_clients: usize,
    fraction: Real,
    rng: &mut RngStream,
) -> Result<Vec<UserId>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("participation fraction must be in (0, 1]"));
    }
    let k = ((fraction * n_clients as Real).ceil() as usize).clamp(1, n_clients);
    Ok(rng.sample_distinct(n_clients, k))
}

/// One line of the metrics stream. Serialized field order is fixed, so a
/// rerun with the same config and seed is bitwise identical.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub hr10: Real,
    pub ndcg10: Real,
    pub mean_rec_loss: Real,
    pub mean_l1: Real,
    pub cos_univ_pos: Real,
    pub cos_univ_neg: Real,
    pub cos_fused_pos: Real,
    pub cos_fused_neg: Real,
    pub per_group: Vec<GroupReport>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    /// Metrics for every evaluated round (round 0, each `eval_every`-th
    /// round, and the final round).
    pub metrics: Vec<RoundMetrics>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub split: SplitSpec,
    pub groups: SparsityGroups,
}

impl ExperimentResult {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.metrics
            .last()
            .expect("at least the round-0 evaluation")
    }

    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }
}

/// The fusion parameters a client would score with at inference time:
/// the gate applied to the freshly distributed global parameters.
fn eval_cifm(client: &ClientState, server: &ServerState, cfg: &TrainConfig) -> Result<CifmParams> {
    if cfg.lam_active() {
        lam_fuse(&client.lam, &server.global_cifm, &client.prev_cifm)
    } else {
        Ok(server.global_cifm.clone())
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_round(
    round: usize,
    server: &ServerState,
    clients: &[ClientState],
    _ds: &InteractionDataset,
    split: &SplitSpec,
    groups: &SparsityGroups,
    cfg: &TrainConfig,
    mean_rec_loss: Real,
    mean_l1: Real,
) -> Result<RoundMetrics> {
    let mode = cfg.effective_mode();
    // per-client inference parameters, then rank candidates against them
    let eval_params: Vec<CifmParams> = clients
        .par_iter()
        .map(|c| eval_cifm(c, server, cfg))
        .collect::<Result<Vec<_>>>()?;

    let fused_row = |u: UserId, i: ItemId| -> Result<Vector> {
        fuse_item_embedding(
            mode,
            &eval_params[u],
            clients[u].sar.as_ref(),
            &server.global_e.row_vector(i),
            split.train[u].len(),
            cfg.ln_eps,
        )
    };
    let scorer =
        |u: UserId, i: ItemId| -> Result<Real> { clients[u].user_vec.dot(&fused_row(u, i)?) };
    let outcome = rank_and_score(split, scorer, cfg.eval_k)?;
    let per_group = evaluate_by_group(&outcome, groups)?;

    // cosine traces over both representation spaces
    let per_user: Vec<(Real, Real, Real, Real)> = (0..clients.len())
        .into_par_iter()
        .map(|u| -> Result<(Real, Real, Real, Real)> {
            let user_vec = &clients[u].user_vec;
            let mean_cos = |items: &[ItemId], fused: bool| -> Result<Real> {
                if items.is_empty() {
                    return Ok(0.0);
                }
                let mut acc = 0.0;
                for &i in items {
                    let v = if fused {
                        fused_row(u, i)?
                    } else {
                        server.global_e.row_vector(i)
                    };
                    acc += user_vec.cosine(&v)?;
                }
                Ok(acc / items.len() as Real)
            };
            Ok((
                mean_cos(&split.train[u], false)?,
                mean_cos(&split.eval_negatives[u], false)?,
                mean_cos(&split.train[u], true)?,
                mean_cos(&split.eval_negatives[u], true)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_user.len() as Real;
    let (mut up, mut un, mut fp, mut fneg) = (0.0, 0.0, 0.0, 0.0);
    for (a, b, c, d) in &per_user {
        up += a;
        un += b;
        fp += c;
        fneg += d;
    }

    Ok(RoundMetrics {
        round,
        hr10: outcome.hr,
        ndcg10: outcome.ndcg,
        mean_rec_loss,
        mean_l1,
        cos_univ_pos: up / n,
        cos_univ_neg: un / n,
        cos_fused_pos: fp / n,
        cos_fused_neg: fneg / n,
        per_group,
    })
}

/// Runs the full protocol: initialize embeddings through the provider,
/// then iterate distribute / local train / upload / aggregate / evaluate.
pub fn run_experiment(
    cfg: &TrainConfig,
    ds: &InteractionDataset,
    corpus: &ItemCorpus,
    provider: &dyn UniversalProvider,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if corpus.len() != ds.m_items() {
        return Err(Error::Dataset(format!(
            "corpus covers {} items, dataset has {}",
            corpus.len(),
            ds.m_items()
        )));
    }
    let d = cfg.embed_dim;
    let initial_e = if cfg.no_urm {
        random_init(ds.m_items(), d, cfg.seed)
    } else {
        if provider.embed_dim() != d {
            return Err(Error::shape("provider dim", d, provider.embed_dim()));
        }
        provider.embed(corpus)?
    };
    if initial_e.dims() != (ds.m_items(), d) {
        return Err(Error::shape(
            "initial embeddings",
            format!("{}x{}", ds.m_items(), d),
            format!("{}x{}", initial_e.rows(), initial_e.cols()),
        ));
    }
    initial_e.finite_or_err("initial embeddings")?;

    let split = leave_one_out_split(ds, &mut RngStream::tagged(cfg.seed, tags::SPLIT))?;
    let groups = group_users_by_sparsity(ds, cfg.n_groups)?;
    let mode = cfg.effective_mode();

    let mut server = ServerState {
        global_e: initial_e,
        global_cifm: CifmParams::init(d, &mut RngStream::tagged(cfg.seed, tags::SERVER_INIT)),
        round: 0,
    };

    let mut clients: Vec<ClientState> = (0..ds.n_users())
        .map(|u| {
            let mut rng = RngStream::client_stream(cfg.seed, u as u64);
            let user_vec = rng.gaussian_vector(d, 0.0, 0.1);
            ClientState {
                user_id: u,
                user_vec,
                sar: mode.uses_sar().then(SarParams::zeros),
                lam: LamParams::zeros(d),
                prev_cifm: server.global_cifm.clone(),
                rng,
            }
        })
        .collect();

    let mut participation_rng = RngStream::tagged(cfg.seed, tags::PARTICIPATION);
    let mut metrics = Vec::new();
    metrics.push(evaluate_round(
        0, &server, &clients, ds, &split, &groups, cfg, 0.0, 0.0,
    )?);

    for round in 1..=cfg.rounds {
        let participants =
            sample_participants(ds.n_users(), cfg.participation, &mut participation_rng)?;
        let is_participant = {
            let mut mask = vec![false; ds.n_users()];
            for &u in &participants {
                mask[u] = true;
            }
            mask
        };
        let payload = ServerPayload {
            global_e: &server.global_e,
            global_cifm: &server.global_cifm,
        };
        // independent client tasks over a read-only snapshot; collected in
        // client-id order so aggregation is order-free
        let results: Vec<Option<Result<(ClientUpload, ClientRoundStats)>>> = clients
            .par_iter_mut()
            .map(|state| {
                is_participant[state.user_id]
                    .then(|| client_local_round(state, &payload, ds, &split, cfg))
            })
            .collect();

        let mut uploads = Vec::with_capacity(participants.len());
        let mut loss_sum = 0.0;
        let mut l1_sum = 0.0;
        for r in results.into_iter().flatten() {
            let (upload, stats) = r?;
            loss_sum += stats.loss.rec_loss;
            l1_sum += stats.loss.l1_penalty;
            uploads.push(upload);
        }
        server_aggregate(&uploads, &mut server)?;

        let mean_rec_loss = loss_sum / uploads.len() as Real;
        let mean_l1 = l1_sum / uploads.len() as Real;
        if round % cfg.eval_every == 0 || round == cfg.rounds {
            metrics.push(evaluate_round(
                round,
                &server,
                &clients,
                ds,
                &split,
                &groups,
                cfg,
                mean_rec_loss,
                mean_l1,
            )?);
        }
    }

    Ok(ExperimentResult {
        metrics,
        server,
        clients,
        split,
        groups,
    })
}
