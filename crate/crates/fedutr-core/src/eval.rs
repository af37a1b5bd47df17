//! Ranking evaluation: HR@K and NDCG@K over leave-one-out candidates,
//! per-sparsity-group reports, cosine-similarity traces, and the noise and
//! hyper-parameter sweep drivers.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{InteractionDataset, ItemCorpus, ItemId, SparsityGroups, SplitSpec, UserId};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, RoundMetrics, TrainConfig};
use crate::urm::ProviderConfig;
use crate::Real;

/// Per-user ranks of the held-out positive among its candidates plus the
/// aggregate metrics.
#[derive(Debug, Clone)]
pub struct RankingOutcome {
    pub k: usize,
    /// 1-based rank per user; ties broken toward the lower item id.
    pub ranks: Vec<usize>,
    pub hr: Real,
    pub ndcg: Real,
}

fn ndcg_contribution(rank: usize, k: usize) -> Real {
    if rank <= k {
        1.0 / ((rank + 1) as Real).log2()
    } else {
        0.0
    }
}

/// Ranks each user's held-out positive against that user's sampled
/// negatives under the given scorer.
pub fn rank_and_score<F>(split: &SplitSpec, scorer: F, k: usize) -> Result<RankingOutcome>
where
    F: Fn(UserId, ItemId) -> Result<Real> + Sync,
{
    let n_users = split.test.len();
    let ranks: Vec<usize> = (0..n_users)
        .into_par_iter()
        .map(|u| -> Result<usize> {
            let positive = split.test[u];
            let negatives = &split.eval_negatives[u];
            if negatives.is_empty() {
                return Err(Error::Dataset(format!(
                    "user {u} has no ranking candidates"
                )));
            }
            let pos_score = scorer(u, positive)?;
            let mut rank = 1usize;
            for &cand in negatives {
                let s = scorer(u, cand)?;
                if s > pos_score || (s == pos_score && cand < positive) {
                    rank += 1;
                }
            }
            Ok(rank)
        })
        .collect::<Result<Vec<_>>>()?;

    let hits = ranks.iter().filter(|&&r| r <= k).count();
    let ndcg_sum: Real = ranks.iter().map(|&r| ndcg_contribution(r, k)).sum();
    Ok(RankingOutcome {
        k,
        hr: hits as Real / n_users as Real,
        ndcg: ndcg_sum / n_users as Real,
        ranks,
    })
}

/// Per-group ranking metrics; groups must partition the evaluated users.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GroupReport {
    pub group: usize,
    pub tau: Real,
    pub hr10: Real,
    pub ndcg10: Real,
    pub n_users: usize,
}

impl GroupReport {
    pub fn tau_label(&self) -> String {
        format!("τ={:.2}%", self.tau * 100.0)
    }
}

pub fn evaluate_by_group(
    outcome: &RankingOutcome,
    groups: &SparsityGroups,
) -> Result<Vec<GroupReport>> {
    let mut reports = Vec::with_capacity(groups.groups.len());
    for (g, info) in groups.groups.iter().enumerate() {
        if info.users.is_empty() {
            return Err(Error::Dataset(format!("sparsity group {g} is empty")));
        }
        let mut hits = 0usize;
        let mut ndcg = 0.0;
        for &u in &info.users {
            let rank = *outcome.ranks.get(u).ok_or_else(|| {
                Error::Dataset(format!("group {g} references unevaluated user {u}"))
            })?;
            if rank <= outcome.k {
                hits += 1;
            }
            ndcg += ndcg_contribution(rank, outcome.k);
        }
        reports.push(GroupReport {
            group: g + 1,
            tau: info.tau,
            hr10: hits as Real / info.users.len() as Real,
            ndcg10: ndcg / info.users.len() as Real,
            n_users: info.users.len(),
        });
    }
    Ok(reports)
}

/// Expected HR@K of a uniformly random scorer over `n_candidates`, plus a
/// `sigmas`-standard-error band over `n_users` evaluations.
pub fn null_model_bound(k: usize, n_candidates: usize, n_users: usize, sigmas: Real) -> Real {
    let p = k as Real / n_candidates as Real;
    p + sigmas * (p * (1.0 - p) / n_users as Real).sqrt()
}

/// Per-round mean user/item cosine similarities in both representation
/// spaces, extracted from a metrics stream.
#[derive(Debug, Clone, Default)]
pub struct CosineTrace {
    pub rounds: Vec<usize>,
    pub univ_interacted: Vec<Real>,
    pub univ_non_interacted: Vec<Real>,
    pub fused_interacted: Vec<Real>,
    pub fused_non_interacted: Vec<Real>,
}

pub fn cosine_trace(metrics: &[RoundMetrics]) -> CosineTrace {
    let mut trace = CosineTrace::default();
    for m in metrics {
        trace.rounds.push(m.round);
        trace.univ_interacted.push(m.cos_univ_pos);
        trace.univ_non_interacted.push(m.cos_univ_neg);
        trace.fused_interacted.push(m.cos_fused_pos);
        trace.fused_non_interacted.push(m.cos_fused_neg);
    }
    trace
}

// ---------------------------------------------------------------------------
// sweep drivers

#[derive(Debug, Clone, Serialize)]
pub struct RetentionRow {
    pub delta: Real,
    pub hr10: Real,
    pub ndcg10: Real,
    pub hr_retention: Real,
    pub ndcg_retention: Real,
}

/// Runs the experiment per noise scale and reports metric retention
/// relative to the noiseless run.
pub fn ldp_sweep(
    cfg: &TrainConfig,
    ds: &InteractionDataset,
    corpus: &ItemCorpus,
    provider_cfg: &ProviderConfig,
    deltas: &[Real],
) -> Result<Vec<RetentionRow>> {
    let provider = provider_cfg.build()?;
    let run_at = |delta: Real| -> Result<(Real, Real)> {
        let mut c = cfg.clone();
        c.ldp_scale = delta;
        let result = run_experiment(&c, ds, corpus, provider.as_ref())?;
        let last = result.final_metrics();
        Ok((last.hr10, last.ndcg10))
    };
    let (base_hr, base_ndcg) = run_at(0.0)?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let (hr, ndcg) = if delta == 0.0 {
            (base_hr, base_ndcg)
        } else {
            run_at(delta)?
        };
        rows.push(RetentionRow {
            delta,
            hr10: hr,
            ndcg10: ndcg,
            hr_retention: if base_hr > 0.0 { hr / base_hr } else { 0.0 },
            ndcg_retention: if base_ndcg > 0.0 { ndcg / base_ndcg } else { 0.0 },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    EmbedDim,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "embed_dim" => Ok(SweepAxis::EmbedDim),
            other => Err(Error::invalid(format!("unknown sweep axis {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::EmbedDim => "embed_dim",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: Real,
    pub hr10: Real,
    pub ndcg10: Real,
}

/// Grid runs over a single hyper-parameter axis. For the embedding-size axis
/// the provider is rebuilt at each width.
pub fn hyperparam_sweep(
    cfg: &TrainConfig,
    ds: &InteractionDataset,
    corpus: &ItemCorpus,
    provider_cfg: &ProviderConfig,
    axis: SweepAxis,
    values: &[Real],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = cfg.clone();
        let mut p = provider_cfg.clone();
        match axis {
            SweepAxis::Lambda => c.lambda_l1 = value,
            SweepAxis::EmbedDim => {
                let d = value as usize;
                if d == 0 || (value - d as Real).abs() > 0.0 {
                    return Err(Error::invalid(format!(
                        "embed_dim sweep needs positive integers, got {value}"
                    )));
                }
                c.embed_dim = d;
                p.dim = d;
            }
        }
        let provider = p.build()?;
        let result = run_experiment(&c, ds, corpus, provider.as_ref())?;
        let last = result.final_metrics();
        rows.push(SweepRow {
            value,
            hr10: last.hr10,
            ndcg10: last.ndcg10,
        });
    }
    Ok(rows)
}

pub fn retention_csv(rows: &[RetentionRow]) -> String {
    let mut out = String::from("delta,hr10,ndcg10,hr_retention,ndcg_retention\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.delta, r.hr10, r.ndcg10, r.hr_retention, r.ndcg_retention
        ));
    }
    out
}

pub fn sweep_csv(axis_name: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{axis_name},hr10,ndcg10\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.value, r.hr10, r.ndcg10));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupInfo;

    fn split_with(test: Vec<ItemId>, negatives: Vec<Vec<ItemId>>) -> SplitSpec {
        SplitSpec {
            train: vec![Vec::new(); test.len()],
            test,
            eval_negatives: negatives,
        }
    }

    #[test]
    fn rank_one_contributes_full_ndcg() {
        // positive item 0 scores highest among 3 candidates
        let split = split_with(vec![0], vec![vec![1, 2]]);
        let scorer = |_u: UserId, i: ItemId| Ok(-(i as Real));
        let out = rank_and_score(&split, scorer, 10).unwrap();
        assert_eq!(out.ranks, vec![1]);
        assert_eq!(out.hr, 1.0);
        assert!((out.ndcg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_two_contribution_closed_form() {
        let split = split_with(vec![0], vec![vec![1, 2]]);
        // item 1 outscores the positive
        let scorer = |_u: UserId, i: ItemId| Ok(if i == 1 { 2.0 } else { 0.0 });
        let out = rank_and_score(&split, scorer, 10).unwrap();
        assert_eq!(out.ranks, vec![2]);
        assert!((out.ndcg - 1.0 / 3.0_f64.log2()).abs() < 1e-12);
        assert!((out.ndcg - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn rank_beyond_k_contributes_nothing() {
        let negs: Vec<ItemId> = (1..=99).collect();
        let split = split_with(vec![0], vec![negs]);
        // positive scores below exactly 10 negatives -> rank 11
        let scorer = |_u: UserId, i: ItemId| {
            Ok(if i == 0 {
                0.5
            } else if i <= 10 {
                1.0
            } else {
                0.0
            })
        };
        let out = rank_and_score(&split, scorer, 10).unwrap();
        assert_eq!(out.ranks, vec![11]);
        assert_eq!(out.hr, 0.0);
        assert_eq!(out.ndcg, 0.0);
    }

    #[test]
    fn ties_break_toward_lower_item_id() {
        let split = split_with(vec![5], vec![vec![2, 9]]);
        let scorer = |_u: UserId, _i: ItemId| Ok(1.0);
        let out = rank_and_score(&split, scorer, 10).unwrap();
        // item 2 ties and has the lower id -> outranks positive 5; item 9 does not
        assert_eq!(out.ranks, vec![2]);
    }

    #[test]
    fn missing_candidates_is_an_error() {
        let split = split_with(vec![0], vec![vec![]]);
        assert!(rank_and_score(&split, |_, _| Ok(0.0), 10).is_err());
    }

    fn groups_of(user_lists: Vec<Vec<UserId>>) -> SparsityGroups {
        let n: usize = user_lists.iter().map(|g| g.len()).sum();
        let mut assignment = vec![0; n];
        let groups = user_lists
            .into_iter()
            .enumerate()
            .map(|(g, users)| {
                for &u in &users {
                    assignment[u] = g;
                }
                GroupInfo {
                    users,
                    tau: 0.9,
                    mean_interactions: 1.0,
                }
            })
            .collect();
        SparsityGroups { assignment, groups }
    }

    fn rank_outcome_from(ranks: Vec<usize>, k: usize) -> RankingOutcome {
        let hr = ranks.iter().filter(|&&r| r <= k).count() as Real / ranks.len() as Real;
        let ndcg =
            ranks.iter().map(|&r| ndcg_contribution(r, k)).sum::<Real>() / ranks.len() as Real;
        RankingOutcome { k, ranks, hr, ndcg }
    }

    #[test]
    fn single_group_matches_overall_metric() {
        let outcome = rank_outcome_from(vec![1, 11, 3, 2], 10);
        let groups = groups_of(vec![vec![0, 1, 2, 3]]);
        let reports = evaluate_by_group(&outcome, &groups).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].hr10, outcome.hr);
        assert_eq!(reports[0].n_users, 4);
    }

    #[test]
    fn user_weighted_group_mean_equals_overall() {
        let outcome = rank_outcome_from(vec![1, 4, 12, 2, 99, 7, 1, 3], 10);
        let groups = groups_of(vec![vec![0, 3, 5], vec![1, 6], vec![2, 4, 7]]);
        let reports = evaluate_by_group(&outcome, &groups).unwrap();
        let total_users: usize = reports.iter().map(|r| r.n_users).sum();
        let weighted_hr: Real = reports
            .iter()
            .map(|r| r.hr10 * r.n_users as Real)
            .sum::<Real>()
            / total_users as Real;
        let weighted_ndcg: Real = reports
            .iter()
            .map(|r| r.ndcg10 * r.n_users as Real)
            .sum::<Real>()
            / total_users as Real;
        assert!((weighted_hr - outcome.hr).abs() < 1e-12);
        assert!((weighted_ndcg - outcome.ndcg).abs() < 1e-12);
    }

    #[test]
    fn positive_ndcg_implies_positive_hr() {
        for ranks in [vec![11, 12, 13], vec![10, 50, 100], vec![1, 1, 1]] {
            let o = rank_outcome_from(ranks, 10);
            if o.ndcg > 0.0 {
                assert!(o.hr > 0.0);
            }
            assert!((0.0..=1.0).contains(&o.hr));
            assert!((0.0..=1.0).contains(&o.ndcg));
        }
    }

    #[test]
    fn null_model_bound_for_hundred_candidates() {
        let b = null_model_bound(10, 100, 1000, 3.0);
        assert!((b - (0.1 + 3.0 * (0.09_f64 / 1000.0).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn group_label_format() {
        let r = GroupReport {
            group: 1,
            tau: 0.8928,
            hr10: 0.0,
            ndcg10: 0.0,
            n_users: 1,
        };
        assert_eq!(r.tau_label(), "τ=89.28%");
    }

    #[test]
    fn csv_shapes() {
        let rows = vec![RetentionRow {
            delta: 0.0,
            hr10: 0.5,
            ndcg10: 0.3,
            hr_retention: 1.0,
            ndcg_retention: 1.0,
        }];
        let csv = retention_csv(&rows);
        assert!(csv.starts_with("delta,"));
        assert_eq!(csv.lines().count(), 2);
        let s = sweep_csv("lambda", &[]);
        assert_eq!(s, "lambda,hr10,ndcg10\n");
    }
}
