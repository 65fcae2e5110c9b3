//! Fixed-policy baselines and the percentile-rank evaluation harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Action, QNetwork, SearchState};
use crate::catalog::ItemId;
use crate::config::EvalConfig;
use crate::rng;
use crate::session::{run_episode, Controller, SearchContext, SearchSession, SessionError, Trajectory};
use crate::simuser::{SimulatedUser, UserConfig};
use crate::Error;

/// Who decides the interaction at each iteration.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Greedy action from a trained Q-network.
    Rl(Arc<QNetwork>),
    /// Free-form feedback every iteration.
    Ws,
    /// Pivot questions every iteration.
    Prr,
    /// A sketch first, pivot questions afterwards.
    SkPrr,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Rl(_) => "RL",
            Policy::Ws => "WS",
            Policy::Prr => "PRR",
            Policy::SkPrr => "SK_PRR",
        }
    }

    pub fn choose_for(&self, state: &SearchState, iteration: usize) -> Result<Action, SessionError> {
        Ok(match self {
            Policy::Rl(net) => crate::agent::select_action(&net.forward(state)?, 0.0, &mut NoRng),
            Policy::Ws => Action::FreeForm,
            Policy::Prr => Action::Question,
            Policy::SkPrr if iteration == 0 => Action::Sketch,
            Policy::SkPrr => Action::Question,
        })
    }
}

impl Controller for Policy {
    fn choose(&mut self, state: &SearchState, session: &SearchSession) -> Result<Action, SessionError> {
        self.choose_for(state, session.iteration())
    }
}

/// Baseline names accepted on the command line and over HTTP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rl,
    Ws,
    Prr,
    SkPrr,
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rl" => Ok(PolicyKind::Rl),
            "ws" => Ok(PolicyKind::Ws),
            "prr" => Ok(PolicyKind::Prr),
            "sk_prr" | "sk-prr" | "skprr" => Ok(PolicyKind::SkPrr),
            other => Err(format!("unknown policy `{other}` (expected rl, ws, prr or sk_prr)")),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Rl => "rl",
            PolicyKind::Ws => "ws",
            PolicyKind::Prr => "prr",
            PolicyKind::SkPrr => "sk_prr",
        })
    }
}

// Greedy selection never draws; this keeps `select_action`'s signature.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("greedy selection draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("greedy selection draws no randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("greedy selection draws no randomness")
    }
}

/// Percentile rank after each of the `max_iterations` iterations. A search
/// that stopped early keeps its final rank for the remaining iterations.
pub fn episode_curve(traj: &Trajectory, max_iterations: usize) -> Vec<f64> {
    let mut curve = Vec::with_capacity(max_iterations);
    let mut last = traj.initial_percentile_rank.unwrap_or(0.0);
    let mut records = traj.records();
    for _ in 0..max_iterations {
        if let Some(r) = records.next() {
            last = r.percentile_rank.unwrap_or(last);
        }
        curve.push(last);
    }
    curve
}

/// Area under a percentile-rank curve: the mean over iterations.
pub fn auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().sum::<f64>() / curve.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub searches: usize,
    pub successes: usize,
    /// Mean percentile rank before any feedback.
    pub initial_rank: f64,
    /// Mean percentile rank after iterations 1..=max.
    pub curve: Vec<f64>,
    pub auc: f64,
    /// Per iteration, how often each action (free-form, question, sketch)
    /// was carried out among searches still running.
    pub action_counts: Vec<[usize; 3]>,
}

impl EvalReport {
    pub fn active_at(&self, iteration: usize) -> usize {
        self.action_counts[iteration].iter().sum()
    }

    /// Share of `action` among all actions taken in the given iterations
    /// (0-based indices).
    pub fn action_share(&self, action: Action, iterations: std::ops::Range<usize>) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for it in iterations {
            hit += self.action_counts[it][action.index()];
            total += self.active_at(it);
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

struct EpisodeSummary {
    initial: f64,
    curve: Vec<f64>,
    actions: Vec<Action>,
    success: bool,
}

/// Runs `policy` against `n_users` simulated users per target and
/// aggregates curves, AUC and action counts. Deterministic for a fixed
/// seed; searches run in parallel but are reduced in a fixed order.
pub fn evaluate(
    policy: &Policy,
    ctx: &Arc<SearchContext>,
    targets: &[ItemId],
    user_cfg: &UserConfig,
    eval_cfg: &EvalConfig,
) -> Result<EvalReport, Error> {
    if targets.is_empty() {
        return Err(Error::Config("evaluation needs at least one target".into()));
    }
    let max_iter = ctx.config().max_iterations;
    let jobs: Vec<(ItemId, usize)> =
        targets.iter().flat_map(|&t| (0..eval_cfg.n_users).map(move |u| (t, u))).collect();
    let summaries: Vec<EpisodeSummary> = jobs
        .par_iter()
        .map(|&(target, u)| -> Result<EpisodeSummary, SessionError> {
            let seed = rng::derive_seed(eval_cfg.seed, "eval-user", &[u as u64]);
            let mut user = SimulatedUser::from_config(ctx.catalog(), target, user_cfg, seed);
            let session = SearchSession::new(ctx.clone(), Some(target))?;
            let mut controller = policy.clone();
            let traj = run_episode(&mut controller, session, &mut user)?;
            Ok(EpisodeSummary {
                initial: traj.initial_percentile_rank.unwrap_or(0.0),
                curve: episode_curve(&traj, max_iter),
                actions: traj.records().map(|r| r.action).collect(),
                success: traj.success,
            })
        })
        .collect::<Result<_, _>>()?;

    let n = summaries.len() as f64;
    let mut curve = vec![0.0; max_iter];
    let mut initial = 0.0;
    let mut action_counts = vec![[0usize; 3]; max_iter];
    let mut successes = 0;
    for s in &summaries {
        initial += s.initial;
        for (c, v) in curve.iter_mut().zip(&s.curve) {
            *c += v;
        }
        for (it, a) in s.actions.iter().enumerate() {
            action_counts[it][a.index()] += 1;
        }
        successes += usize::from(s.success);
    }
    curve.iter_mut().for_each(|c| *c /= n);
    Ok(EvalReport {
        policy: policy.name().to_string(),
        searches: summaries.len(),
        successes,
        initial_rank: initial / n,
        auc: auc(&curve),
        curve,
        action_counts,
    })
}

/// Reports sorted by AUC (descending), ties by policy name.
pub fn compare(reports: &[EvalReport]) -> Vec<&EvalReport> {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.policy.cmp(&b.policy)));
    sorted
}

fn to_csv<I: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: I) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// `policy,auc` in [`compare`] order.
pub fn auc_csv(reports: &[EvalReport]) -> String {
    to_csv(&["policy", "auc"], compare(reports).into_iter().map(|r| vec![r.policy.clone(), r.auc.to_string()]))
}

/// `policy,iteration,mean_pr`; iteration 0 is the ranking before feedback.
pub fn curves_csv(reports: &[EvalReport]) -> String {
    to_csv(
        &["policy", "iteration", "mean_pr"],
        compare(reports).into_iter().flat_map(|r| {
            std::iter::once(vec![r.policy.clone(), "0".into(), r.initial_rank.to_string()]).chain(
                r.curve.iter().enumerate().map(|(i, v)| vec![r.policy.clone(), (i + 1).to_string(), v.to_string()]),
            )
        }),
    )
}

/// `policy,iteration,action,fraction` over searches still running.
pub fn actions_csv(reports: &[EvalReport]) -> String {
    to_csv(
        &["policy", "iteration", "action", "fraction"],
        compare(reports).into_iter().flat_map(|r| {
            (0..r.action_counts.len()).flat_map(move |it| {
                let active = r.active_at(it);
                Action::ALL.iter().map(move |a| {
                    let frac = if active == 0 { 0.0 } else { r.action_counts[it][a.index()] as f64 / active as f64 };
                    vec![r.policy.clone(), (it + 1).to_string(), a.name().to_string(), frac.to_string()]
                })
            })
        }),
    )
}

fn parse_err(e: impl fmt::Display) -> Error {
    Error::Config(format!("malformed CSV: {e}"))
}

pub fn parse_auc_csv(text: &str) -> Result<Vec<(String, f64)>, Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(parse_err)?;
            let auc = rec.get(1).ok_or_else(|| parse_err("missing auc"))?.parse().map_err(parse_err)?;
            Ok((rec.get(0).unwrap_or_default().to_string(), auc))
        })
        .collect()
}

/// `(policy, iteration, action) → fraction`.
pub fn parse_actions_csv(text: &str) -> Result<BTreeMap<(String, usize, String), f64>, Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(parse_err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(format!("missing column {i}")));
        out.insert(
            (field(0)?.to_string(), field(1)?.parse().map_err(parse_err)?, field(2)?.to_string()),
            field(3)?.parse().map_err(parse_err)?,
        );
    }
    Ok(out)
}
