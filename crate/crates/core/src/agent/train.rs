//! Deep Q-learning with replay memory, ε-greedy exploration and
//! per-epoch validation-based checkpoint selection.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::policy::{epsilon_at, greedy, select_action};
use super::{Action, AgentError, NetShape, QNetwork, ReplayMemory, RmsProp, SearchState, Transition};
use crate::catalog::{ItemId, SplitAssignment};
use crate::eval::{self, Policy};
use crate::rng::{self, StreamRng};
use crate::session::{run_episode, Controller, SearchContext, SearchSession, SessionError};
use crate::simuser::{SimulatedUser, UserConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Discount factor; not given by the method description, 0.9 by default.
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Training episodes per epoch (0 = one per training target).
    pub episodes_per_epoch: usize,
    /// Gradient updates after each environment step.
    pub updates_per_step: usize,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    /// Simulated users per validation target.
    pub val_users: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 30,
            gamma: 0.9,
            eps_start: 1.0,
            eps_end: 0.1,
            batch_size: 32,
            replay_capacity: 10_000,
            episodes_per_epoch: 0,
            updates_per_step: 1,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-8,
            val_users: 1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.epochs == 0 {
            return bad("batch_size, replay_capacity and epochs must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be at least batch_size");
        }
        Ok(())
    }
}

/// One Q-learning update on a batch: targets `r + γ·max Q(s′, ·)` (just `r`
/// on terminal transitions), mean squared error on the taken action, one
/// RMSProp step. Returns the pre-update loss.
pub fn train_step(
    net: &mut QNetwork,
    opt: &mut RmsProp,
    batch: &[&Transition],
    cfg: &TrainConfig,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let live: Vec<&SearchState> = batch.iter().filter(|t| !t.terminal).map(|t| &t.next_state).collect();
    let next_q = if live.is_empty() { Vec::new() } else { net.forward_batch(&live)? };
    let mut next = next_q.iter();
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let q = next.next().expect("one row per live transition");
                t.reward + cfg.gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let samples: Vec<(&SearchState, Action, f64)> =
        batch.iter().zip(&targets).map(|(t, &y)| (&t.state, t.action, y)).collect();
    let (loss, grad) = net.loss_and_gradient(&samples)?;
    if !loss.is_finite() || grad.0.iter().any(|g| !g.is_finite()) {
        let max_q = next_q.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
        let max_target = targets.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        return Err(AgentError::NonFiniteLoss { loss, update: 0, max_q, max_target });
    }
    opt.step(net.params_mut(), &grad);
    Ok(loss)
}

/// ε-greedy learner that stores every transition and trains online.
struct Learner<'a> {
    net: QNetwork,
    opt: RmsProp,
    memory: ReplayMemory,
    cfg: &'a TrainConfig,
    explore_rng: StreamRng,
    replay_rng: StreamRng,
    step: u64,
    total_steps: u64,
    updates: u64,
    loss_sum: f64,
    loss_count: u64,
}

impl Controller for Learner<'_> {
    fn choose(&mut self, state: &SearchState, _session: &SearchSession) -> Result<Action, SessionError> {
        let eps = epsilon_at(self.step, self.total_steps, self.cfg);
        self.step += 1;
        // Skip the forward pass when the action will be random anyway.
        if eps >= 1.0 {
            return Ok(select_action(&[0.0; 3], 1.0, &mut self.explore_rng));
        }
        let q = self.net.forward(state)?;
        Ok(select_action(&q, eps, &mut self.explore_rng))
    }

    fn observe(&mut self, transition: Transition) -> Result<(), SessionError> {
        self.memory.push(transition);
        if self.memory.len() < self.cfg.batch_size {
            return Ok(());
        }
        for _ in 0..self.cfg.updates_per_step {
            let batch = self.memory.sample(self.cfg.batch_size, &mut self.replay_rng);
            let loss = train_step(&mut self.net, &mut self.opt, &batch, self.cfg).map_err(|e| match e {
                AgentError::NonFiniteLoss { loss, max_q, max_target, .. } => {
                    AgentError::NonFiniteLoss { loss, update: self.updates, max_q, max_target }
                }
                other => other,
            })?;
            self.updates += 1;
            self.loss_sum += loss;
            self.loss_count += 1;
        }
        Ok(())
    }

    fn wants_transitions(&self) -> bool {
        true
    }
}

/// Greedy controller over a network, used for validation and inference.
#[derive(Debug, Clone)]
pub struct Greedy<'a>(pub &'a QNetwork);

impl Controller for Greedy<'_> {
    fn choose(&mut self, state: &SearchState, _session: &SearchSession) -> Result<Action, SessionError> {
        Ok(greedy(&self.0.forward(state)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_successes: usize,
    pub val_auc: f64,
}

/// Validation pass: (successful searches, mean per-search AUC).
pub fn validate(
    net: &QNetwork,
    ctx: &Arc<SearchContext>,
    targets: &[ItemId],
    user_cfg: &UserConfig,
    cfg: &TrainConfig,
) -> Result<(usize, f64), SessionError> {
    let max_iter = ctx.config().max_iterations;
    let mut successes = 0;
    let mut auc_sum = 0.0;
    let mut count = 0;
    for &target in targets {
        for u in 0..cfg.val_users {
            let seed = rng::derive_seed(cfg.seed, "val-user", &[u as u64]);
            let mut user = SimulatedUser::from_config(ctx.catalog(), target, user_cfg, seed);
            let session = SearchSession::new(ctx.clone(), Some(target))?;
            let traj = run_episode(&mut Greedy(net), session, &mut user)?;
            successes += usize::from(traj.success);
            auc_sum += eval::auc(&eval::episode_curve(&traj, max_iter));
            count += 1;
        }
    }
    Ok((successes, if count > 0 { auc_sum / count as f64 } else { 0.0 }))
}

pub struct TrainOutcome {
    pub network: QNetwork,
    pub selected_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "mean_loss", "val_successes", "val_auc"]).expect("in-memory write");
        for e in &self.log {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.9}", e.mean_loss),
                e.val_successes.to_string(),
                format!("{:.9}", e.val_auc),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Trains a Q-network on the training targets, validating after each epoch
/// and keeping the epoch with the most successful validation searches
/// (ties: higher validation AUC, then the earlier epoch).
pub fn train(
    ctx: &Arc<SearchContext>,
    split: &SplitAssignment,
    user_cfg: &UserConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SessionError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(AgentError::Config("training split is empty".into()).into());
    }
    let shape = NetShape::new(ctx.state_shape());
    let net = QNetwork::new(shape, rng::derive_seed(cfg.seed, "init", &[]))?;
    let opt = RmsProp::new(net.num_params(), cfg.lr, cfg.rmsprop_rho, cfg.rmsprop_eps);
    let per_epoch = if cfg.episodes_per_epoch == 0 { split.train.len() } else { cfg.episodes_per_epoch };
    let max_iter = ctx.config().max_iterations as u64;
    let mut learner = Learner {
        net,
        opt,
        memory: ReplayMemory::new(cfg.replay_capacity),
        cfg,
        explore_rng: rng::stream(cfg.seed, "explore", &[]),
        replay_rng: rng::stream(cfg.seed, "replay", &[]),
        step: 0,
        total_steps: cfg.epochs as u64 * per_epoch as u64 * max_iter,
        updates: 0,
        loss_sum: 0.0,
        loss_count: 0,
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, usize, QNetwork)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut rng::stream(cfg.seed, "epoch-order", &[epoch as u64]));
        learner.loss_sum = 0.0;
        learner.loss_count = 0;
        for ep in 0..per_epoch {
            let target = order[ep % order.len()];
            let seed = rng::derive_seed(cfg.seed, "train-user", &[epoch as u64, ep as u64]);
            let mut user = SimulatedUser::from_config(ctx.catalog(), target, user_cfg, seed);
            let session = SearchSession::new(ctx.clone(), Some(target))?;
            run_episode(&mut learner, session, &mut user)?;
        }
        let mean_loss = if learner.loss_count > 0 { learner.loss_sum / learner.loss_count as f64 } else { 0.0 };
        let (val_successes, val_auc) = validate(&learner.net, ctx, &split.val, user_cfg, cfg)?;
        info!(epoch, mean_loss, val_successes, val_auc, "epoch finished");
        log.push(EpochLog { epoch, mean_loss, val_successes, val_auc });
        let better = match &best {
            None => true,
            Some((s, a, _, _)) => val_successes > *s || (val_successes == *s && val_auc > *a),
        };
        if better {
            best = Some((val_successes, val_auc, epoch, learner.net.clone()));
        }
    }
    let (_, _, selected_epoch, network) = best.expect("at least one epoch");
    Ok(TrainOutcome { network, selected_epoch, log })
}

pub const CHECKPOINT_FORMAT: &str = "mixsearch-qnet";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: NetShape,
    pub selected_epoch: Option<usize>,
    /// Echo of the run configuration (free-form).
    pub config: serde_json::Value,
    pub param_hash: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(net: &QNetwork, selected_epoch: Option<usize>, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            shape: *net.shape(),
            selected_epoch,
            config,
            param_hash: net.param_hash(),
            params: net.params().to_vec(),
        }
    }

    pub fn network(&self) -> Result<QNetwork, AgentError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let net = QNetwork::from_params(self.shape, self.params.clone())?;
        if net.param_hash() != self.param_hash {
            return Err(AgentError::Checkpoint("parameter hash mismatch".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}

/// Convenience for building a greedy RL policy from a checkpoint.
pub fn policy_from_checkpoint(cp: &Checkpoint) -> Result<Policy, AgentError> {
    Ok(Policy::Rl(Arc::new(cp.network()?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{compute_proxies, StateShape};
    use crate::catalog::generate_synthetic;

    fn transition(reward: f64, terminal: bool) -> Transition {
        let c = generate_synthetic(20, 4, 2, 2, 3).unwrap();
        let shape = StateShape { history: 3, top_k: 5, d: 4 };
        let p = compute_proxies(&c, 0, 5).unwrap();
        let s = SearchState::encode(&c, shape, &[vec![1, 2, 3, 4, 5]], &p, &[]);
        let s2 = SearchState::encode(&c, shape, &[vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10]], &p, &[Action::Question]);
        Transition { state: s, next_state: s2, action: Action::Question, reward, terminal }
    }

    fn net_shape() -> NetShape {
        NetShape::new(StateShape { history: 3, top_k: 5, d: 4 })
    }

    #[test]
    fn zero_net_single_transition_loss_is_one() {
        let cfg = TrainConfig { gamma: 0.0, ..TrainConfig::default() };
        let mut net = QNetwork::zeros(net_shape()).unwrap();
        let mut opt = RmsProp::new(net.num_params(), cfg.lr, 0.9, 1e-8);
        let t = transition(1.0, false);
        assert_eq!(train_step(&mut net, &mut opt, &[&t], &cfg).unwrap(), 1.0);
        assert!(train_step(&mut net, &mut opt, &[], &cfg).is_err());
    }

    #[test]
    fn terminal_transitions_ignore_next_state() {
        let cfg = TrainConfig { gamma: 0.9, ..TrainConfig::default() };
        let net = QNetwork::new(net_shape(), 3).unwrap();
        let t = transition(1.0, true);
        let q = net.forward(&t.state).unwrap()[Action::Question.index()];
        let mut a = net.clone();
        let mut opt = RmsProp::new(a.num_params(), cfg.lr, 0.9, 1e-8);
        let loss = train_step(&mut a, &mut opt, &[&t], &cfg).unwrap();
        assert!((loss - (q - 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn repeated_updates_drive_loss_down() {
        let cfg = TrainConfig { gamma: 0.0, lr: 1e-3, ..TrainConfig::default() };
        let mut net = QNetwork::new(net_shape(), 9).unwrap();
        let mut opt = RmsProp::new(net.num_params(), cfg.lr, 0.9, 1e-8);
        let t = transition(1.0, false);
        let mut last = f64::INFINITY;
        let mut converged = false;
        for _ in 0..5000 {
            last = train_step(&mut net, &mut opt, &[&t], &cfg).unwrap();
            if last < 1e-3 {
                converged = true;
                break;
            }
        }
        assert!(converged, "final loss {last}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork::new(net_shape(), 4).unwrap();
        let cp = Checkpoint::new(&net, Some(2), serde_json::json!({"lr": 1e-5}));
        let back = Checkpoint::from_json(&cp.to_json()).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.network().unwrap(), net);
        let mut tampered = back.clone();
        tampered.params[0] += 1.0;
        assert!(tampered.network().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }
}
