use rand::Rng;

use super::{Action, TrainConfig};

/// ε-greedy choice over Q-values; greedy ties go to the lowest action index.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64; 3], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Action::ALL[rng.random_range(0..3)];
    }
    greedy(q_values)
}

pub(crate) fn greedy(q_values: &[f64; 3]) -> Action {
    let mut best = 0;
    for i in 1..3 {
        if q_values[i] > q_values[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Exploration rate, linear from `eps_start` at step 0 to `eps_end` at
/// `total_steps` (and beyond).
pub fn epsilon_at(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return cfg.eps_end;
    }
    let t = step as f64 / total_steps as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * t
}
