use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Action, AgentError};
use crate::catalog::{Catalog, Direction, ItemId};

/// Tensor dimensions of the agent's observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateShape {
    /// Iterations of top-image and action history (H).
    pub history: usize,
    /// Top images encoded per iteration, and proxies per side (K).
    pub top_k: usize,
    /// Feature dimension (d).
    pub d: usize,
}

impl StateShape {
    pub fn top_rows(&self) -> usize {
        self.history * self.top_k
    }

    pub fn action_len(&self) -> usize {
        self.history * Action::ALL.len()
    }
}

/// Positive (nearest) and negative (furthest) proxies of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Proxies {
    pub pos: Vec<ItemId>,
    pub neg: Vec<ItemId>,
    pos_features: Arc<[f64]>,
    neg_features: Arc<[f64]>,
}

impl Proxies {
    pub fn pos_features(&self) -> &Arc<[f64]> {
        &self.pos_features
    }

    pub fn neg_features(&self) -> &Arc<[f64]> {
        &self.neg_features
    }
}

fn stack_features(catalog: &Catalog, ids: &[ItemId]) -> Arc<[f64]> {
    ids.iter().flat_map(|&i| catalog.features(i).iter().copied()).collect()
}

/// The `k` nearest and `k` furthest feature-space neighbours of `anchor`.
pub fn compute_proxies(catalog: &Catalog, anchor: ItemId, k: usize) -> Result<Proxies, AgentError> {
    let needed = 2 * k + 1;
    if catalog.len() < needed {
        return Err(AgentError::TooFewItems(catalog.len(), needed));
    }
    let pos = catalog.knn(anchor, k, Direction::Nearest).map_err(|e| AgentError::Shape(e.to_string()))?;
    let neg = catalog.knn(anchor, k, Direction::Furthest).map_err(|e| AgentError::Shape(e.to_string()))?;
    Ok(Proxies {
        pos_features: stack_features(catalog, &pos),
        neg_features: stack_features(catalog, &neg),
        pos,
        neg,
    })
}

/// Fixed-shape observation: top-image history (H·K × d, oldest first),
/// proxy maps (K × d each) and one-hot action history (H × 3).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub shape: StateShape,
    pub top_hist: Vec<f64>,
    pub pos_prox: Arc<[f64]>,
    pub neg_prox: Arc<[f64]>,
    pub action_hist: Vec<f64>,
}

impl SearchState {
    /// `top_history` holds ranked id lists per iteration, oldest first; only
    /// the last H are used and missing rows are zero. `actions` likewise.
    pub fn encode(
        catalog: &Catalog,
        shape: StateShape,
        top_history: &[Vec<ItemId>],
        proxies: &Proxies,
        actions: &[Action],
    ) -> Self {
        let (h, k, d) = (shape.history, shape.top_k, shape.d);
        let mut top_hist = vec![0.0; h * k * d];
        let recent = &top_history[top_history.len().saturating_sub(h)..];
        let offset = h - recent.len();
        for (slot, tops) in recent.iter().enumerate() {
            for (j, &id) in tops.iter().take(k).enumerate() {
                let row = (offset + slot) * k + j;
                top_hist[row * d..(row + 1) * d].copy_from_slice(catalog.features(id));
            }
        }
        let mut action_hist = vec![0.0; shape.action_len()];
        let recent = &actions[actions.len().saturating_sub(h)..];
        let offset = h - recent.len();
        for (slot, a) in recent.iter().enumerate() {
            action_hist[(offset + slot) * 3 + a.index()] = 1.0;
        }
        Self {
            shape,
            top_hist,
            pos_prox: Arc::clone(proxies.pos_features()),
            neg_prox: Arc::clone(proxies.neg_features()),
            action_hist,
        }
    }

    pub fn check_shape(&self, expected: &StateShape) -> Result<(), AgentError> {
        let ok = self.shape == *expected
            && self.top_hist.len() == expected.top_rows() * expected.d
            && self.pos_prox.len() == expected.top_k * expected.d
            && self.neg_prox.len() == expected.top_k * expected.d
            && self.action_hist.len() == expected.action_len();
        if ok {
            Ok(())
        } else {
            Err(AgentError::Shape(format!("state {:?} does not match network {:?}", self.shape, expected)))
        }
    }
}
