//! Feedback likelihoods, multiplicative (log-domain) relevance and ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{squared_distance, Catalog, Item, ItemId};

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("attribute index {attr} out of range (m = {m})")]
    BadAttribute { attr: usize, m: usize },
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error("sketch embedding has length {found}, expected {expected}")]
    SketchDimension { found: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    More,
    Less,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackConstraint {
    AttributeCompare { attr: usize, ref_id: ItemId, polarity: Polarity },
    Sketch { embedding: Vec<f64> },
}

impl FeedbackConstraint {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), RelevanceError> {
        match self {
            FeedbackConstraint::AttributeCompare { attr, ref_id, .. } => {
                if *attr >= catalog.m() {
                    return Err(RelevanceError::BadAttribute { attr: *attr, m: catalog.m() });
                }
                if *ref_id >= catalog.len() {
                    return Err(RelevanceError::UnknownItem(*ref_id));
                }
                Ok(())
            }
            FeedbackConstraint::Sketch { embedding } => {
                if embedding.len() != catalog.d() {
                    return Err(RelevanceError::SketchDimension {
                        found: embedding.len(),
                        expected: catalog.d(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Likelihood shape parameters. Scales are per attribute so that catalogs
/// with differently scaled attributes are treated uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams {
    pub sigma_more: Vec<f64>,
    pub sigma_eq: Vec<f64>,
    pub tau_sketch: f64,
    pub floor: f64,
}

impl LikelihoodParams {
    /// Broadcasts scalar scales over `m` attributes.
    pub fn uniform(m: usize, sigma_more: f64, sigma_eq: f64, tau_sketch: f64, floor: f64) -> Self {
        Self { sigma_more: vec![sigma_more; m], sigma_eq: vec![sigma_eq; m], tau_sketch, floor }
    }

    /// Scales relative to the catalog: attribute widths are multiples of each
    /// attribute's standard deviation, the sketch width a multiple of the
    /// RMS feature spread times √d.
    pub fn from_catalog(
        catalog: &Catalog,
        sigma_more_factor: f64,
        sigma_eq_factor: f64,
        tau_sketch_factor: f64,
        floor: f64,
    ) -> Self {
        let std = catalog.attr_std();
        let positive = |s: f64| if s > 0.0 { s } else { 1.0 };
        let spread = catalog.feature_scale() * (catalog.d() as f64).sqrt();
        Self {
            sigma_more: std.iter().map(|&s| sigma_more_factor * positive(s)).collect(),
            sigma_eq: std.iter().map(|&s| sigma_eq_factor * positive(s)).collect(),
            tau_sketch: tau_sketch_factor * positive(spread),
            floor,
        }
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.floor, 1.0)
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that an item satisfies a comparison with a reference score.
pub fn compare_likelihood(delta: f64, polarity: Polarity, attr: usize, p: &LikelihoodParams) -> f64 {
    let raw = match polarity {
        Polarity::More => logistic(delta / p.sigma_more[attr]),
        Polarity::Less => logistic(-delta / p.sigma_more[attr]),
        Polarity::Equal => {
            let s = p.sigma_eq[attr];
            (-(delta * delta) / (2.0 * s * s)).exp()
        }
    };
    p.clamp(raw)
}

pub fn constraint_likelihood(
    item: &Item,
    reference: &Item,
    attr: usize,
    polarity: Polarity,
    p: &LikelihoodParams,
) -> f64 {
    compare_likelihood(item.attrs[attr] - reference.attrs[attr], polarity, attr, p)
}

/// Gaussian-kernel similarity between an item and a sketch embedding.
pub fn sketch_likelihood(item: &Item, embedding: &[f64], p: &LikelihoodParams) -> Result<f64, RelevanceError> {
    if embedding.len() != item.features.len() {
        return Err(RelevanceError::SketchDimension {
            found: embedding.len(),
            expected: item.features.len(),
        });
    }
    let d2 = squared_distance(&item.features, embedding);
    Ok(p.clamp((-d2 / (2.0 * p.tau_sketch * p.tau_sketch)).exp()))
}

/// Likelihood of item `i` under constraint `c`; the constraint must be valid.
pub fn likelihood(catalog: &Catalog, i: ItemId, c: &FeedbackConstraint, p: &LikelihoodParams) -> f64 {
    let item = &catalog.items()[i];
    match c {
        FeedbackConstraint::AttributeCompare { attr, ref_id, polarity } => {
            constraint_likelihood(item, &catalog.items()[*ref_id], *attr, *polarity, p)
        }
        FeedbackConstraint::Sketch { embedding } => {
            sketch_likelihood(item, embedding, p).expect("validated sketch dimension")
        }
    }
}

/// Cumulative relevance: per-item sums of log-likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceState {
    log_scores: Vec<f64>,
    constraints: Vec<FeedbackConstraint>,
}

impl RelevanceState {
    pub fn new(n: usize) -> Self {
        Self { log_scores: vec![0.0; n], constraints: Vec::new() }
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.log_scores
    }

    pub fn constraints(&self) -> &[FeedbackConstraint] {
        &self.constraints
    }

    /// Multiplies every item's relevance by its likelihood under `c`.
    pub fn update(
        &mut self,
        c: FeedbackConstraint,
        catalog: &Catalog,
        params: &LikelihoodParams,
    ) -> Result<(), RelevanceError> {
        c.validate(catalog)?;
        for (i, s) in self.log_scores.iter_mut().enumerate() {
            *s += likelihood(catalog, i, &c, params).ln();
        }
        self.constraints.push(c);
        Ok(())
    }

    pub fn rank(&self) -> Vec<ItemId> {
        rank_scores(&self.log_scores)
    }
}

/// Descending score order, ties broken by smaller id.
pub fn rank_scores(scores: &[f64]) -> Vec<ItemId> {
    let mut order: Vec<ItemId> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Fraction of the other items ranked strictly after `target`.
pub fn percentile_rank(ordering: &[ItemId], target: ItemId) -> Result<f64, RelevanceError> {
    let pos = ordering
        .iter()
        .position(|&id| id == target)
        .ok_or(RelevanceError::UnknownItem(target))?;
    let n = ordering.len();
    if n <= 1 {
        return Ok(1.0);
    }
    Ok((n - 1 - pos) as f64 / (n - 1) as f64)
}

pub fn top_k(ordering: &[ItemId], k: usize) -> &[ItemId] {
    &ordering[..k.min(ordering.len())]
}
