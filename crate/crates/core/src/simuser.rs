//! Seeded simulated users that supply free-form feedback, answer pivot
//! questions and draw (surrogate) sketches for a hidden target.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::catalog::{gaussian, Catalog, ItemId};
use crate::relevance::Polarity;
use crate::rng::{self, StreamRng};

/// Noise and vocabulary settings, expressed relative to catalog statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserConfig {
    /// Question-answer noise std, as a multiple of each attribute's std.
    pub sigma_user_factor: f64,
    /// Equality threshold, as a multiple of each attribute's std.
    pub eps_eq_factor: f64,
    /// Per-dimension sketch noise std, as a multiple of the RMS feature std.
    pub sigma_sketch_factor: f64,
    /// Fraction of the vocabulary available for free-form feedback.
    pub attr_subset_fraction: f64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self { sigma_user_factor: 0.1, eps_eq_factor: 0.1, sigma_sketch_factor: 2.0, attr_subset_fraction: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedUser {
    target_id: ItemId,
    attr_subset: Vec<usize>,
    sigma_user: Vec<f64>,
    eps_eq: Vec<f64>,
    sigma_sketch: f64,
    rng: StreamRng,
}

impl SimulatedUser {
    /// Fully specified user. `sigma_user` and `eps_eq` are per attribute.
    pub fn new(
        target_id: ItemId,
        mut attr_subset: Vec<usize>,
        sigma_user: Vec<f64>,
        eps_eq: Vec<f64>,
        sigma_sketch: f64,
        rng_seed: u64,
    ) -> Self {
        assert!(!attr_subset.is_empty(), "attr_subset must be non-empty");
        attr_subset.sort_unstable();
        attr_subset.dedup();
        Self {
            target_id,
            attr_subset,
            sigma_user,
            eps_eq,
            sigma_sketch,
            rng: rng::stream(rng_seed, "simuser", &[target_id as u64]),
        }
    }

    /// User whose scales derive from the catalog and whose vocabulary subset
    /// is a seeded random draw; the draw comes from the user's own stream.
    pub fn from_config(catalog: &Catalog, target_id: ItemId, cfg: &UserConfig, rng_seed: u64) -> Self {
        let m = catalog.m();
        let std = catalog.attr_std();
        let size = ((cfg.attr_subset_fraction * m as f64).round() as usize).clamp(1, m);
        let mut subset_rng = rng::stream(rng_seed, "simuser-vocab", &[target_id as u64]);
        let subset = index::sample(&mut subset_rng, m, size).into_vec();
        Self::new(
            target_id,
            subset,
            std.iter().map(|s| cfg.sigma_user_factor * s).collect(),
            std.iter().map(|s| cfg.eps_eq_factor * s).collect(),
            cfg.sigma_sketch_factor * catalog.feature_scale(),
            rng_seed,
        )
    }

    pub fn target_id(&self) -> ItemId {
        self.target_id
    }

    pub fn attr_subset(&self) -> &[usize] {
        &self.attr_subset
    }

    pub fn eps_eq(&self, attr: usize) -> f64 {
        self.eps_eq[attr]
    }

    fn relation(&self, delta: f64, attr: usize) -> Polarity {
        let eps = self.eps_eq[attr];
        if delta > eps {
            Polarity::More
        } else if delta < -eps {
            Polarity::Less
        } else {
            Polarity::Equal
        }
    }

    /// True, noiseless relation of the target to `ref_id` on `attr`.
    pub fn true_relation(&self, catalog: &Catalog, attr: usize, ref_id: ItemId) -> Polarity {
        self.relation(catalog.attr(self.target_id, attr) - catalog.attr(ref_id, attr), attr)
    }

    /// Number of items satisfying `polarity` relative to `ref_id`.
    pub fn satisfying_count(&self, catalog: &Catalog, attr: usize, ref_id: ItemId, polarity: Polarity) -> usize {
        let r = catalog.attr(ref_id, attr);
        let eps = self.eps_eq[attr];
        catalog
            .attr_column(attr)
            .filter(|&s| match polarity {
                Polarity::More => s > r,
                Polarity::Less => s < r,
                Polarity::Equal => (s - r).abs() <= eps,
            })
            .count()
    }

    /// The (attribute, reference, polarity) statement that leaves the fewest
    /// items satisfying it. Ties go to the earlier displayed reference, then
    /// the lower attribute index.
    pub fn choose_freeform(&self, displayed_refs: &[ItemId], catalog: &Catalog) -> (usize, ItemId, Polarity) {
        assert!(!displayed_refs.is_empty(), "no reference items displayed");
        let mut best: Option<(usize, (usize, ItemId, Polarity))> = None;
        for &ref_id in displayed_refs {
            for &attr in &self.attr_subset {
                let polarity = self.true_relation(catalog, attr, ref_id);
                let count = self.satisfying_count(catalog, attr, ref_id, polarity);
                if best.as_ref().is_none_or(|(c, _)| count < *c) {
                    best = Some((count, (attr, ref_id, polarity)));
                }
            }
        }
        best.expect("non-empty candidate set").1
    }

    /// Noisy comparison of target and pivot scores.
    pub fn answer_question(&mut self, attr: usize, pivot_id: ItemId, catalog: &Catalog) -> Polarity {
        let mut delta = catalog.attr(self.target_id, attr) - catalog.attr(pivot_id, attr);
        let sigma = self.sigma_user[attr];
        if sigma > 0.0 {
            let n1 = gaussian(&mut self.rng);
            let n2 = gaussian(&mut self.rng);
            delta += sigma * (n1 - n2);
        }
        self.relation(delta, attr)
    }

    /// Surrogate sketch: the target's features plus isotropic Gaussian noise.
    pub fn produce_sketch(&mut self, catalog: &Catalog) -> Vec<f64> {
        let sigma = self.sigma_sketch;
        let base = catalog.features(self.target_id);
        if sigma > 0.0 {
            base.iter().map(|x| x + sigma * gaussian(&mut self.rng)).collect()
        } else {
            base.to_vec()
        }
    }
}
