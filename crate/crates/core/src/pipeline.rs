//! End-to-end wiring shared by the CLI, the service and the acceptance
//! suite: catalog preparation, training, evaluation and report files.

use std::path::Path;
use std::sync::Arc;

use tracing::info;

use crate::agent::{self, Checkpoint, QNetwork, TrainOutcome};
use crate::catalog::{cluster_reduce, generate_synthetic, split, Catalog, ItemId, SplitAssignment};
use crate::config::{Config, DataConfig};
use crate::eval::{self, EvalReport, Policy};
use crate::session::SearchContext;
use crate::Error;

/// Synthetic catalog per `data`, reduced by k-means when `reduce_to` is set.
pub fn build_catalog(data: &DataConfig) -> Result<Catalog, Error> {
    let raw = generate_synthetic(data.n, data.d, data.m, data.clusters, data.seed)?;
    if data.reduce_to == 0 || data.reduce_to >= raw.len() {
        return Ok(raw);
    }
    Ok(cluster_reduce(&raw, data.reduce_to, crate::rng::derive_seed(data.seed, "reduce", &[]))?)
}

/// A catalog, its search context and its train/val/test split.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: Config,
    pub ctx: Arc<SearchContext>,
    pub split: SplitAssignment,
}

impl Experiment {
    pub fn new(config: Config, catalog: Catalog) -> Result<Self, Error> {
        let split = split(&catalog, config.split.ratios(), config.split.seed)?;
        let ctx = SearchContext::new(Arc::new(catalog), config.search.clone());
        Ok(Self { config, ctx, split })
    }

    /// Builds the synthetic catalog described by the config.
    pub fn synthetic(config: Config) -> Result<Self, Error> {
        let catalog = build_catalog(&config.data)?;
        Self::new(config, catalog)
    }

    pub fn catalog(&self) -> &Catalog {
        self.ctx.catalog()
    }

    /// Test targets, capped by `eval.max_targets` when non-zero.
    pub fn test_targets(&self) -> &[ItemId] {
        let cap = self.config.eval.max_targets;
        if cap == 0 {
            &self.split.test
        } else {
            &self.split.test[..cap.min(self.split.test.len())]
        }
    }

    pub fn train(&self) -> Result<TrainOutcome, Error> {
        Ok(agent::train(&self.ctx, &self.split, &self.config.user, &self.config.train)?)
    }

    pub fn checkpoint(&self, outcome: &TrainOutcome) -> Checkpoint {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::new(&outcome.network, Some(outcome.selected_epoch), config)
    }

    pub fn evaluate(&self, policy: &Policy) -> Result<EvalReport, Error> {
        let report = eval::evaluate(policy, &self.ctx, self.test_targets(), &self.config.user, &self.config.eval)?;
        info!(policy = %report.policy, auc = report.auc, successes = report.successes, "evaluated");
        Ok(report)
    }

    /// The three fixed baselines, followed by the learned policy if given.
    pub fn evaluate_all(&self, network: Option<Arc<QNetwork>>) -> Result<Vec<EvalReport>, Error> {
        let mut policies = vec![Policy::Ws, Policy::Prr, Policy::SkPrr];
        policies.extend(network.map(Policy::Rl));
        policies.iter().map(|p| self.evaluate(p)).collect()
    }
}

/// Writes `curves.csv`, `auc.csv` and `actions.csv` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[EvalReport]) -> Result<(), Error> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("curves.csv"), eval::curves_csv(reports))?;
    std::fs::write(dir.join("auc.csv"), eval::auc_csv(reports))?;
    std::fs::write(dir.join("actions.csv"), eval::actions_csv(reports))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.data = DataConfig { n: 160, d: 4, m: 3, clusters: 4, reduce_to: 80, seed: 3 };
        c.eval.n_users = 2;
        c.eval.max_targets = 5;
        c
    }

    #[test]
    fn reduced_catalog_has_requested_size() {
        let e = Experiment::synthetic(tiny()).unwrap();
        assert_eq!(e.catalog().len(), 80);
        assert_eq!(e.catalog().source_ids().unwrap().len(), 80);
        assert_eq!(e.test_targets().len(), 5);
        assert_eq!(e.split.train.len() + e.split.val.len() + e.split.test.len(), 80);
    }

    #[test]
    fn reports_land_on_disk() {
        let e = Experiment::synthetic(tiny()).unwrap();
        let reports = e.evaluate_all(None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), &reports).unwrap();
        let auc = eval::parse_auc_csv(&std::fs::read_to_string(dir.path().join("auc.csv")).unwrap()).unwrap();
        assert_eq!(auc.len(), 3);
        assert!(dir.path().join("curves.csv").exists() && dir.path().join("actions.csv").exists());
    }
}
