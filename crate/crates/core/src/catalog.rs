//! Item catalogs: loading, synthesis, cluster reduction, splits and
//! feature-space neighbour queries.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub type ItemId = usize;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog must contain at least 2 items, found {0}")]
    TooFewItems(usize),
    #[error("catalog must declare at least one attribute")]
    NoAttributes,
    #[error("{found} attribute names for m = {m}")]
    AttributeNames { found: usize, m: usize },
    #[error("item {id}: feature length {found} ≠ {expected}")]
    FeatureLength { id: usize, found: usize, expected: usize },
    #[error("item {id}: attribute length {found} ≠ {expected}")]
    AttrLength { id: usize, found: usize, expected: usize },
    #[error("item {id}: duplicate id")]
    DuplicateId { id: usize },
    #[error("item {id}: ids must be dense 0..{n}, found {id} at position {position}")]
    NonDenseId { id: usize, position: usize, n: usize },
    #[error("item {id}: non-finite value")]
    NonFinite { id: usize },
    #[error("unknown item id {0}")]
    UnknownItem(ItemId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed catalog file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub features: Vec<f64>,
    pub attrs: Vec<f64>,
    #[serde(default)]
    pub image_uri: Option<String>,
}

/// An immutable collection of items sharing a feature dimension `d` and an
/// attribute vocabulary of size `m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    d: usize,
    m: usize,
    attribute_names: Vec<String>,
    items: Vec<Item>,
    /// For catalogs produced by [`cluster_reduce`]: original id of each item.
    #[serde(skip_serializing_if = "Option::is_none")]
    source_ids: Option<Vec<ItemId>>,
}

#[derive(Deserialize)]
struct CatalogFile {
    d: usize,
    m: usize,
    attribute_names: Vec<String>,
    items: Vec<Item>,
    #[serde(default)]
    source_ids: Option<Vec<ItemId>>,
}

impl Catalog {
    /// Validates and assembles a catalog. Items must already carry dense ids
    /// `0..N` in order.
    pub fn new(
        d: usize,
        m: usize,
        attribute_names: Vec<String>,
        items: Vec<Item>,
    ) -> Result<Self, CatalogError> {
        if m == 0 {
            return Err(CatalogError::NoAttributes);
        }
        if attribute_names.len() != m {
            return Err(CatalogError::AttributeNames { found: attribute_names.len(), m });
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.id) {
                return Err(CatalogError::DuplicateId { id: item.id });
            }
            if item.features.len() != d {
                return Err(CatalogError::FeatureLength {
                    id: item.id,
                    found: item.features.len(),
                    expected: d,
                });
            }
            if item.attrs.len() != m {
                return Err(CatalogError::AttrLength {
                    id: item.id,
                    found: item.attrs.len(),
                    expected: m,
                });
            }
            if item.features.iter().chain(&item.attrs).any(|v| !v.is_finite()) {
                return Err(CatalogError::NonFinite { id: item.id });
            }
        }
        if items.len() < 2 {
            return Err(CatalogError::TooFewItems(items.len()));
        }
        let n = items.len();
        for (position, item) in items.iter().enumerate() {
            if item.id != position {
                return Err(CatalogError::NonDenseId { id: item.id, position, n });
            }
        }
        Ok(Self { d, m, attribute_names, items, source_ids: None })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: ItemId) -> Result<&Item, CatalogError> {
        self.items.get(id).ok_or(CatalogError::UnknownItem(id))
    }

    pub fn features(&self, id: ItemId) -> &[f64] {
        &self.items[id].features
    }

    pub fn attr(&self, id: ItemId, attr: usize) -> f64 {
        self.items[id].attrs[attr]
    }

    /// Original ids for a cluster-reduced catalog.
    pub fn source_ids(&self) -> Option<&[ItemId]> {
        self.source_ids.as_deref()
    }

    pub fn attr_column(&self, attr: usize) -> impl Iterator<Item = f64> + '_ {
        self.items.iter().map(move |it| it.attrs[attr])
    }

    /// Population standard deviation of each attribute column.
    pub fn attr_std(&self) -> Vec<f64> {
        (0..self.m).map(|a| std_dev(self.attr_column(a))).collect()
    }

    /// Root-mean-square per-dimension feature standard deviation.
    pub fn feature_scale(&self) -> f64 {
        let mean_var = (0..self.d)
            .map(|j| {
                let s = std_dev(self.items.iter().map(|it| it.features[j]));
                s * s
            })
            .sum::<f64>()
            / self.d.max(1) as f64;
        mean_var.sqrt()
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        let mut catalog = Catalog::new(file.d, file.m, file.attribute_names, file.items)?;
        if let Some(src) = file.source_ids {
            if src.len() != catalog.len() {
                return Err(CatalogError::Malformed(format!(
                    "source_ids has {} entries for {} items",
                    src.len(),
                    catalog.len()
                )));
            }
            catalog.source_ids = Some(src);
        }
        Ok(catalog)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("catalog serialization cannot fail")
    }

    /// Parses the CSV variant: header `id,f0..f{d-1},a0..a{m-1}`.
    pub fn from_csv_str(text: &str) -> Result<Self, CatalogError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| CatalogError::Malformed(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.first() != Some(&"id") {
            return Err(CatalogError::Malformed("first CSV column must be `id`".into()));
        }
        let d = cols.iter().filter(|c| c.starts_with('f')).count();
        let m = cols.iter().filter(|c| c.starts_with('a')).count();
        let expected: Vec<String> = std::iter::once("id".to_string())
            .chain((0..d).map(|j| format!("f{j}")))
            .chain((0..m).map(|j| format!("a{j}")))
            .collect();
        if cols.len() != expected.len() || cols.iter().zip(&expected).any(|(c, e)| c != e) {
            return Err(CatalogError::Malformed(format!(
                "CSV header must be `{}`",
                expected.join(",")
            )));
        }
        let mut items = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CatalogError::Malformed(e.to_string()))?;
            let parse = |i: usize| -> Result<f64, CatalogError> {
                record
                    .get(i)
                    .ok_or_else(|| CatalogError::Malformed(format!("row {row}: missing column {i}")))?
                    .parse::<f64>()
                    .map_err(|e| CatalogError::Malformed(format!("row {row}: {e}")))
            };
            let id = record
                .get(0)
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| CatalogError::Malformed(format!("row {row}: id: {e}")))?;
            let features = (1..=d).map(parse).collect::<Result<Vec<_>, _>>()?;
            let attrs = (d + 1..=d + m).map(parse).collect::<Result<Vec<_>, _>>()?;
            items.push(Item { id, features, attrs, image_uri: None });
        }
        let names = (0..m).map(|j| format!("a{j}")).collect();
        Catalog::new(d, m, names, items)
    }

    /// Feature-space neighbours of `anchor`, excluding the anchor itself,
    /// ordered by Euclidean distance (ties: smaller id first).
    pub fn knn(&self, anchor: ItemId, k: usize, direction: Direction) -> Result<Vec<ItemId>, CatalogError> {
        let anchor_features = &self.item(anchor)?.features;
        if k > self.len() - 1 {
            return Err(CatalogError::InvalidArgument(format!(
                "k = {k} exceeds N − 1 = {}",
                self.len() - 1
            )));
        }
        let mut dist: Vec<(f64, ItemId)> = self
            .items
            .iter()
            .filter(|it| it.id != anchor)
            .map(|it| (squared_distance(&it.features, anchor_features), it.id))
            .collect();
        match direction {
            Direction::Nearest => dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))),
            Direction::Furthest => dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))),
        }
        Ok(dist.into_iter().take(k).map(|(_, id)| id).collect())
    }
}

/// Loads a catalog from JSON, or from CSV when the extension is `.csv`.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Catalog::from_csv_str(&text)
    } else {
        Catalog::from_json_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Nearest,
    Furthest,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn std_dev(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt()
}

// Mixture layout for synthetic catalogs.
const CENTER_SCALE: f64 = 2.0;
const ATTR_NOISE: f64 = 0.3;

/// Seeded synthetic catalog. Features come from a Gaussian mixture with
/// `clusters` components (component centres ~ N(0, 2²I), unit within-component
/// spread); attributes are fixed random linear projections of the features
/// plus Gaussian noise, so attributes track visual similarity.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    m: usize,
    clusters: usize,
    seed: u64,
) -> Result<Catalog, CatalogError> {
    if n < 2 {
        return Err(CatalogError::TooFewItems(n));
    }
    if clusters == 0 || d == 0 || m == 0 {
        return Err(CatalogError::InvalidArgument(
            "clusters, d and m must all be at least 1".into(),
        ));
    }
    let mut rng = rng::stream(seed, "synthetic", &[n as u64, d as u64, m as u64, clusters as u64]);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..d).map(|_| CENTER_SCALE * gaussian(&mut rng)).collect())
        .collect();
    let proj_scale = 1.0 / (d as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| proj_scale * gaussian(&mut rng)).collect())
        .collect();

    let mut items = Vec::with_capacity(n);
    for id in 0..n {
        let c = rng.random_range(0..clusters);
        let features: Vec<f64> = centers[c].iter().map(|&mu| mu + gaussian(&mut rng)).collect();
        let attrs: Vec<f64> = projection
            .iter()
            .map(|row| {
                let p: f64 = row.iter().zip(&features).map(|(w, x)| w * x).sum();
                p + ATTR_NOISE * gaussian(&mut rng)
            })
            .collect();
        items.push(Item { id, features, attrs, image_uri: None });
    }
    let names = (0..m).map(|j| format!("attr{j}")).collect();
    Catalog::new(d, m, names, items)
}

/// Lloyd iteration cap for [`cluster_reduce`].
pub const KMEANS_MAX_ITERS: usize = 100;

/// Reduces a catalog to `k` representative items by k-means over the
/// attribute vectors (k-means++ seeding, at most 100 Lloyd iterations). Each
/// cluster contributes the member nearest its centroid; representatives keep
/// their original relative order and are re-numbered densely, with the
/// original ids retained in [`Catalog::source_ids`].
pub fn cluster_reduce(catalog: &Catalog, k: usize, seed: u64) -> Result<Catalog, CatalogError> {
    let n = catalog.len();
    if k < 2 || k > n {
        return Err(CatalogError::InvalidArgument(format!("k = {k} must satisfy 2 ≤ k ≤ N = {n}")));
    }
    let chosen = kmeans_representatives(catalog, k, seed);
    let items = chosen
        .iter()
        .enumerate()
        .map(|(new_id, &old)| {
            let mut it = catalog.items[old].clone();
            it.id = new_id;
            it
        })
        .collect();
    let mut reduced = Catalog::new(catalog.d, catalog.m, catalog.attribute_names.clone(), items)?;
    let source = match catalog.source_ids() {
        Some(src) => chosen.iter().map(|&i| src[i]).collect(),
        None => chosen,
    };
    reduced.source_ids = Some(source);
    Ok(reduced)
}

/// Sorted ids of the per-cluster representatives (k ≥ 1).
pub(crate) fn kmeans_representatives(catalog: &Catalog, k: usize, seed: u64) -> Vec<ItemId> {
    let points: Vec<&[f64]> = catalog.items.iter().map(|it| it.attrs.as_slice()).collect();
    let n = points.len();
    let m = catalog.m;
    let mut rng = rng::stream(seed, "kmeans", &[n as u64, k as u64]);

    // k-means++ seeding over distinct items.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    taken[first] = true;
    centroids.push(points[first].to_vec());
    let mut best_d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| best_d2[i]).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                u -= best_d2[i];
                if u <= 0.0 && best_d2[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !taken[i] && best_d2[i] > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[pick] = true;
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            best_d2[i] = best_d2[i].min(squared_distance(p, &c));
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let a = nearest_centroid(p, &centroids);
            if a != assign[i] || iter == 0 {
                changed |= a != assign[i];
                assign[i] = a;
            }
        }
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the point worst served by its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = squared_distance(points[a], &centroids[assign[a]]);
                        let db = squared_distance(points[b], &centroids[assign[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = points[far].to_vec();
                assign[far] = c;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assign[i] = nearest_centroid(p, &centroids);
    }

    let mut chosen = vec![false; n];
    let mut reps = Vec::with_capacity(k);
    for (c, centroid) in centroids.iter().enumerate() {
        let member = (0..n)
            .filter(|&i| assign[i] == c)
            .min_by(|&a, &b| {
                squared_distance(points[a], centroid)
                    .total_cmp(&squared_distance(points[b], centroid))
                    .then(a.cmp(&b))
            });
        let rep = member.unwrap_or_else(|| {
            (0..n)
                .filter(|&i| !chosen[i])
                .min_by(|&a, &b| {
                    squared_distance(points[a], centroid)
                        .total_cmp(&squared_distance(points[b], centroid))
                        .then(a.cmp(&b))
                })
                .unwrap()
        });
        chosen[rep] = true;
        reps.push(rep);
    }
    reps.sort_unstable();
    reps
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(p, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<ItemId>,
    pub val: Vec<ItemId>,
    pub test: Vec<ItemId>,
}

/// Seeded shuffle followed by a (train, val, test) partition.
pub fn split(catalog: &Catalog, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment, CatalogError> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(CatalogError::InvalidArgument(format!(
            "split ratios ({tr}, {va}, {te}) must be non-negative and sum to 1"
        )));
    }
    let n = catalog.len();
    let mut ids: Vec<ItemId> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, "split", &[n as u64]));
    let n_train = ((tr * n as f64).round() as usize).min(n);
    let n_val = ((va * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(SplitAssignment { train: ids, val, test })
}
