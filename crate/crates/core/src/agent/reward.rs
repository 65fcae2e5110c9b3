use crate::catalog::{Catalog, ItemId};

fn mean_features(catalog: &Catalog, ids: &[ItemId]) -> Vec<f64> {
    let mut mean = vec![0.0; catalog.d()];
    for &id in ids {
        for (m, x) in mean.iter_mut().zip(catalog.features(id)) {
            *m += x;
        }
    }
    let n = ids.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Euclidean distance between the mean feature vectors of two item sets.
pub fn mean_distance(catalog: &Catalog, a: &[ItemId], b: &[ItemId]) -> f64 {
    let (ma, mb) = (mean_features(catalog, a), mean_features(catalog, b));
    ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sign(x: f64) -> i32 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Reward for moving the top images from `prev_top` to `new_top`: +1 for
/// approaching the positive proxies, +1 for receding from the negative ones
/// (−1 for the opposite moves), and −1 for a repeated sketch request.
pub fn reward(
    prev_top: &[ItemId],
    new_top: &[ItemId],
    pos_prox: &[ItemId],
    neg_prox: &[ItemId],
    catalog: &Catalog,
    sketch_repeat: bool,
) -> i32 {
    let prev_pos = mean_distance(catalog, prev_top, pos_prox);
    let new_pos = mean_distance(catalog, new_top, pos_prox);
    let prev_neg = mean_distance(catalog, prev_top, neg_prox);
    let new_neg = mean_distance(catalog, new_top, neg_prox);
    sign(prev_pos - new_pos) + sign(new_neg - prev_neg) - i32::from(sketch_repeat)
}
