use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distance::{cosine_distance_matrix, FeatureMatrix};
use crate::error::{Error, Result};

pub const RANKS: [usize; 4] = [1, 5, 10, 20];

/// CMC hit rates and mean average precision over the evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub rank_k: BTreeMap<usize, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub queries: usize,
    /// Queries without any valid gallery match.
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_query_ap: Vec<f64>,
}

impl RankingResult {
    pub fn rank(&self, k: usize) -> f64 {
        self.rank_k.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Identity and camera of one retrieval item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemLabel {
    pub person_id: u32,
    pub camera_id: u32,
}

/// Orders gallery columns by ascending distance, ties by index.
pub fn rank_gallery(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// Average precision and first-hit position of one ranked list, with
/// same-identity same-camera entries removed. `None` when nothing relevant
/// remains.
pub fn score_query(order: &[usize], query: ItemLabel, gallery: &[ItemLabel]) -> Option<(f64, usize)> {
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first = None;
    let mut position = 0usize;
    for &g in order {
        let item = gallery[g];
        let same_id = item.person_id == query.person_id;
        if same_id && item.camera_id == query.camera_id {
            continue;
        }
        if same_id {
            hits += 1;
            precision_sum += hits as f64 / (position + 1) as f64;
            first.get_or_insert(position);
        }
        position += 1;
    }
    first.map(|f| (precision_sum / hits as f64, f))
}

/// CMC Rank-k for k in 1, 5, 10, 20 and mAP under cosine distance.
pub fn cmc_map(
    query: &FeatureMatrix,
    query_labels: &[ItemLabel],
    gallery: &FeatureMatrix,
    gallery_labels: &[ItemLabel],
) -> Result<RankingResult> {
    if query.rows() != query_labels.len() {
        return Err(Error::DimensionMismatch {
            left: query.rows(),
            right: query_labels.len(),
        });
    }
    if gallery.rows() != gallery_labels.len() {
        return Err(Error::DimensionMismatch {
            left: gallery.rows(),
            right: gallery_labels.len(),
        });
    }
    let dist = cosine_distance_matrix(query, gallery)?.to_rows()?;
    let mut hits = [0usize; RANKS.len()];
    let mut aps = Vec::with_capacity(dist.len());
    for (q, row) in dist.iter().enumerate() {
        let order = rank_gallery(row);
        match score_query(&order, query_labels[q], gallery_labels) {
            Some((ap, first)) => {
                aps.push(ap);
                for (h, &k) in hits.iter_mut().zip(RANKS.iter()) {
                    if first < k {
                        *h += 1;
                    }
                }
            }
            None => log::warn!("query {q} has no valid gallery match; skipped"),
        }
    }
    let skipped = dist.len() - aps.len();
    if aps.is_empty() {
        return Err(Error::NoValidGallery { queries: skipped });
    }
    if skipped > 0 {
        log::warn!("{skipped} of {} queries skipped", dist.len());
    }
    let n = aps.len() as f64;
    Ok(RankingResult {
        rank_k: RANKS.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect(),
        map: aps.iter().sum::<f64>() / n,
        queries: aps.len(),
        skipped,
        per_query_ap: aps,
    })
}
