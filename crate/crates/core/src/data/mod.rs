//! Tracklet datasets: the synthetic generator and the on-disk layout.

mod layout;
mod schema;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use image::RgbImage;

pub use layout::{export_dataset, load_mars_layout, parse_frame_name, FrameName, LoadedDataset};
pub use schema::{AttributeGroup, AttributeSchema, AttributeSpec};
pub use synthetic::{
    generate_synthetic_dataset, generate_with_ground_truth, FrameTruth, SyntheticConfig,
};

/// A tracked image sequence of one person seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub tracklet_id: String,
    pub person_id: u32,
    pub camera_id: u32,
    pub frames: Vec<Arc<RgbImage>>,
    pub attributes: BTreeMap<String, u32>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Canonical tracklet id: zero-padded person, camera, per-person index.
pub fn tracklet_key(person_id: u32, camera_id: u32, index: u32) -> String {
    format!("{person_id:04}C{camera_id}T{index:04}")
}

pub fn distinct_identities(tracklets: &[Tracklet]) -> Vec<u32> {
    tracklets
        .iter()
        .map(|t| t.person_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Disjoint identity split: the first `train_fraction` of sorted identities
/// train, the rest test.
pub fn split_by_identity(tracklets: &[Tracklet], train_fraction: f64) -> (Vec<Tracklet>, Vec<Tracklet>) {
    let ids = distinct_identities(tracklets);
    let n_train = ((ids.len() as f64) * train_fraction).round() as usize;
    let train_ids: BTreeSet<u32> = ids.into_iter().take(n_train).collect();
    tracklets
        .iter()
        .cloned()
        .partition(|t| train_ids.contains(&t.person_id))
}

/// Per identity, the first `max(1, round(fraction * n))` tracklets become
/// queries and the rest form the gallery.
pub fn query_gallery_split(tracklets: &[Tracklet], query_fraction: f64) -> (Vec<Tracklet>, Vec<Tracklet>) {
    let mut by_id: BTreeMap<u32, Vec<&Tracklet>> = BTreeMap::new();
    for t in tracklets {
        by_id.entry(t.person_id).or_default().push(t);
    }
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for group in by_id.values() {
        let n_q = ((group.len() as f64 * query_fraction).round() as usize).max(1);
        let n_q = if group.len() > 1 { n_q.min(group.len() - 1) } else { n_q };
        for (i, t) in group.iter().enumerate() {
            if i < n_q {
                query.push((*t).clone());
            } else {
                gallery.push((*t).clone());
            }
        }
    }
    (query, gallery)
}
