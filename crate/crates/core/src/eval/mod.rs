//! Retrieval metrics and DVDP tracking.

mod ranking;
mod trace;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

pub use ranking::{cmc_map, rank_gallery, score_query, ItemLabel, RankingResult, RANKS};
pub use trace::{DvdpAccumulator, DvdpPoint, DvdpTrace};

use crate::data::{query_gallery_split, Tracklet};
use crate::distance::FeatureMatrix;
use crate::error::Result;
use crate::model::Model;
use crate::sampler::center_clip;

/// Clips per forward pass during embedding.
const EMBED_CHUNK: usize = 16;

pub fn labels_of(tracklets: &[Tracklet]) -> Vec<ItemLabel> {
    tracklets
        .iter()
        .map(|t| ItemLabel {
            person_id: t.person_id,
            camera_id: t.camera_id,
        })
        .collect()
}

/// Normalized Re-ID features of the center clip of every tracklet.
pub fn embed_tracklets(model: &Model, tracklets: &[Tracklet], t: usize) -> Result<FeatureMatrix> {
    let clips: Vec<_> = tracklets.iter().map(|tr| center_clip(tr, t)).collect();
    let rows = model.embed(&clips, EMBED_CHUNK)?;
    let dim = model.config().fused_dim();
    let flat: Vec<f64> = rows.into_iter().flatten().map(f64::from).collect();
    let tensor = candle_core::Tensor::from_vec(flat, (tracklets.len(), dim), &Device::Cpu)?;
    FeatureMatrix::new(tensor.to_dtype(DType::F64)?)
}

pub fn evaluate_split(model: &Model, query: &[Tracklet], gallery: &[Tracklet], t: usize) -> Result<RankingResult> {
    let qf = embed_tracklets(model, query, t)?;
    let gf = embed_tracklets(model, gallery, t)?;
    cmc_map(&qf, &labels_of(query), &gf, &labels_of(gallery))
}

/// Evaluation of a model on a dataset it was not trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossDatasetResult {
    pub train_dataset: String,
    pub result: RankingResult,
}

/// Scores `model` on the query/gallery split of `test_dataset` without any
/// adaptation.
pub fn cross_dataset_eval(
    model: &Model,
    train_dataset_tag: &str,
    test_dataset: &[Tracklet],
    t: usize,
    query_fraction: f64,
) -> Result<CrossDatasetResult> {
    let (query, gallery) = query_gallery_split(test_dataset, query_fraction);
    Ok(CrossDatasetResult {
        train_dataset: train_dataset_tag.to_string(),
        result: evaluate_split(model, &query, &gallery, t)?,
    })
}
