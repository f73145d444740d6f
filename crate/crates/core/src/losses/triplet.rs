use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::selection::{batch_hard_select, intra_class_select, TripletSelection};
use super::BatchFeatures;
use crate::distance::{cosine_distance_matrix, DistanceMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
pub struct TripletOutput {
    /// Scalar loss tensor, attached to the graph of `BatchFeatures::reid`.
    pub loss: Tensor,
    pub selection: TripletSelection,
}

impl TripletOutput {
    pub fn value(&self) -> Result<f64> {
        Ok(self.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

/// `[d(a, far) - d(a, near) + margin]_+` per anchor, reduced.
fn hinge(dist: &DistanceMatrix, far: &[usize], near: &[usize], margin: f64, reduction: Reduction) -> Result<Tensor> {
    let h = (dist.pick(far)? - dist.pick(near)?)?.affine(1.0, margin)?.relu()?;
    Ok(match reduction {
        Reduction::Sum => h.sum_all()?,
        Reduction::Mean => h.mean_all()?,
    })
}

/// Batch-hard triplet loss on cosine distances, mean over anchors.
pub fn batch_hard_triplet_loss(batch: &BatchFeatures, margin: f64) -> Result<TripletOutput> {
    if batch.p < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch-hard mining needs at least 2 identities, got {}",
            batch.p
        )));
    }
    let fd = cosine_distance_matrix(&batch.reid, &batch.reid)?;
    let selection = batch_hard_select(&fd.to_rows()?, &batch.person_index);
    debug_assert_eq!(selection.len(), fd.shape().0);
    let loss = hinge(&fd, &selection.positive, &selection.negative, margin, Reduction::Mean)?;
    Ok(TripletOutput { loss, selection })
}

/// Distance variance among different positives of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dvdp {
    /// Sum over all anchors.
    pub sum: f64,
    /// Per-anchor mean; this is the logged quantity.
    pub mean: f64,
    pub per_anchor: Vec<f64>,
    pub selection: TripletSelection,
}

pub fn dvdp(batch: &BatchFeatures) -> Result<Dvdp> {
    let fd = cosine_distance_matrix(&batch.reid.detach(), &batch.reid.detach())?.to_rows()?;
    let selection = intra_class_select(&fd, &batch.person_index);
    let per_anchor: Vec<f64> = selection
        .anchor
        .iter()
        .zip(selection.negative.iter().zip(&selection.positive))
        .map(|(&a, (&far, &near))| (fd[a][far] - fd[a][near]).max(0.0))
        .collect();
    let sum: f64 = per_anchor.iter().sum();
    let mean = if per_anchor.is_empty() {
        0.0
    } else {
        sum / per_anchor.len() as f64
    };
    Ok(Dvdp {
        sum,
        mean,
        per_anchor,
        selection,
    })
}

/// Attribute-aware identity-hard triplet loss. The intra-class negative and
/// positive of each anchor are the same-identity rows with the largest and
/// smallest attribute-prediction distance; the hinge is on Re-ID distances.
pub fn aitl_loss(batch: &BatchFeatures, margin: f64, reduction: Reduction) -> Result<TripletOutput> {
    let ad = cosine_distance_matrix(&batch.attr_pred.detach(), &batch.attr_pred.detach())?;
    let selection = intra_class_select(&ad.to_rows()?, &batch.person_index);
    let fd = cosine_distance_matrix(&batch.reid, &batch.reid)?;
    let loss = hinge(&fd, &selection.negative, &selection.positive, margin, reduction)?;
    Ok(TripletOutput { loss, selection })
}

/// Identity-hard triplet loss with selection by Re-ID feature distance.
pub fn itl_loss(batch: &BatchFeatures, margin: f64, reduction: Reduction) -> Result<TripletOutput> {
    let fd = cosine_distance_matrix(&batch.reid, &batch.reid)?;
    let selection = intra_class_select(&fd.to_rows()?, &batch.person_index);
    let loss = hinge(&fd, &selection.negative, &selection.positive, margin, reduction)?;
    Ok(TripletOutput { loss, selection })
}
