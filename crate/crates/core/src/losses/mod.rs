//! Training objectives and the DVDP diagnostic.
//!
//! Selection (which rows play positive / negative for each anchor) is always
//! done on detached host copies of the distance matrices; the hinge is then
//! rebuilt from gathered tensor entries so gradients flow only through the
//! Re-ID feature distances.

mod classification;
mod selection;
mod triplet;
mod unified;

use candle_core::DType;

pub use classification::{attribute_bce_loss, cross_entropy, identity_softmax_loss};
pub use selection::{batch_hard_select, intra_class_select, TripletSelection};
pub use triplet::{aitl_loss, batch_hard_triplet_loss, dvdp, itl_loss, Dvdp, Reduction, TripletOutput};
pub use unified::{unified_loss, LossBreakdown, LossConfig, LossInputs, LossToggles, UnifiedLoss};

use crate::distance::FeatureMatrix;
use crate::error::{Error, Result};

/// Re-ID features and attribute predictions of one PK batch, identity-major.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    pub reid: FeatureMatrix,
    pub attr_pred: FeatureMatrix,
    /// Batch-local identity index `0..P` per row.
    pub person_index: Vec<usize>,
    pub p: usize,
    pub k: usize,
}

impl BatchFeatures {
    pub fn new(reid: FeatureMatrix, attr_pred: FeatureMatrix, p: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidLayout(format!("K must be >= 2, got {k}")));
        }
        if reid.rows() != p * k || attr_pred.rows() != p * k {
            return Err(Error::InvalidLayout(format!(
                "expected {} rows (P={p}, K={k}), got reid {} / attr {}",
                p * k,
                reid.rows(),
                attr_pred.rows()
            )));
        }
        let host = attr_pred.tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        if host.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("attribute predictions must lie in [0, 1]".into()));
        }
        let person_index = (0..p).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        Ok(Self {
            reid,
            attr_pred,
            person_index,
            p,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.p * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
