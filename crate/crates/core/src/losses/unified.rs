use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::classification::{attribute_bce_loss, identity_softmax_loss};
use super::selection::TripletSelection;
use super::triplet::{aitl_loss, batch_hard_triplet_loss, itl_loss, Reduction};
use super::BatchFeatures;
use crate::error::{Error, Result};

/// Which components of the unified loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub bce: bool,
    pub tri: bool,
    pub softmax: bool,
    pub aitl: bool,
    pub itl: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            bce: true,
            tri: true,
            softmax: true,
            aitl: true,
            itl: false,
        }
    }
}

impl LossToggles {
    pub fn validate(&self) -> Result<()> {
        if self.aitl && self.itl {
            return Err(Error::Config("aitl and itl are mutually exclusive".into()));
        }
        if !(self.bce || self.tri || self.softmax || self.aitl || self.itl) {
            return Err(Error::Config("at least one loss component must be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub toggles: LossToggles,
    pub tri_margin: f64,
    /// Margin of the identity-hard hinge (AITL or ITL).
    pub intra_margin: f64,
    pub intra_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            toggles: LossToggles::default(),
            tri_margin: 0.3,
            intra_margin: 0.0,
            intra_reduction: Reduction::Mean,
        }
    }
}

/// Scalar values of each component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bce: f64,
    pub l_tri: f64,
    pub l_softmax: f64,
    /// The identity-hard term: AITL, or ITL when that ablation is active.
    pub l_aitl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_bce: f64, l_tri: f64, l_softmax: f64, l_aitl: f64) -> Self {
        Self {
            l_bce,
            l_tri,
            l_softmax,
            l_aitl,
            total: l_bce + l_tri + l_softmax + l_aitl,
        }
    }
}

/// Everything the unified loss reads for one batch.
pub struct LossInputs<'a> {
    /// Normalized Re-ID features plus the attribute probabilities used for
    /// AITL selection.
    pub batch: &'a BatchFeatures,
    /// Fused feature fed to the identity classifier.
    pub final_features: &'a Tensor,
    /// Global training identity labels.
    pub labels: &'a [usize],
    pub classifier_weight: &'a Tensor,
    pub classifier_bias: &'a Tensor,
    pub attr_logits: &'a Tensor,
    pub attr_targets: &'a Tensor,
}

pub struct UnifiedLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub tri_selection: Option<TripletSelection>,
    pub intra_selection: Option<TripletSelection>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Unweighted sum of the enabled components.
pub fn unified_loss(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<UnifiedLoss> {
    let t = cfg.toggles;
    t.validate()?;
    let device = inputs.final_features.device();
    let dtype = inputs.final_features.dtype();
    let mut total = Tensor::zeros((), dtype, device)?;
    let (mut l_bce, mut l_tri, mut l_softmax, mut l_aitl) = (0.0, 0.0, 0.0, 0.0);
    let mut tri_selection = None;
    let mut intra_selection = None;

    if t.bce {
        let l = attribute_bce_loss(inputs.attr_logits, inputs.attr_targets)?;
        l_bce = scalar(&l)?;
        total = (total + l)?;
    }
    if t.tri {
        let out = batch_hard_triplet_loss(inputs.batch, cfg.tri_margin)?;
        l_tri = out.value()?;
        total = (total + out.loss)?;
        tri_selection = Some(out.selection);
    }
    if t.softmax {
        let l = identity_softmax_loss(
            inputs.final_features,
            inputs.labels,
            inputs.classifier_weight,
            inputs.classifier_bias,
        )?;
        l_softmax = scalar(&l)?;
        total = (total + l)?;
    }
    if t.aitl || t.itl {
        let out = if t.aitl {
            aitl_loss(inputs.batch, cfg.intra_margin, cfg.intra_reduction)?
        } else {
            itl_loss(inputs.batch, cfg.intra_margin, cfg.intra_reduction)?
        };
        l_aitl = out.value()?;
        total = (total + out.loss)?;
        intra_selection = Some(out.selection);
    }
    Ok(UnifiedLoss {
        total,
        breakdown: LossBreakdown::from_parts(l_bce, l_tri, l_softmax, l_aitl),
        tri_selection,
        intra_selection,
    })
}
