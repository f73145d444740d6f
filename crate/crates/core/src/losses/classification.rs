use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Mean cross-entropy of raw logits `(N, C)` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_probs = shifted.broadcast_sub(&lse)?;
    let idx: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let idx = Tensor::from_vec(idx, (n, 1), logits.device())?;
    Ok(log_probs.gather(&idx, 1)?.mean_all()?.neg()?)
}

/// Identity loss: a linear classifier `x W^T + b` over the fused feature,
/// scored by mean cross-entropy.
pub fn identity_softmax_loss(features: &Tensor, labels: &[usize], weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, dim) = features.dims2()?;
    let (_, wdim) = weight.dims2()?;
    if dim != wdim {
        return Err(Error::DimensionMismatch { left: dim, right: wdim });
    }
    let logits = features.matmul(&weight.t()?)?.broadcast_add(bias)?;
    cross_entropy(&logits, labels)
}

/// Mean element-wise binary cross-entropy of `sigmoid(logits)` against
/// {0, 1} targets, in the overflow-free form
/// `max(x, 0) - x t + ln(1 + e^{-|x|})`.
pub fn attribute_bce_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if logits.dims() != targets.dims() {
        return Err(Error::ShapeMismatch {
            expected: logits.dims().to_vec(),
            actual: targets.dims().to_vec(),
        });
    }
    let host = targets.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if host.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Config("BCE targets must be 0 or 1".into()));
    }
    let targets = targets.to_dtype(logits.dtype())?;
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let per = ((logits.relu()? - (logits * &targets)?)? + softplus)?;
    Ok(per.mean_all()?)
}
