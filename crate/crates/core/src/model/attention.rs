use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, ParamStore};
use crate::error::{Error, Result};

/// Number of spatial cells the temporal convolution mixes as channels.
pub const ATTENTION_CELLS: usize = 128;

/// Padding scheme of the kernel-3 temporal convolution. Both variants keep
/// the output length equal to the clip length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalConv {
    /// Padding 2 with dilation 2.
    #[default]
    Dilated,
    /// Padding 1, no dilation.
    Padded,
}

impl TemporalConv {
    fn padding_dilation(self) -> (usize, usize) {
        match self {
            TemporalConv::Dilated => (2, 2),
            TemporalConv::Padded => (1, 1),
        }
    }
}

/// Spatio-temporal attention: channel-collapsing 2-D conv, then a 1-D conv
/// over time with the 128 spatial cells as channels, then sigmoid.
pub struct StAttention {
    spatial: Conv2d,
    temporal_weight: Tensor,
    temporal_bias: Tensor,
    mode: TemporalConv,
    grid: (usize, usize),
}

impl StAttention {
    pub fn new(store: &mut ParamStore, name: &str, grid: (usize, usize), channels: usize, mode: TemporalConv) -> Result<Self> {
        if grid.0 * grid.1 != ATTENTION_CELLS {
            return Err(Error::ShapeMismatch {
                expected: vec![16, 8],
                actual: vec![grid.0, grid.1],
            });
        }
        let spatial = Conv2d::new(store, &format!("{name}.spatial"), grid, channels, 1, 3, 1, 1, false)?;
        let bound = 1.0 / ((ATTENTION_CELLS * 3) as f64).sqrt();
        let temporal_weight = store.uniform(
            &format!("{name}.temporal.weight"),
            &[ATTENTION_CELLS, ATTENTION_CELLS, 3],
            bound,
        )?;
        let temporal_bias = store.zeros(&format!("{name}.temporal.bias"), &[ATTENTION_CELLS])?;
        Ok(Self {
            spatial,
            temporal_weight,
            temporal_bias,
            mode,
            grid,
        })
    }

    /// Pre-sigmoid scores `(B, T, H, W)` for features `(B, T, H, W, C)`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let (b, t, h, w, c) = features.dims5()?;
        if (h, w) != self.grid {
            return Err(Error::ShapeMismatch {
                expected: vec![b, t, self.grid.0, self.grid.1, c],
                actual: vec![b, t, h, w, c],
            });
        }
        let spatial = self.spatial.forward(&features.reshape((b * t, h, w, c))?)?;
        // (B*T, H, W, 1) -> (B, T, 128) -> (B, 128, T)
        let seq = spatial.reshape((b, t, h * w))?.transpose(1, 2)?.contiguous()?;
        let (pad, dil) = self.mode.padding_dilation();
        let mixed = temporal_conv(&seq, &self.temporal_weight, pad, dil)?;
        let mixed = mixed.broadcast_add(&self.temporal_bias.reshape((1, ATTENTION_CELLS, 1))?)?;
        if mixed.dims()[2] != t {
            return Err(Error::ShapeMismatch {
                expected: vec![b, ATTENTION_CELLS, t],
                actual: mixed.dims().to_vec(),
            });
        }
        Ok(mixed.transpose(1, 2)?.contiguous()?.reshape((b, t, h, w))?)
    }

    /// Attention map `(B, T, H, W)` with entries in (0, 1).
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits(features)?)?)
    }
}

/// Stride-1 1-D convolution of `x` `(B, Cin, L)` with `weight` `(Cout, Cin, K)`
/// as one matmul over zero-padded shifted copies of the input.
fn temporal_conv(x: &Tensor, weight: &Tensor, pad: usize, dilation: usize) -> Result<Tensor> {
    let (b, cin, len) = x.dims3()?;
    let (cout, wcin, k) = weight.dims3()?;
    if wcin != cin {
        return Err(Error::DimensionMismatch { left: cin, right: wcin });
    }
    let span = dilation * (k - 1);
    if len + 2 * pad < span + 1 {
        return Err(Error::ShapeMismatch {
            expected: vec![b, cin, span + 1 - 2 * pad],
            actual: vec![b, cin, len],
        });
    }
    let out_len = len + 2 * pad - span;
    let padded = x.pad_with_zeros(2, pad, pad)?;
    let taps: Vec<Tensor> = (0..k)
        .map(|j| padded.narrow(2, j * dilation, out_len))
        .collect::<candle_core::Result<_>>()?;
    // (B, K*Cin, L_out), tap-major
    let cols = Tensor::cat(&taps, 1)?;
    let w = weight.permute((0, 2, 1))?.reshape((1, cout, k * cin))?;
    Ok(w.broadcast_matmul(&cols)?)
}
