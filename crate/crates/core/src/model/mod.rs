//! Three-stream multi-task network.
//!
//! A shared CNN backbone produces per-frame feature maps on a 16x8 grid. Two
//! attribute streams (ID-relevant and ID-irrelevant) each run a
//! size-preserving convolution, a spatio-temporal attention block and an
//! attribute classifier. Their attention maps re-weight the backbone features
//! for the Re-ID branch, whose final feature concatenates the plain pooled
//! features with both attention-weighted poolings.
//!
//! All activations are channels-last: `(batch, time, height, width, channels)`.

mod attention;
mod checkpoint;
mod layers;

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

pub use attention::{StAttention, TemporalConv, ATTENTION_CELLS};
pub use layers::{Conv2d, FeatureNorm, Linear, ParamStore};

use crate::distance::{normalize, FeatureMatrix};
use crate::error::{Error, Result};
use crate::sampler::Clip;

pub const GRID: (usize, usize) = (16, 8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScale {
    Toy,
    PaperFaithful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    /// Output channels of each stride-2 3x3 backbone stage.
    pub backbone_widths: Vec<usize>,
    /// Channels of the final backbone map; also the per-stream feature length.
    pub channels: usize,
    pub temporal_conv: TemporalConv,
    /// Extra size-preserving conv on the Re-ID branch before attention.
    pub reid_conv: bool,
    /// Re-weight Re-ID features by the attribute attention maps. When off the
    /// maps are replaced by ones.
    pub attention: bool,
    pub rel_attr_width: usize,
    pub irrel_attr_width: usize,
    pub num_classes: usize,
    /// Batch-normalize the fused feature before the classifier and the
    /// metric losses.
    #[serde(default = "default_true")]
    pub feature_bn: bool,
}

fn default_true() -> bool {
    true
}

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the stored running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl ModelConfig {
    /// Input 64x128, three stride-2 stages, 64 channels.
    pub fn toy(rel_attr_width: usize, irrel_attr_width: usize, num_classes: usize) -> Self {
        Self {
            input_width: 64,
            input_height: 128,
            backbone_widths: vec![16, 32, 64],
            channels: 64,
            temporal_conv: TemporalConv::Dilated,
            reid_conv: false,
            attention: true,
            rel_attr_width,
            irrel_attr_width,
            num_classes,
            feature_bn: true,
        }
    }

    /// Input 128x256 and 2048-channel frame features on the 16x8 grid.
    pub fn paper_faithful(rel_attr_width: usize, irrel_attr_width: usize, num_classes: usize) -> Self {
        Self {
            input_width: 128,
            input_height: 256,
            backbone_widths: vec![64, 128, 256, 512],
            channels: 2048,
            ..Self::toy(rel_attr_width, irrel_attr_width, num_classes)
        }
    }

    pub fn for_scale(scale: ModelScale, rel: usize, irrel: usize, classes: usize) -> Self {
        match scale {
            ModelScale::Toy => Self::toy(rel, irrel, classes),
            ModelScale::PaperFaithful => Self::paper_faithful(rel, irrel, classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let factor = 1usize << self.backbone_widths.len();
        if self.input_height != GRID.0 * factor || self.input_width != GRID.1 * factor {
            return Err(Error::Config(format!(
                "{} stride-2 stages need input {}x{} (width x height), got {}x{}",
                self.backbone_widths.len(),
                GRID.1 * factor,
                GRID.0 * factor,
                self.input_width,
                self.input_height
            )));
        }
        if self.channels == 0 || self.backbone_widths.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.rel_attr_width == 0 || self.irrel_attr_width == 0 || self.num_classes == 0 {
            return Err(Error::Config("attribute widths and class count must be positive".into()));
        }
        Ok(())
    }

    pub fn stream_dim(&self) -> usize {
        self.channels
    }

    pub fn fused_dim(&self) -> usize {
        3 * self.channels
    }
}

/// Backbone output, `(B, T, H, W, C)`.
#[derive(Debug, Clone)]
pub struct FrameFeatureMap(Tensor);

impl FrameFeatureMap {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// `(T, C, H, W)` of one clip, whatever the batch size.
    pub fn dims_tchw(&self) -> (usize, usize, usize, usize) {
        let d = self.0.dims();
        (d[1], d[4], d[2], d[3])
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    IdRelevant,
    IdIrrelevant,
}

/// One attribute stream's outputs.
#[derive(Debug, Clone)]
pub struct StreamHead {
    pub logits: Tensor,
    /// Sigmoid of `logits`, `(B, A)`.
    pub probs: Tensor,
    /// `(B, T, H, W)`, entries in (0, 1).
    pub attention: Tensor,
    /// Spatio-temporally pooled attention-weighted feature, `(B, C)`.
    pub feature: Tensor,
}

#[derive(Debug, Clone)]
pub struct StreamOutputs {
    pub frame_features: FrameFeatureMap,
    /// Concatenated `[plain, x attn_rel, x attn_irrel]` pooled features,
    /// `(B, 3C)`, after the feature batch norm when enabled. The identity
    /// classifier reads this.
    pub fused: Tensor,
    /// `fused` with unit-norm rows; the retrieval / metric-loss feature.
    pub reid_feature: Tensor,
    pub rel: StreamHead,
    pub irrel: StreamHead,
}

impl StreamOutputs {
    /// Attribute probabilities of both streams, concatenated.
    pub fn attr_probs(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.rel.probs, &self.irrel.probs], 1)?)
    }

    pub fn attr_logits(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.rel.logits, &self.irrel.logits], 1)?)
    }
}

struct Backbone {
    stages: Vec<Conv2d>,
    head: Conv2d,
}

struct AttributeStream {
    conv: Conv2d,
    attention: StAttention,
    classifier: Linear,
}

pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    rel: AttributeStream,
    irrel: AttributeStream,
    reid_conv: Option<Conv2d>,
    neck: Option<FeatureNorm>,
    classifier: Linear,
}

fn pool(x: &Tensor) -> Result<Tensor> {
    let (b, t, h, w, c) = x.dims5()?;
    Ok(x.reshape((b, t * h * w, c))?.mean(1)?)
}

fn weight_by(features: &Tensor, attention: &Tensor) -> Result<Tensor> {
    Ok(features.broadcast_mul(&attention.unsqueeze(4)?)?)
}

/// Applies a per-frame conv to `(B, T, H, W, C)` and a ReLU.
fn conv_frames(conv: &Conv2d, x: &Tensor) -> Result<Tensor> {
    let (b, t, h, w, c) = x.dims5()?;
    let y = conv.forward_relu(&x.reshape((b * t, h, w, c))?)?;
    let (_, ho, wo, co) = y.dims4()?;
    Ok(y.reshape((b, t, ho, wo, co))?)
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed, dtype, device);
        let mut hw = (cfg.input_height, cfg.input_width);
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, &cout) in cfg.backbone_widths.iter().enumerate() {
            let conv = Conv2d::new(&mut store, &format!("backbone.stage{i}"), hw, cin, cout, 3, 2, 1, true)?;
            hw = conv.output_hw();
            cin = cout;
            stages.push(conv);
        }
        debug_assert_eq!(hw, GRID);
        let c = cfg.channels;
        let head = Conv2d::new(&mut store, "backbone.head", GRID, cin, c, 1, 1, 0, true)?;
        let stream = |store: &mut ParamStore, name: &str, width: usize| -> Result<AttributeStream> {
            Ok(AttributeStream {
                conv: Conv2d::new(store, &format!("{name}.conv"), GRID, c, c, 1, 1, 0, true)?,
                attention: StAttention::new(store, &format!("{name}.attention"), GRID, c, cfg.temporal_conv)?,
                classifier: Linear::new(store, &format!("{name}.classifier"), c, width)?,
            })
        };
        let rel = stream(&mut store, "id_relevant", cfg.rel_attr_width)?;
        let irrel = stream(&mut store, "id_irrelevant", cfg.irrel_attr_width)?;
        let reid_conv = if cfg.reid_conv {
            Some(Conv2d::new(&mut store, "reid.conv", GRID, c, c, 1, 1, 0, true)?)
        } else {
            None
        };
        let neck = if cfg.feature_bn {
            Some(FeatureNorm::new(&mut store, "reid.neck", cfg.fused_dim())?)
        } else {
            None
        };
        let classifier = Linear::new(&mut store, "reid.classifier", cfg.fused_dim(), cfg.num_classes)?;
        Ok(Self {
            cfg,
            store,
            backbone: Backbone { stages, head },
            rel,
            irrel,
            reid_conv,
            neck,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Identity classifier over the fused feature.
    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    /// Stacks clip frames into a normalized `(B, T, H, W, 3)` tensor, resizing
    /// frames that do not match the input size.
    pub fn clips_to_tensor(&self, clips: &[Clip]) -> Result<Tensor> {
        let t = clips.first().map_or(0, Clip::len);
        let (w, h) = (self.cfg.input_width, self.cfg.input_height);
        let mut data = Vec::with_capacity(clips.len() * t * h * w * 3);
        for clip in clips {
            if clip.len() != t {
                return Err(Error::ShapeMismatch {
                    expected: vec![t],
                    actual: vec![clip.len()],
                });
            }
            for frame in &clip.frames {
                if frame.dimensions() == (w as u32, h as u32) {
                    data.extend_from_slice(frame.as_raw());
                } else {
                    let resized = image::imageops::resize(&**frame, w as u32, h as u32, FilterType::Triangle);
                    data.extend_from_slice(resized.as_raw());
                }
            }
        }
        self.pixels_to_tensor(&data, clips.len(), t)
    }

    /// Normalizes raw RGB bytes laid out as `(B, T, H, W, 3)` at the input size.
    pub fn pixels_to_tensor(&self, pixels: &[u8], batch: usize, frames: usize) -> Result<Tensor> {
        let shape = (batch, frames, self.cfg.input_height, self.cfg.input_width, 3);
        if pixels.len() != batch * frames * shape.2 * shape.3 * 3 {
            return Err(Error::ShapeMismatch {
                expected: vec![batch, frames, shape.2, shape.3, 3],
                actual: vec![pixels.len()],
            });
        }
        let data: Vec<f32> = pixels.iter().map(|&v| (f32::from(v) / 255.0 - 0.5) * 4.0).collect();
        Ok(Tensor::from_vec(data, shape, self.device())?.to_dtype(self.dtype())?)
    }

    /// Per-frame feature maps for frames `(B, T, H_in, W_in, 3)`.
    pub fn backbone(&self, frames: &Tensor) -> Result<FrameFeatureMap> {
        let dims = frames.dims();
        let (h, w) = (self.cfg.input_height, self.cfg.input_width);
        if dims.len() != 5 || dims[2] != h || dims[3] != w || dims[4] != 3 || dims[1] == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![dims.first().copied().unwrap_or(1), dims.get(1).copied().unwrap_or(1), h, w, 3],
                actual: dims.to_vec(),
            });
        }
        let mut x = frames.clone();
        for stage in &self.backbone.stages {
            x = conv_frames(stage, &x)?;
        }
        let (b, t, h, w, c) = x.dims5()?;
        let y = self.backbone.head.forward(&x.reshape((b * t, h, w, c))?)?;
        Ok(FrameFeatureMap(y.reshape((b, t, h, w, self.cfg.channels))?))
    }

    fn stream(&self, kind: StreamKind) -> &AttributeStream {
        match kind {
            StreamKind::IdRelevant => &self.rel,
            StreamKind::IdIrrelevant => &self.irrel,
        }
    }

    /// The spatio-temporal attention block of one stream.
    pub fn st_attention(&self, kind: StreamKind) -> &StAttention {
        &self.stream(kind).attention
    }

    /// Runs one attribute stream. `force_ones` replaces the attention map
    /// with the constant 1 map.
    pub fn attribute_stream_with(&self, features: &FrameFeatureMap, kind: StreamKind, force_ones: bool) -> Result<StreamHead> {
        let s = self.stream(kind);
        let x = conv_frames(&s.conv, &features.0)?;
        let attention = if force_ones {
            let (b, t, h, w, _) = x.dims5()?;
            Tensor::ones((b, t, h, w), x.dtype(), x.device())?
        } else {
            s.attention.forward(&x)?
        };
        let feature = pool(&weight_by(&x, &attention)?)?;
        let logits = s.classifier.forward(&feature)?;
        let probs = candle_nn::ops::sigmoid(&logits)?;
        Ok(StreamHead {
            logits,
            probs,
            attention,
            feature,
        })
    }

    pub fn attribute_stream(&self, features: &FrameFeatureMap, kind: StreamKind) -> Result<StreamHead> {
        self.attribute_stream_with(features, kind, false)
    }

    /// Concatenates the plain pooled feature with both attention-weighted
    /// poolings, `(B, 3C)`.
    pub fn fuse_reid_feature(&self, features: &FrameFeatureMap, attn_rel: &Tensor, attn_irrel: &Tensor) -> Result<Tensor> {
        let base = match &self.reid_conv {
            Some(conv) => conv_frames(conv, &features.0)?,
            None => features.0.clone(),
        };
        let (b, t, h, w, _) = base.dims5()?;
        for a in [attn_rel, attn_irrel] {
            if a.dims() != [b, t, h, w] {
                return Err(Error::ShapeMismatch {
                    expected: vec![b, t, h, w],
                    actual: a.dims().to_vec(),
                });
            }
        }
        let plain = pool(&base)?;
        let rel = pool(&weight_by(&base, attn_rel)?)?;
        let irrel = pool(&weight_by(&base, attn_irrel)?)?;
        Ok(Tensor::cat(&[&plain, &rel, &irrel], 1)?)
    }

    /// Evaluation-mode forward pass over frames `(B, T, H_in, W_in, 3)`.
    pub fn forward(&self, frames: &Tensor) -> Result<StreamOutputs> {
        self.forward_mode(frames, Mode::Eval)
    }

    pub fn forward_mode(&self, frames: &Tensor, mode: Mode) -> Result<StreamOutputs> {
        let frame_features = self.backbone(frames)?;
        let rel = self.attribute_stream(&frame_features, StreamKind::IdRelevant)?;
        let irrel = self.attribute_stream(&frame_features, StreamKind::IdIrrelevant)?;
        let pooled = if self.cfg.attention {
            self.fuse_reid_feature(&frame_features, &rel.attention, &irrel.attention)?
        } else {
            let ones = rel.attention.ones_like()?;
            self.fuse_reid_feature(&frame_features, &ones, &ones)?
        };
        let fused = match (&self.neck, mode) {
            (None, _) => pooled,
            (Some(bn), Mode::Train) => bn.forward_train(&pooled)?,
            (Some(bn), Mode::Eval) => bn.forward_eval(&pooled)?,
        };
        let reid_feature = normalize(&FeatureMatrix::new(fused.clone())?)?.into_tensor();
        Ok(StreamOutputs {
            frame_features,
            fused,
            reid_feature,
            rel,
            irrel,
        })
    }

    pub fn forward_clips(&self, clips: &[Clip], mode: Mode) -> Result<StreamOutputs> {
        self.forward_mode(&self.clips_to_tensor(clips)?, mode)
    }

    /// Detached, normalized Re-ID features for retrieval, in chunks.
    pub fn embed(&self, clips: &[Clip], chunk: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(clips.len());
        for part in clips.chunks(chunk.max(1)) {
            let o = self.forward_clips(part, Mode::Eval)?;
            out.extend(o.reid_feature.detach().to_dtype(DType::F32)?.to_vec2::<f32>()?);
        }
        Ok(out)
    }
}

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
