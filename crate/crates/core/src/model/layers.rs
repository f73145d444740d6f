//! Channels-last convolution and dense layers over a seeded parameter store.
//!
//! Convolutions lower to an explicit im2col custom op followed by a matmul,
//! which gives a cheap backward pass (col2im + two GEMMs) on CPU.

use std::collections::BTreeMap;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Device, Layout, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named trainable tensors, created in a deterministic order from a seeded
/// stream.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    /// Non-trainable state such as running statistics.
    buffers: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeMap::new(),
            dtype,
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_new(&self, name: &str) -> Result<()> {
        if self.vars.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        Ok(())
    }

    /// Uniform(-bound, bound) initialization.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        self.check_new(name)?;
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.uniform(name, shape, 0.0)
    }

    /// Trainable tensor filled with `value`.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.check_new(name)?;
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Non-trainable state filled with `value`.
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_new(name)?;
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        let var = Var::from_tensor(&t)?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    /// Parameters and buffers together, for checkpointing.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter().chain(self.buffers.iter())
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Im2Col {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Im2Col {
    pub fn new(h: usize, w: usize, c: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(Error::Config(format!(
                "kernel {k} does not fit a {h}x{w} input with padding {pad}"
            )));
        }
        Ok(Self {
            h,
            w,
            c,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn row_len(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Calls `f(src_offset, dst_offset)` for each in-bounds channel run.
    fn for_each_tap(&self, n: usize, mut f: impl FnMut(usize, usize)) {
        let Im2Col { h, w, c, k, stride, pad, ho, wo } = *self;
        let row = self.row_len();
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ((b * ho + oy) * wo + ox) * row;
                    for ky in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let x = (ox * stride + kx) as isize - pad as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let src = ((b * h + y as usize) * w + x as usize) * c;
                            f(src, base + (ky * k + kx) * c);
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: Copy + Default>(&self, src: &[T], n: usize) -> Vec<T> {
        let c = self.c;
        let mut dst = vec![T::default(); n * self.ho * self.wo * self.row_len()];
        self.for_each_tap(n, |s, d| dst[d..d + c].copy_from_slice(&src[s..s + c]));
        dst
    }

    fn fold<T: Copy + Default + std::ops::AddAssign>(&self, cols: &[T], n: usize) -> Vec<T> {
        let c = self.c;
        let mut dst = vec![T::default(); n * self.h * self.w * c];
        self.for_each_tap(n, |s, d| {
            for i in 0..c {
                dst[s + i] += cols[d + i];
            }
        });
        dst
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col-nhwc"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = layout.dims()[0];
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("im2col input must be contiguous".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.unfold(&v[start..end], n)),
            CpuStorage::F64(v) => CpuStorage::F64(self.unfold(&v[start..end], n)),
            other => candle_core::bail!("im2col: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, Shape::from((n * self.ho * self.wo, self.row_len()))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let n = arg.dims()[0];
        let g = grad.contiguous()?.flatten_all()?;
        let folded = match g.dtype() {
            DType::F32 => Tensor::from_vec(self.fold(&g.to_vec1::<f32>()?, n), arg.shape(), arg.device())?,
            DType::F64 => Tensor::from_vec(self.fold(&g.to_vec1::<f64>()?, n), arg.shape(), arg.device())?,
            dt => candle_core::bail!("im2col: unsupported dtype {dt:?}"),
        };
        Ok(Some(folded))
    }
}

/// `max(x + b, 0)` for `x` `(N, C)` and `b` `(C)` in one pass.
#[derive(Debug, Clone, Copy)]
struct BiasRelu;

trait Scalar: Copy + Default + PartialOrd + std::ops::Add<Output = Self> + std::ops::AddAssign {}
impl Scalar for f32 {}
impl Scalar for f64 {}

fn bias_relu<T: Scalar>(x: &[T], b: &[T]) -> Vec<T> {
    let zero = T::default();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(b.len()) {
        out.extend(row.iter().zip(b).map(|(&v, &bb)| {
            let y = v + bb;
            if y > zero {
                y
            } else {
                zero
            }
        }));
    }
    out
}

/// Gradients of `bias_relu` given its output.
fn bias_relu_grad<T: Scalar>(res: &[T], grad: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let zero = T::default();
    let mut gx = Vec::with_capacity(res.len());
    let mut gb = vec![zero; c];
    for (r, g) in res.chunks_exact(c).zip(grad.chunks_exact(c)) {
        for i in 0..c {
            let v = if r[i] > zero { g[i] } else { zero };
            gx.push(v);
            gb[i] += v;
        }
    }
    (gx, gb)
}

fn contiguous_slice<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("bias-relu input must be contiguous".into()))?;
    Ok(&v[start..end])
}

impl CustomOp2 for BiasRelu {
    fn name(&self) -> &'static str {
        "bias-relu"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(b)) => CpuStorage::F32(bias_relu(contiguous_slice(x, l1)?, contiguous_slice(b, l2)?)),
            (CpuStorage::F64(x), CpuStorage::F64(b)) => CpuStorage::F64(bias_relu(contiguous_slice(x, l1)?, contiguous_slice(b, l2)?)),
            _ => candle_core::bail!("bias-relu: unsupported dtype {:?}", s1.dtype()),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(&self, arg1: &Tensor, arg2: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let c = arg2.elem_count();
        let res = res.flatten_all()?;
        let grad = grad.contiguous()?.flatten_all()?;
        let (gx, gb) = match res.dtype() {
            DType::F32 => {
                let (gx, gb) = bias_relu_grad(&res.to_vec1::<f32>()?, &grad.to_vec1::<f32>()?, c);
                (Tensor::from_vec(gx, arg1.shape(), arg1.device())?, Tensor::from_vec(gb, arg2.shape(), arg2.device())?)
            }
            DType::F64 => {
                let (gx, gb) = bias_relu_grad(&res.to_vec1::<f64>()?, &grad.to_vec1::<f64>()?, c);
                (Tensor::from_vec(gx, arg1.shape(), arg1.device())?, Tensor::from_vec(gb, arg2.shape(), arg2.device())?)
            }
            dt => candle_core::bail!("bias-relu: unsupported dtype {dt:?}"),
        };
        Ok((Some(gx), Some(gb)))
    }
}

const SHIFT_MAX_COUT: usize = 4;

/// Square-kernel 2-D convolution over `(N, H, W, C)` tensors.
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    geometry: Im2Col,
    cout: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (h, w): (usize, usize),
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        relu_gain: bool,
    ) -> Result<Self> {
        let geometry = Im2Col::new(h, w, cin, kernel, stride, pad)?;
        let fan_in = (kernel * kernel * cin) as f64;
        let bound = if relu_gain {
            (6.0 / fan_in).sqrt()
        } else {
            1.0 / fan_in.sqrt()
        };
        let weight = store.uniform(&format!("{name}.weight"), &[kernel * kernel * cin, cout], bound)?;
        let bias = store.zeros(&format!("{name}.bias"), &[cout])?;
        Ok(Self {
            weight,
            bias,
            geometry,
            cout,
        })
    }

    pub fn output_hw(&self) -> (usize, usize) {
        (self.geometry.ho, self.geometry.wo)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.linear_part(x)?.broadcast_add(&self.bias)?;
        Ok(out.reshape((x.dims()[0], self.geometry.ho, self.geometry.wo, self.cout))?)
    }

    /// `relu(forward(x))` with the bias and activation fused.
    pub fn forward_relu(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.linear_part(x)?.apply_op2(&self.bias, BiasRelu)?;
        Ok(out.reshape((x.dims()[0], self.geometry.ho, self.geometry.wo, self.cout))?)
    }

    /// Stride-1 convolution with few output channels: project every pixel
    /// onto all taps at once, then sum the shifted tap planes.
    fn shift_add(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        let Im2Col { k, pad, ho, wo, .. } = self.geometry;
        let taps = k * k;
        let wt = self.weight.reshape((taps, c, self.cout))?.permute((1, 0, 2))?.reshape((c, taps * self.cout))?;
        let proj = x.reshape((n * h * w, c))?.matmul(&wt)?.reshape((n, h, w, taps, self.cout))?;
        let proj = proj.pad_with_zeros(1, pad, pad)?.pad_with_zeros(2, pad, pad)?;
        let mut acc: Option<Tensor> = None;
        for ky in 0..k {
            for kx in 0..k {
                let plane = proj.narrow(1, ky, ho)?.narrow(2, kx, wo)?.narrow(3, ky * k + kx, 1)?;
                acc = Some(match acc {
                    None => plane,
                    Some(a) => (a + plane)?,
                });
            }
        }
        let out = acc.expect("kernel has at least one tap");
        Ok(out.contiguous()?.reshape((n * ho * wo, self.cout))?)
    }

    fn linear_part(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        let g = &self.geometry;
        if (h, w, c) != (g.h, g.w, g.c) {
            return Err(Error::ShapeMismatch {
                expected: vec![n, g.h, g.w, g.c],
                actual: vec![n, h, w, c],
            });
        }
        Ok(if g.k == 1 && g.stride == 1 && g.pad == 0 {
            x.reshape((n * h * w, c))?.matmul(&self.weight)?
        } else if g.stride == 1 && self.cout <= SHIFT_MAX_COUT {
            self.shift_add(x)?
        } else {
            x.contiguous()?.apply_op1(*g)?.matmul(&self.weight)?
        })
    }
}

/// Batch normalization of `(N, D)` features. Training uses batch statistics
/// and updates running estimates; evaluation uses the running estimates.
pub struct FeatureNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl FeatureNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            beta: store.zeros(&format!("{name}.bias"), &[dim])?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[dim], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[dim], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    fn affine(&self, normed: &Tensor) -> Result<Tensor> {
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _) = x.dims2()?;
        if n < 2 {
            return Err(Error::DegenerateBatch("batch norm needs at least 2 rows".into()));
        }
        let mean = x.mean_keepdim(0)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(0)?;
        let normed = centered.broadcast_div(&(var.affine(1.0, self.eps)?.sqrt()?))?;
        let m = self.momentum;
        let unbiased = var.detach().squeeze(0)?.affine(n as f64 / (n - 1) as f64, 0.0)?;
        self.running_mean
            .set(&(self.running_mean.as_tensor().affine(1.0 - m, 0.0)? + mean.detach().squeeze(0)?.affine(m, 0.0)?)?)?;
        self.running_var
            .set(&(self.running_var.as_tensor().affine(1.0 - m, 0.0)? + unbiased.affine(m, 0.0)?)?)?;
        self.affine(&normed)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let std = self.running_var.as_tensor().affine(1.0, self.eps)?.sqrt()?;
        let normed = x.broadcast_sub(self.running_mean.as_tensor())?.broadcast_div(&std)?;
        self.affine(&normed)
    }
}

/// `x W + b` with `W` stored as `(in, out)`.
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize) -> Result<Self> {
        let weight = store.uniform(&format!("{name}.weight"), &[dout, din], 1.0 / (din as f64).sqrt())?;
        let bias = store.zeros(&format!("{name}.bias"), &[dout])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    /// `(out, in)` weight.
    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}
