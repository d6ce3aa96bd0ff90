//! Layer helpers on top of candle with PyTorch semantics.
//!
//! candle's pooling ops only differentiate when kernel == stride, so
//! overlapping and padded pools are built from strided shifted views, which
//! differentiate through narrow/reshape/maximum. Depthwise convolutions use
//! the same views instead of one convolution per channel.

use std::sync::{Arc, Mutex};

use candle_core::{DType, Module, ModuleT, Result, Tensor, D};
use candle_nn::{BatchNorm, BatchNormConfig, Linear, VarBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type SharedRng = Arc<Mutex<ChaCha8Rng>>;

/// Finite stand-in for -inf in max-pool padding.
const NEG_PAD: f64 = -3.0e38;

#[derive(Clone, Debug)]
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: (usize, usize),
    groups: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn conv(
    vb: VarBuilder,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
    groups: usize,
    bias: bool,
) -> Result<Conv> {
    let weight = vb.get((c_out, c_in / groups, kernel.0, kernel.1), "weight")?;
    let bias = if bias { Some(vb.get(c_out, "bias")?) } else { None };
    Ok(Conv { weight, bias, stride, padding, groups })
}

/// Square-kernel convolution with symmetric padding `k / 2` unless given.
pub fn conv_sq(vb: VarBuilder, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Result<Conv> {
    conv(vb, c_in, c_out, (k, k), stride, (pad, pad), 1, bias)
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_in = x.dim(1)?;
        let y = if self.groups > 1 && self.groups == c_in && self.weight.dim(0)? == c_in {
            depthwise(x, &self.weight, self.stride, self.padding)?
        } else if self.padding.0 == self.padding.1 {
            x.conv2d(&self.weight, self.padding.0, self.stride, 1, self.groups)?
        } else {
            let x = x.pad_with_zeros(2, self.padding.0, self.padding.0)?;
            let x = x.pad_with_zeros(3, self.padding.1, self.padding.1)?;
            x.conv2d(&self.weight, 0, self.stride, 1, self.groups)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

fn out_len(len: usize, k: usize, stride: usize, pad: usize, ceil: bool) -> usize {
    let span = len + 2 * pad - k;
    if ceil {
        let mut o = span.div_ceil(stride) + 1;
        // The last window must start inside the input or left padding.
        if (o - 1) * stride >= len + pad {
            o -= 1;
        }
        o
    } else {
        span / stride + 1
    }
}

/// Pads `x` (N, C, H, W) with `fill` so that windows of size `k` at the given
/// strides fit `out` positions, then returns every strided shifted view as
/// `views[i][j]` of shape (N, C, out_h, out_w).
fn shifted_views(
    x: &Tensor,
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    out: (usize, usize),
    fill: f64,
) -> Result<Vec<Vec<Tensor>>> {
    let (n, c, h, w) = x.dims4()?;
    // Enough room for the reshape trick: start offset + stride * out.
    let need_h = (k.0 - 1 + stride.0 * out.0).max(h + 2 * pad.0);
    let need_w = (k.1 - 1 + stride.1 * out.1).max(w + 2 * pad.1);
    let padded = pad_const(x, (pad.0, need_h - h - pad.0), (pad.1, need_w - w - pad.1), fill)?;
    let mut views = Vec::with_capacity(k.0);
    for i in 0..k.0 {
        let rows = padded.narrow(2, i, stride.0 * out.0)?;
        let rows = if stride.0 > 1 {
            rows.reshape((n, c, out.0, stride.0, need_w))?.narrow(3, 0, 1)?.squeeze(3)?
        } else {
            rows
        };
        let mut row_views = Vec::with_capacity(k.1);
        for j in 0..k.1 {
            let v = rows.narrow(3, j, stride.1 * out.1)?;
            let v = if stride.1 > 1 {
                v.reshape((n, c, out.0, out.1, stride.1))?.narrow(4, 0, 1)?.squeeze(4)?
            } else {
                v
            };
            row_views.push(v);
        }
        views.push(row_views);
    }
    Ok(views)
}

fn pad_const(x: &Tensor, ph: (usize, usize), pw: (usize, usize), fill: f64) -> Result<Tensor> {
    if fill == 0.0 {
        return x.pad_with_zeros(2, ph.0, ph.1)?.pad_with_zeros(3, pw.0, pw.1);
    }
    let (n, c, h, w) = x.dims4()?;
    let (device, dtype) = (x.device().clone(), x.dtype());
    let block = |hh: usize, ww: usize| Tensor::full(fill, (n, c, hh, ww), &device)?.to_dtype(dtype);
    let mut x = x.clone();
    if ph.0 + ph.1 > 0 {
        let mut parts = Vec::new();
        if ph.0 > 0 {
            parts.push(block(ph.0, w)?);
        }
        parts.push(x.clone());
        if ph.1 > 0 {
            parts.push(block(ph.1, w)?);
        }
        x = Tensor::cat(&parts, 2)?;
    }
    let hh = h + ph.0 + ph.1;
    if pw.0 + pw.1 > 0 {
        let mut parts = Vec::new();
        if pw.0 > 0 {
            parts.push(block(hh, pw.0)?);
        }
        parts.push(x.clone());
        if pw.1 > 0 {
            parts.push(block(hh, pw.1)?);
        }
        x = Tensor::cat(&parts, 3)?;
    }
    Ok(x)
}

fn check_window(h: usize, w: usize, k: usize, pad: usize) -> Result<()> {
    if h.min(w) + 2 * pad < k {
        candle_core::bail!("{h}x{w} input is smaller than the {k}x{k} pooling window; use a larger image size")
    }
    Ok(())
}

/// Max pooling with PyTorch's padding and `ceil_mode` semantics.
pub fn max_pool(x: &Tensor, k: usize, stride: usize, pad: usize, ceil: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    check_window(h, w, k, pad)?;
    if k == stride && pad == 0 && !ceil && h % k == 0 && w % k == 0 {
        return x.max_pool2d(k);
    }
    let out = (out_len(h, k, stride, pad, ceil), out_len(w, k, stride, pad, ceil));
    let views = shifted_views(x, (k, k), (stride, stride), (pad, pad), out, NEG_PAD)?;
    let mut acc: Option<Tensor> = None;
    for v in views.into_iter().flatten() {
        acc = Some(match acc {
            None => v,
            Some(a) => a.maximum(&v)?,
        });
    }
    Ok(acc.expect("non-empty kernel"))
}

/// Average pooling; zero padding is counted in the divisor.
pub fn avg_pool(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    check_window(h, w, k, pad)?;
    if k == stride && pad == 0 && h % k == 0 && w % k == 0 {
        return x.avg_pool2d(k);
    }
    let out = (out_len(h, k, stride, pad, false), out_len(w, k, stride, pad, false));
    let views = shifted_views(x, (k, k), (stride, stride), (pad, pad), out, 0.0)?;
    let mut acc: Option<Tensor> = None;
    for v in views.into_iter().flatten() {
        acc = Some(match acc {
            None => v,
            Some(a) => (a + v)?,
        });
    }
    acc.expect("non-empty kernel").affine(1.0 / (k * k) as f64, 0.0)
}

fn depthwise(x: &Tensor, weight: &Tensor, stride: usize, pad: (usize, usize)) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (_, _, kh, kw) = weight.dims4()?;
    let out = (out_len(h, kh, stride, pad.0, false), out_len(w, kw, stride, pad.1, false));
    let views = shifted_views(x, (kh, kw), (stride, stride), pad, out, 0.0)?;
    let mut acc: Option<Tensor> = None;
    for (i, row) in views.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            let wij = weight.narrow(2, i, 1)?.narrow(3, j, 1)?.reshape((1, c, 1, 1))?;
            let term = v.broadcast_mul(&wij)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
    }
    Ok(acc.expect("non-empty kernel"))
}

/// PyTorch `AdaptiveAvgPool2d`.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    if (oh, ow) == (1, 1) {
        return x.mean_keepdim(3)?.mean_keepdim(2);
    }
    let bins = |len: usize, out: usize| -> Vec<(usize, usize)> {
        (0..out).map(|i| (i * len / out, ((i + 1) * len).div_ceil(out))).collect()
    };
    let rows = bins(h, oh)
        .into_iter()
        .map(|(s, e)| x.narrow(2, s, e - s)?.mean_keepdim(2))
        .collect::<Result<Vec<_>>>()?;
    let x = Tensor::cat(&rows, 2)?;
    let cols = bins(w, ow)
        .into_iter()
        .map(|(s, e)| x.narrow(3, s, e - s)?.mean_keepdim(3))
        .collect::<Result<Vec<_>>>()?;
    Tensor::cat(&cols, 3)
}

/// Global average pool to (N, C).
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.mean(D::Minus1)?.mean(D::Minus1)
}

pub fn batch_norm(vb: VarBuilder, c: usize, eps: f64) -> Result<BatchNorm> {
    let cfg = BatchNormConfig { eps, remove_mean: true, affine: true, momentum: 0.1 };
    candle_nn::batch_norm(c, cfg, vb)
}

pub fn linear(vb: VarBuilder, c_in: usize, c_out: usize) -> Result<Linear> {
    candle_nn::linear(c_in, c_out, vb)
}

pub fn relu6(x: &Tensor) -> Result<Tensor> {
    x.clamp(0f32, 6f32)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    x * candle_nn::ops::sigmoid(x)?
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    None,
    Relu,
    Relu6,
    Silu,
}

impl Act {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Act::None => Ok(x.clone()),
            Act::Relu => x.relu(),
            Act::Relu6 => relu6(x),
            Act::Silu => silu(x),
        }
    }
}

/// Conv → BatchNorm → activation, stored as `{prefix}.0` and `{prefix}.1`
/// (torchvision's `Conv2dNormActivation`), or under custom names.
#[derive(Clone, Debug)]
pub struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
    act: Act,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vb_conv: VarBuilder,
        vb_bn: VarBuilder,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        groups: usize,
        eps: f64,
        act: Act,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: conv(vb_conv, c_in, c_out, kernel, stride, padding, groups, false)?,
            bn: batch_norm(vb_bn, c_out, eps)?,
            act,
        })
    }

    /// Sequential layout: conv at `.0`, norm at `.1`, "same" padding.
    pub fn seq(vb: VarBuilder, c_in: usize, c_out: usize, k: usize, stride: usize, groups: usize, act: Act) -> Result<Self> {
        let p = (k - 1) / 2;
        Self::new(vb.pp("0"), vb.pp("1"), c_in, c_out, (k, k), stride, (p, p), groups, 1e-5, act)
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn.forward_t(&self.conv.forward(x)?, train)?;
        self.act.apply(&y)
    }
}

/// Inverted dropout driven by a seeded generator.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub p: f32,
    rng: SharedRng,
}

impl Dropout {
    pub fn new(p: f32, rng: SharedRng) -> Self {
        Dropout { p, rng }
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if !train || self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f32> = {
            let mut rng = self.rng.lock().expect("rng lock");
            (0..x.elem_count()).map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect()
        };
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        x * mask
    }
}

/// Per-sample residual branch dropping (torchvision `StochasticDepth`, row mode).
#[derive(Clone, Debug)]
pub struct StochasticDepth {
    p: f32,
    rng: SharedRng,
}

impl StochasticDepth {
    pub fn new(p: f32, rng: SharedRng) -> Self {
        StochasticDepth { p, rng }
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if !train || self.p <= 0.0 {
            return Ok(x.clone());
        }
        let n = x.dim(0)?;
        let keep = 1.0 - self.p;
        let mask: Vec<f32> = {
            let mut rng = self.rng.lock().expect("rng lock");
            (0..n).map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect()
        };
        let mask = Tensor::from_vec(mask, (n, 1, 1, 1), x.device())?.to_dtype(x.dtype())?;
        x.broadcast_mul(&mask)
    }
}

pub fn flatten(x: &Tensor) -> Result<Tensor> {
    x.flatten_from(1)
}

pub fn f32_dtype() -> DType {
    DType::F32
}
