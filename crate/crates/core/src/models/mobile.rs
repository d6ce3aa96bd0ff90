//! MobileNet v2 and EfficientNet-b1.

use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{conv_sq, global_avg_pool, linear, Act, Conv, ConvBn, Dropout, SharedRng, StochasticDepth};
use super::{Backbone, HeadOptions};

/// torchvision `_make_divisible`.
fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let new = (d.max(((v + d / 2.0) / d).floor() * d)) as usize;
    if (new as f64) < 0.9 * v {
        new + divisor
    } else {
        new
    }
}

struct InvertedResidual {
    convs: Vec<ConvBn>,
    residual: bool,
}

impl InvertedResidual {
    fn new(vb: VarBuilder, c_in: usize, c_out: usize, stride: usize, expand: usize) -> Result<Self> {
        let hidden = c_in * expand;
        let vb = vb.pp("conv");
        let mut convs = Vec::new();
        let mut i = 0;
        if expand != 1 {
            convs.push(ConvBn::seq(vb.pp(i), c_in, hidden, 1, 1, 1, Act::Relu6)?);
            i += 1;
        }
        convs.push(ConvBn::seq(vb.pp(i), hidden, hidden, 3, stride, hidden, Act::Relu6)?);
        // Linear projection: conv at `i + 1`, norm at `i + 2`.
        convs.push(ConvBn::new(
            vb.pp(i + 1),
            vb.pp(i + 2),
            hidden,
            c_out,
            (1, 1),
            1,
            (0, 0),
            1,
            1e-5,
            Act::None,
        )?);
        Ok(InvertedResidual { convs, residual: stride == 1 && c_in == c_out })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.convs.iter().try_fold(x.clone(), |y, c| c.forward_t(&y, train))?;
        if self.residual {
            x + y
        } else {
            Ok(y)
        }
    }
}

/// torchvision MobileNet v2. Grad-CAM layer: output of `features.18`.
pub struct MobileNetV2 {
    stem: ConvBn,
    blocks: Vec<InvertedResidual>,
    last: ConvBn,
    dropout: Dropout,
    classifier: Linear,
}

impl MobileNetV2 {
    pub fn new(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let f = vb.pp("features");
        let settings = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
        let mut c_in = 32;
        let mut idx = 1;
        let mut blocks = Vec::new();
        for (t, c, n, s) in settings {
            for i in 0..n {
                blocks.push(InvertedResidual::new(f.pp(idx), c_in, c, if i == 0 { s } else { 1 }, t)?);
                c_in = c;
                idx += 1;
            }
        }
        Ok(MobileNetV2 {
            stem: ConvBn::seq(f.pp("0"), 3, 32, 3, 2, 1, Act::Relu6)?,
            blocks,
            last: ConvBn::seq(f.pp(idx), 320, 1280, 1, 1, 1, Act::Relu6)?,
            dropout: head.dropout(0.2),
            classifier: linear(vb.pp("classifier").pp("1"), 1280, head.num_outputs)?,
        })
    }
}

impl Backbone for MobileNetV2 {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = self.stem.forward_t(x, train)?;
        for b in &self.blocks {
            x = b.forward_t(&x, train)?;
        }
        self.last.forward_t(&x, train)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.classifier.forward(&self.dropout.forward_t(&x, train)?)
    }
}

struct SqueezeExcite {
    fc1: Conv,
    fc2: Conv,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let s = super::layers::silu(&self.fc1.forward(&s)?)?;
        let s = candle_nn::ops::sigmoid(&self.fc2.forward(&s)?)?;
        x.broadcast_mul(&s)
    }
}

struct MbConv {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
    drop_path: StochasticDepth,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    fn new(vb: VarBuilder, c_in: usize, c_out: usize, kernel: usize, stride: usize, expand_ratio: usize, sd_prob: f32, rng: SharedRng) -> Result<Self> {
        let vb = vb.pp("block");
        let expanded = make_divisible((c_in * expand_ratio) as f64, 8);
        let mut i = 0;
        let expand = if expanded != c_in {
            i += 1;
            Some(ConvBn::seq(vb.pp(0), c_in, expanded, 1, 1, 1, Act::Silu)?)
        } else {
            None
        };
        let depthwise = ConvBn::seq(vb.pp(i), expanded, expanded, kernel, stride, expanded, Act::Silu)?;
        let squeeze = (c_in / 4).max(1);
        let vb_se = vb.pp(i + 1);
        let se = SqueezeExcite {
            fc1: conv_sq(vb_se.pp("fc1"), expanded, squeeze, 1, 1, 0, true)?,
            fc2: conv_sq(vb_se.pp("fc2"), squeeze, expanded, 1, 1, 0, true)?,
        };
        let project = ConvBn::seq(vb.pp(i + 2), expanded, c_out, 1, 1, 1, Act::None)?;
        Ok(MbConv {
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && c_in == c_out,
            drop_path: StochasticDepth::new(sd_prob, rng),
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = match &self.expand {
            Some(e) => e.forward_t(x, train)?,
            None => x.clone(),
        };
        y = self.depthwise.forward_t(&y, train)?;
        y = self.se.forward(&y)?;
        y = self.project.forward_t(&y, train)?;
        if self.residual {
            self.drop_path.forward_t(&y, train)? + x
        } else {
            Ok(y)
        }
    }
}

/// torchvision EfficientNet-b1 (width 1.0, depth 1.1). Grad-CAM layer:
/// output of `features.8`.
pub struct EfficientNet {
    stem: ConvBn,
    blocks: Vec<MbConv>,
    last: ConvBn,
    dropout: Dropout,
    classifier: Linear,
}

impl EfficientNet {
    pub fn b1(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let depth_mult = 1.1f64;
        // (expand, kernel, stride, in, out, layers) of the b0 baseline.
        let base = [
            (1, 3, 1, 32, 16, 1),
            (6, 3, 2, 16, 24, 2),
            (6, 5, 2, 24, 40, 2),
            (6, 3, 2, 40, 80, 3),
            (6, 5, 1, 80, 112, 3),
            (6, 5, 2, 112, 192, 4),
            (6, 3, 1, 192, 320, 1),
        ];
        let stages: Vec<_> = base
            .iter()
            .map(|&(e, k, s, ci, co, n)| (e, k, s, ci, co, (n as f64 * depth_mult).ceil() as usize))
            .collect();
        let total: usize = stages.iter().map(|s| s.5).sum();
        let f = vb.pp("features");
        let mut blocks = Vec::new();
        let mut id = 0;
        for (si, &(e, k, s, ci, co, n)) in stages.iter().enumerate() {
            for i in 0..n {
                let sd = 0.2 * id as f32 / total as f32;
                let (c_in, stride) = if i == 0 { (ci, s) } else { (co, 1) };
                blocks.push(MbConv::new(f.pp(si + 1).pp(i), c_in, co, k, stride, e, sd, head.rng.clone())?);
                id += 1;
            }
        }
        Ok(EfficientNet {
            stem: ConvBn::seq(f.pp("0"), 3, 32, 3, 2, 1, Act::Silu)?,
            blocks,
            last: ConvBn::seq(f.pp("8"), 320, 1280, 1, 1, 1, Act::Silu)?,
            dropout: head.dropout(0.2),
            classifier: linear(vb.pp("classifier").pp("1"), 1280, head.num_outputs)?,
        })
    }
}

impl Backbone for EfficientNet {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = self.stem.forward_t(x, train)?;
        for b in &self.blocks {
            x = b.forward_t(&x, train)?;
        }
        self.last.forward_t(&x, train)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.classifier.forward(&self.dropout.forward_t(&x, train)?)
    }
}
