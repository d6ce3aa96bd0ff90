use candle_core::{Module, ModuleT, Result, Tensor};
use candle_nn::{BatchNorm, Linear, VarBuilder};

use super::layers::{batch_norm, conv_sq, global_avg_pool, linear, max_pool, Conv, Dropout};
use super::{Backbone, HeadOptions};

#[derive(Debug)]
struct Block {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    /// Third 1×1 stage of a bottleneck block.
    conv3: Option<(Conv, BatchNorm)>,
    downsample: Option<(Conv, BatchNorm)>,
}

impl Block {
    fn basic(vb: VarBuilder, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Block {
            conv1: conv_sq(vb.pp("conv1"), c_in, c_out, 3, stride, 1, false)?,
            bn1: batch_norm(vb.pp("bn1"), c_out, 1e-5)?,
            conv2: conv_sq(vb.pp("conv2"), c_out, c_out, 3, 1, 1, false)?,
            bn2: batch_norm(vb.pp("bn2"), c_out, 1e-5)?,
            conv3: None,
            downsample: downsample(&vb, c_in, c_out, stride)?,
        })
    }

    fn bottleneck(vb: VarBuilder, c_in: usize, width: usize, stride: usize) -> Result<Self> {
        let c_out = width * 4;
        Ok(Block {
            conv1: conv_sq(vb.pp("conv1"), c_in, width, 1, 1, 0, false)?,
            bn1: batch_norm(vb.pp("bn1"), width, 1e-5)?,
            conv2: conv_sq(vb.pp("conv2"), width, width, 3, stride, 1, false)?,
            bn2: batch_norm(vb.pp("bn2"), width, 1e-5)?,
            conv3: Some((
                conv_sq(vb.pp("conv3"), width, c_out, 1, 1, 0, false)?,
                batch_norm(vb.pp("bn3"), c_out, 1e-5)?,
            )),
            downsample: downsample(&vb, c_in, c_out, stride)?,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        y = self.bn2.forward_t(&self.conv2.forward(&y)?, train)?;
        if let Some((c, bn)) = &self.conv3 {
            y = bn.forward_t(&c.forward(&y.relu()?)?, train)?;
        }
        let identity = match &self.downsample {
            Some((c, bn)) => bn.forward_t(&c.forward(x)?, train)?,
            None => x.clone(),
        };
        (y + identity)?.relu()
    }
}

fn downsample(vb: &VarBuilder, c_in: usize, c_out: usize, stride: usize) -> Result<Option<(Conv, BatchNorm)>> {
    if stride == 1 && c_in == c_out {
        return Ok(None);
    }
    let vb = vb.pp("downsample");
    Ok(Some((conv_sq(vb.pp("0"), c_in, c_out, 1, stride, 0, false)?, batch_norm(vb.pp("1"), c_out, 1e-5)?)))
}

/// torchvision ResNet. Grad-CAM layer: output of `layer4`.
#[derive(Debug)]
pub struct ResNet {
    conv1: Conv,
    bn1: BatchNorm,
    layers: Vec<Vec<Block>>,
    dropout: Dropout,
    fc: Linear,
}

impl ResNet {
    pub fn new(vb: VarBuilder, depth: usize, head: &HeadOptions) -> Result<Self> {
        let (bottleneck, counts) = match depth {
            18 => (false, [2, 2, 2, 2]),
            34 => (false, [3, 4, 6, 3]),
            50 => (true, [3, 4, 6, 3]),
            101 => (true, [3, 4, 23, 3]),
            152 => (true, [3, 8, 36, 3]),
            _ => candle_core::bail!("unsupported ResNet depth {depth}"),
        };
        let expansion = if bottleneck { 4 } else { 1 };
        let mut c_in = 64;
        let mut layers = Vec::new();
        for (i, (&n, width)) in counts.iter().zip([64, 128, 256, 512]).enumerate() {
            let vb_l = vb.pp(format!("layer{}", i + 1));
            let mut blocks = Vec::new();
            for b in 0..n {
                let stride = if b == 0 && i > 0 { 2 } else { 1 };
                let block = if bottleneck {
                    Block::bottleneck(vb_l.pp(b), c_in, width, stride)?
                } else {
                    Block::basic(vb_l.pp(b), c_in, width, stride)?
                };
                blocks.push(block);
                c_in = width * expansion;
            }
            layers.push(blocks);
        }
        Ok(ResNet {
            conv1: conv_sq(vb.pp("conv1"), 3, 64, 7, 2, 3, false)?,
            bn1: batch_norm(vb.pp("bn1"), 64, 1e-5)?,
            layers,
            dropout: head.dropout(0.0),
            fc: linear(vb.pp("fc"), 512 * expansion, head.num_outputs)?,
        })
    }
}

impl Backbone for ResNet {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let mut x = max_pool(&x, 3, 2, 1, false)?;
        for blocks in &self.layers {
            for b in blocks {
                x = b.forward_t(&x, train)?;
            }
        }
        Ok(x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.fc.forward(&self.dropout.forward_t(&x, train)?)
    }
}
