use candle_core::{Module, ModuleT, Result, Tensor};
use candle_nn::{BatchNorm, Linear, VarBuilder};

use super::layers::{avg_pool, batch_norm, conv_sq, global_avg_pool, linear, max_pool, Conv, Dropout};
use super::{Backbone, HeadOptions};

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;

struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv,
    norm2: BatchNorm,
    conv2: Conv,
}

impl DenseLayer {
    fn new(vb: VarBuilder, c_in: usize) -> Result<Self> {
        Ok(DenseLayer {
            norm1: batch_norm(vb.pp("norm1"), c_in, 1e-5)?,
            conv1: conv_sq(vb.pp("conv1"), c_in, BN_SIZE * GROWTH, 1, 1, 0, false)?,
            norm2: batch_norm(vb.pp("norm2"), BN_SIZE * GROWTH, 1e-5)?,
            conv2: conv_sq(vb.pp("conv2"), BN_SIZE * GROWTH, GROWTH, 3, 1, 1, false)?,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv1.forward(&self.norm1.forward_t(x, train)?.relu()?)?;
        self.conv2.forward(&self.norm2.forward_t(&y, train)?.relu()?)
    }
}

struct Transition {
    norm: BatchNorm,
    conv: Conv,
}

/// torchvision DenseNet-121. Grad-CAM layer: ReLU after `features.norm5`.
pub struct DenseNet {
    conv0: Conv,
    norm0: BatchNorm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
    dropout: Dropout,
    classifier: Linear,
}

impl DenseNet {
    pub fn new121(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let f = vb.pp("features");
        let mut c = 64;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let config = [6, 12, 24, 16];
        for (i, &n) in config.iter().enumerate() {
            let vb_b = f.pp(format!("denseblock{}", i + 1));
            let mut layers = Vec::new();
            for l in 0..n {
                layers.push(DenseLayer::new(vb_b.pp(format!("denselayer{}", l + 1)), c + l * GROWTH)?);
            }
            blocks.push(layers);
            c += n * GROWTH;
            if i + 1 < config.len() {
                let vb_t = f.pp(format!("transition{}", i + 1));
                transitions.push(Transition {
                    norm: batch_norm(vb_t.pp("norm"), c, 1e-5)?,
                    conv: conv_sq(vb_t.pp("conv"), c, c / 2, 1, 1, 0, false)?,
                });
                c /= 2;
            }
        }
        Ok(DenseNet {
            conv0: conv_sq(f.pp("conv0"), 3, 64, 7, 2, 3, false)?,
            norm0: batch_norm(f.pp("norm0"), 64, 1e-5)?,
            blocks,
            transitions,
            norm5: batch_norm(f.pp("norm5"), c, 1e-5)?,
            dropout: head.dropout(0.0),
            classifier: linear(vb.pp("classifier"), c, head.num_outputs)?,
        })
    }
}

impl Backbone for DenseNet {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.norm0.forward_t(&self.conv0.forward(x)?, train)?.relu()?;
        let mut x = max_pool(&x, 3, 2, 1, false)?;
        for (i, layers) in self.blocks.iter().enumerate() {
            let mut parts = vec![x];
            for layer in layers {
                let input = Tensor::cat(&parts, 1)?;
                parts.push(layer.forward_t(&input, train)?);
            }
            x = Tensor::cat(&parts, 1)?;
            if let Some(t) = self.transitions.get(i) {
                let y = t.conv.forward(&t.norm.forward_t(&x, train)?.relu()?)?;
                x = avg_pool(&y, 2, 2, 0)?;
            }
        }
        self.norm5.forward_t(&x, train)?.relu()
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.classifier.forward(&self.dropout.forward_t(&x, train)?)
    }
}
