use candle_core::{Module, Result, Tensor};
use candle_nn::VarBuilder;

use super::layers::{conv_sq, global_avg_pool, max_pool, Conv, Dropout};
use super::{Backbone, HeadOptions};

struct Fire {
    squeeze: Conv,
    expand1x1: Conv,
    expand3x3: Conv,
}

impl Fire {
    fn new(vb: VarBuilder, c_in: usize, squeeze: usize, e1: usize, e3: usize) -> Result<Self> {
        Ok(Fire {
            squeeze: conv_sq(vb.pp("squeeze"), c_in, squeeze, 1, 1, 0, true)?,
            expand1x1: conv_sq(vb.pp("expand1x1"), squeeze, e1, 1, 1, 0, true)?,
            expand3x3: conv_sq(vb.pp("expand3x3"), squeeze, e3, 3, 1, 1, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.squeeze.forward(x)?.relu()?;
        Tensor::cat(&[self.expand1x1.forward(&s)?.relu()?, self.expand3x3.forward(&s)?.relu()?], 1)
    }
}

enum Stage {
    Pool,
    Fire(Fire),
}

/// torchvision SqueezeNet 1.0. Grad-CAM layer: output of the last Fire
/// module (`features.12`).
pub struct SqueezeNet {
    conv0: Conv,
    stages: Vec<Stage>,
    dropout: Dropout,
    final_conv: Conv,
}

impl SqueezeNet {
    pub fn new(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let f = vb.pp("features");
        let fire = |i: usize, c_in, s, e| -> Result<Stage> { Ok(Stage::Fire(Fire::new(f.pp(i), c_in, s, e, e)?)) };
        let stages = vec![
            Stage::Pool,
            fire(3, 96, 16, 64)?,
            fire(4, 128, 16, 64)?,
            fire(5, 128, 32, 128)?,
            Stage::Pool,
            fire(7, 256, 32, 128)?,
            fire(8, 256, 48, 192)?,
            fire(9, 384, 48, 192)?,
            fire(10, 384, 64, 256)?,
            Stage::Pool,
            fire(12, 512, 64, 256)?,
        ];
        Ok(SqueezeNet {
            conv0: conv_sq(f.pp("0"), 3, 96, 7, 2, 0, true)?,
            stages,
            dropout: head.dropout(0.5),
            final_conv: conv_sq(vb.pp("classifier").pp("1"), 512, head.num_outputs, 1, 1, 0, true)?,
        })
    }
}

impl Backbone for SqueezeNet {
    fn features(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let mut x = self.conv0.forward(x)?.relu()?;
        for s in &self.stages {
            x = match s {
                Stage::Pool => max_pool(&x, 3, 2, 0, true)?,
                Stage::Fire(f) => f.forward(&x)?,
            };
        }
        Ok(x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.dropout.forward_t(features, train)?;
        global_avg_pool(&self.final_conv.forward(&x)?.relu()?)
    }
}
