use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{global_avg_pool, linear, max_pool, Act, ConvBn, Dropout};
use super::{Backbone, HeadOptions};

/// Three conv-BN-ReLU blocks (16, 32, 64 channels) with 2×2 pooling between
/// them. Small enough to train in seconds on a CPU; used by desk-scale tests.
/// Grad-CAM layer: output of `block3`.
pub struct TinyCnn {
    blocks: Vec<ConvBn>,
    dropout: Dropout,
    fc: Linear,
}

impl TinyCnn {
    pub fn new(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let mut blocks = Vec::new();
        for (i, (ci, co)) in [(3, 16), (16, 32), (32, 64)].into_iter().enumerate() {
            let b = vb.pp(format!("block{}", i + 1));
            blocks.push(ConvBn::new(b.pp("conv"), b.pp("bn"), ci, co, (3, 3), 1, (1, 1), 1, 1e-5, Act::Relu)?);
        }
        Ok(TinyCnn { blocks, dropout: head.dropout(0.0), fc: linear(vb.pp("fc"), 64, head.num_outputs)? })
    }
}

impl Backbone for TinyCnn {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = max_pool(&x, 2, 2, 0, false)?;
            }
            x = b.forward_t(&x, train)?;
        }
        Ok(x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.fc.forward(&self.dropout.forward_t(&x, train)?)
    }
}
