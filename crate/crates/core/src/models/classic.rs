//! AlexNet and VGG16.

use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{adaptive_avg_pool, conv_sq, flatten, linear, max_pool, Conv, Dropout};
use super::{Backbone, HeadOptions};

enum Op {
    Conv(Conv),
    Pool,
}

fn run_ops(ops: &[Op], x: &Tensor) -> Result<Tensor> {
    let mut x = x.clone();
    for op in ops {
        x = match op {
            Op::Conv(c) => c.forward(&x)?.relu()?,
            Op::Pool => pool(&x)?,
        };
    }
    Ok(x)
}

/// VGG max pool.
fn pool(x: &Tensor) -> Result<Tensor> {
    max_pool(x, 2, 2, 0, false)
}

/// Shared three-layer classifier: Dropout, Linear, ReLU, Dropout, Linear, ReLU, Linear.
struct Classifier {
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    drop: Dropout,
    drop_first: bool,
}

impl Classifier {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        if self.drop_first {
            x = self.drop.forward_t(&x, train)?;
        }
        x = self.fc1.forward(&x)?.relu()?;
        x = self.drop.forward_t(&x, train)?;
        x = self.fc2.forward(&x)?.relu()?;
        if !self.drop_first {
            x = self.drop.forward_t(&x, train)?;
        }
        self.fc3.forward(&x)
    }
}

/// torchvision AlexNet. Grad-CAM layer: ReLU after the fifth convolution
/// (`features.11`), before the last max pool.
pub struct AlexNet {
    convs: Vec<(Conv, bool)>,
    classifier: Classifier,
}

impl AlexNet {
    pub fn new(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        let f = vb.pp("features");
        // (index, in, out, kernel, stride, padding, pool after)
        let spec = [
            (0, 3, 64, 11, 4, 2, true),
            (3, 64, 192, 5, 1, 2, true),
            (6, 192, 384, 3, 1, 1, false),
            (8, 384, 256, 3, 1, 1, false),
            (10, 256, 256, 3, 1, 1, false),
        ];
        let convs = spec
            .iter()
            .map(|&(i, ci, co, k, s, p, pool)| Ok((conv_sq(f.pp(i), ci, co, k, s, p, true)?, pool)))
            .collect::<Result<Vec<_>>>()?;
        let c = vb.pp("classifier");
        Ok(AlexNet {
            convs,
            classifier: Classifier {
                fc1: linear(c.pp("1"), 256 * 6 * 6, 4096)?,
                fc2: linear(c.pp("4"), 4096, 4096)?,
                fc3: linear(c.pp("6"), 4096, head.num_outputs)?,
                drop: head.dropout(0.5),
                drop_first: true,
            },
        })
    }
}

impl Backbone for AlexNet {
    fn features(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for (c, pool) in &self.convs {
            x = c.forward(&x)?.relu()?;
            if *pool {
                x = max_pool(&x, 3, 2, 0, false)?;
            }
        }
        Ok(x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = max_pool(features, 3, 2, 0, false)?;
        let x = flatten(&adaptive_avg_pool(&x, 6, 6)?)?;
        self.classifier.forward_t(&x, train)
    }
}

/// torchvision VGG16 (no batch norm). Grad-CAM layer: ReLU after the last
/// convolution (`features.29`), before the final max pool.
pub struct Vgg16 {
    ops: Vec<Op>,
    classifier: Classifier,
}

impl Vgg16 {
    pub fn new(vb: VarBuilder, head: &HeadOptions) -> Result<Self> {
        const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
        let f = vb.pp("features");
        let mut ops = Vec::new();
        let mut idx = 0;
        let mut c_in = 3;
        for &c in &CFG {
            if c == 0 {
                ops.push(Op::Pool);
                idx += 1;
            } else {
                ops.push(Op::Conv(conv_sq(f.pp(idx), c_in, c, 3, 1, 1, true)?));
                c_in = c;
                idx += 2;
            }
        }
        // The last pool belongs to the head so the features end at the last conv.
        ops.pop();
        let c = vb.pp("classifier");
        Ok(Vgg16 {
            ops,
            classifier: Classifier {
                fc1: linear(c.pp("0"), 512 * 7 * 7, 4096)?,
                fc2: linear(c.pp("3"), 4096, 4096)?,
                fc3: linear(c.pp("6"), 4096, head.num_outputs)?,
                drop: head.dropout(0.5),
                drop_first: false,
            },
        })
    }
}

impl Backbone for Vgg16 {
    fn features(&self, x: &Tensor, _train: bool) -> Result<Tensor> {
        run_ops(&self.ops, x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = pool(features)?;
        let x = flatten(&adaptive_avg_pool(&x, 7, 7)?)?;
        self.classifier.forward_t(&x, train)
    }
}
