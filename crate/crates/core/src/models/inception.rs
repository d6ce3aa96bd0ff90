use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{avg_pool, global_avg_pool, linear, max_pool, Act, ConvBn, Dropout};
use super::{Backbone, HeadOptions};

/// torchvision `BasicConv2d`: conv without bias, batch norm (eps 1e-3), ReLU.
fn bc(vb: &VarBuilder, name: &str, c_in: usize, c_out: usize, k: (usize, usize), stride: usize, pad: (usize, usize)) -> Result<ConvBn> {
    let vb = vb.pp(name);
    ConvBn::new(vb.pp("conv"), vb.pp("bn"), c_in, c_out, k, stride, pad, 1, 1e-3, Act::Relu)
}

fn sq(k: usize) -> (usize, usize) {
    (k, k)
}

fn run(chain: &[ConvBn], x: &Tensor, train: bool) -> Result<Tensor> {
    chain.iter().try_fold(x.clone(), |x, c| c.forward_t(&x, train))
}

/// Each branch is a chain of convolutions; `pool` selects what precedes
/// the pooled branch.
struct Block {
    branches: Vec<Vec<ConvBn>>,
    /// Branches whose last stage splits into two parallel convs (InceptionE).
    split: Vec<Option<(ConvBn, ConvBn)>>,
    pool: PoolBranch,
}

enum PoolBranch {
    /// 3×3 average pool (stride 1, pad 1) followed by a 1×1 conv.
    Avg(ConvBn),
    /// 3×3 stride-2 max pool, no conv.
    Max,
}

impl Block {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut outs = Vec::new();
        for (chain, split) in self.branches.iter().zip(&self.split) {
            let y = run(chain, x, train)?;
            match split {
                Some((a, b)) => {
                    outs.push(a.forward_t(&y, train)?);
                    outs.push(b.forward_t(&y, train)?);
                }
                None => outs.push(y),
            }
        }
        outs.push(match &self.pool {
            PoolBranch::Avg(c) => c.forward_t(&avg_pool(x, 3, 1, 1)?, train)?,
            PoolBranch::Max => max_pool(x, 3, 2, 0, false)?,
        });
        Tensor::cat(&outs, 1)
    }
}

fn inception_a(vb: VarBuilder, c_in: usize, pool_features: usize) -> Result<Block> {
    Ok(Block {
        branches: vec![
            vec![bc(&vb, "branch1x1", c_in, 64, sq(1), 1, (0, 0))?],
            vec![bc(&vb, "branch5x5_1", c_in, 48, sq(1), 1, (0, 0))?, bc(&vb, "branch5x5_2", 48, 64, sq(5), 1, (2, 2))?],
            vec![
                bc(&vb, "branch3x3dbl_1", c_in, 64, sq(1), 1, (0, 0))?,
                bc(&vb, "branch3x3dbl_2", 64, 96, sq(3), 1, (1, 1))?,
                bc(&vb, "branch3x3dbl_3", 96, 96, sq(3), 1, (1, 1))?,
            ],
        ],
        split: vec![None, None, None],
        pool: PoolBranch::Avg(bc(&vb, "branch_pool", c_in, pool_features, sq(1), 1, (0, 0))?),
    })
}

fn inception_b(vb: VarBuilder, c_in: usize) -> Result<Block> {
    Ok(Block {
        branches: vec![
            vec![bc(&vb, "branch3x3", c_in, 384, sq(3), 2, (0, 0))?],
            vec![
                bc(&vb, "branch3x3dbl_1", c_in, 64, sq(1), 1, (0, 0))?,
                bc(&vb, "branch3x3dbl_2", 64, 96, sq(3), 1, (1, 1))?,
                bc(&vb, "branch3x3dbl_3", 96, 96, sq(3), 2, (0, 0))?,
            ],
        ],
        split: vec![None, None],
        pool: PoolBranch::Max,
    })
}

fn inception_c(vb: VarBuilder, c_in: usize, c7: usize) -> Result<Block> {
    let (k17, p17, k71, p71) = ((1, 7), (0, 3), (7, 1), (3, 0));
    Ok(Block {
        branches: vec![
            vec![bc(&vb, "branch1x1", c_in, 192, sq(1), 1, (0, 0))?],
            vec![
                bc(&vb, "branch7x7_1", c_in, c7, sq(1), 1, (0, 0))?,
                bc(&vb, "branch7x7_2", c7, c7, k17, 1, p17)?,
                bc(&vb, "branch7x7_3", c7, 192, k71, 1, p71)?,
            ],
            vec![
                bc(&vb, "branch7x7dbl_1", c_in, c7, sq(1), 1, (0, 0))?,
                bc(&vb, "branch7x7dbl_2", c7, c7, k71, 1, p71)?,
                bc(&vb, "branch7x7dbl_3", c7, c7, k17, 1, p17)?,
                bc(&vb, "branch7x7dbl_4", c7, c7, k71, 1, p71)?,
                bc(&vb, "branch7x7dbl_5", c7, 192, k17, 1, p17)?,
            ],
        ],
        split: vec![None, None, None],
        pool: PoolBranch::Avg(bc(&vb, "branch_pool", c_in, 192, sq(1), 1, (0, 0))?),
    })
}

fn inception_d(vb: VarBuilder, c_in: usize) -> Result<Block> {
    Ok(Block {
        branches: vec![
            vec![bc(&vb, "branch3x3_1", c_in, 192, sq(1), 1, (0, 0))?, bc(&vb, "branch3x3_2", 192, 320, sq(3), 2, (0, 0))?],
            vec![
                bc(&vb, "branch7x7x3_1", c_in, 192, sq(1), 1, (0, 0))?,
                bc(&vb, "branch7x7x3_2", 192, 192, (1, 7), 1, (0, 3))?,
                bc(&vb, "branch7x7x3_3", 192, 192, (7, 1), 1, (3, 0))?,
                bc(&vb, "branch7x7x3_4", 192, 192, sq(3), 2, (0, 0))?,
            ],
        ],
        split: vec![None, None],
        pool: PoolBranch::Max,
    })
}

fn inception_e(vb: VarBuilder, c_in: usize) -> Result<Block> {
    Ok(Block {
        branches: vec![
            vec![bc(&vb, "branch1x1", c_in, 320, sq(1), 1, (0, 0))?],
            vec![bc(&vb, "branch3x3_1", c_in, 384, sq(1), 1, (0, 0))?],
            vec![bc(&vb, "branch3x3dbl_1", c_in, 448, sq(1), 1, (0, 0))?, bc(&vb, "branch3x3dbl_2", 448, 384, sq(3), 1, (1, 1))?],
        ],
        split: vec![
            None,
            Some((bc(&vb, "branch3x3_2a", 384, 384, (1, 3), 1, (0, 1))?, bc(&vb, "branch3x3_2b", 384, 384, (3, 1), 1, (1, 0))?)),
            Some((bc(&vb, "branch3x3dbl_3a", 384, 384, (1, 3), 1, (0, 1))?, bc(&vb, "branch3x3dbl_3b", 384, 384, (3, 1), 1, (1, 0))?)),
        ],
        pool: PoolBranch::Avg(bc(&vb, "branch_pool", c_in, 192, sq(1), 1, (0, 0))?),
    })
}

/// torchvision Inception v3, including the auxiliary classifier's parameters
/// (not used in the forward pass). Grad-CAM layer: output of `Mixed_7c`.
pub struct InceptionV3 {
    stem: Vec<(ConvBn, bool)>,
    blocks: Vec<Block>,
    dropout: Dropout,
    fc: Linear,
    /// ImageNet-normalized input is remapped to the (x - 0.5) / 0.5 scaling
    /// the pretrained weights expect.
    transform_input: bool,
}

impl InceptionV3 {
    pub fn new(vb: VarBuilder, head: &HeadOptions, transform_input: bool) -> Result<Self> {
        let stem = vec![
            (bc(&vb, "Conv2d_1a_3x3", 3, 32, sq(3), 2, (0, 0))?, false),
            (bc(&vb, "Conv2d_2a_3x3", 32, 32, sq(3), 1, (0, 0))?, false),
            (bc(&vb, "Conv2d_2b_3x3", 32, 64, sq(3), 1, (1, 1))?, true),
            (bc(&vb, "Conv2d_3b_1x1", 64, 80, sq(1), 1, (0, 0))?, false),
            (bc(&vb, "Conv2d_4a_3x3", 80, 192, sq(3), 1, (0, 0))?, true),
        ];
        let blocks = vec![
            inception_a(vb.pp("Mixed_5b"), 192, 32)?,
            inception_a(vb.pp("Mixed_5c"), 256, 64)?,
            inception_a(vb.pp("Mixed_5d"), 288, 64)?,
            inception_b(vb.pp("Mixed_6a"), 288)?,
            inception_c(vb.pp("Mixed_6b"), 768, 128)?,
            inception_c(vb.pp("Mixed_6c"), 768, 160)?,
            inception_c(vb.pp("Mixed_6d"), 768, 160)?,
            inception_c(vb.pp("Mixed_6e"), 768, 192)?,
            inception_d(vb.pp("Mixed_7a"), 768)?,
            inception_e(vb.pp("Mixed_7b"), 1280)?,
            inception_e(vb.pp("Mixed_7c"), 2048)?,
        ];
        // Auxiliary classifier parameters, kept for checkpoint compatibility.
        let aux = vb.pp("AuxLogits");
        bc(&aux, "conv0", 768, 128, sq(1), 1, (0, 0))?;
        bc(&aux, "conv1", 128, 768, sq(5), 1, (0, 0))?;
        linear(aux.pp("fc"), 768, head.num_outputs)?;
        Ok(InceptionV3 {
            stem,
            blocks,
            dropout: head.dropout(0.5),
            fc: linear(vb.pp("fc"), 2048, head.num_outputs)?,
            transform_input,
        })
    }
}

impl Backbone for InceptionV3 {
    fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = if self.transform_input {
            let mean = [0.485, 0.456, 0.406];
            let std = [0.229, 0.224, 0.225];
            let chans = (0..3)
                .map(|c| x.narrow(1, c, 1)?.affine(std[c] / 0.5, (mean[c] - 0.5) / 0.5))
                .collect::<Result<Vec<_>>>()?;
            Tensor::cat(&chans, 1)?
        } else {
            x.clone()
        };
        for (c, pool_after) in &self.stem {
            x = c.forward_t(&x, train)?;
            if *pool_after {
                x = max_pool(&x, 3, 2, 0, false)?;
            }
        }
        for b in &self.blocks {
            x = b.forward_t(&x, train)?;
        }
        Ok(x)
    }

    fn head(&self, features: &Tensor, train: bool) -> Result<Tensor> {
        let x = global_avg_pool(features)?;
        self.fc.forward(&self.dropout.forward_t(&x, train)?)
    }
}
