use candle_core::{DType, Tensor, Var};
use image::RgbImage;

use super::{cam_from_gradients, CamMap};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::train::images::{resize_square, to_tensor};

/// Grad-CAM for any split network: `features` are the final convolutional
/// maps `(1, C, h, w)`, `head` maps them to logits and `output_index` selects
/// the logit whose gradient is used.
pub fn grad_cam_with_head<F>(
    features: &Tensor,
    head: F,
    output_index: usize,
    target_class: usize,
    out_size: (usize, usize),
) -> Result<CamMap>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let (n, c, h, w) = features
        .dims4()
        .map_err(|_| Error::invalid(format!("expected (1, C, H, W) feature maps, got {:?}", features.dims())))?;
    if n != 1 {
        return Err(Error::invalid("Grad-CAM runs on one image at a time"));
    }
    let var = Var::from_tensor(&features.detach().copy()?)?;
    let logits = head(var.as_tensor())?;
    let width = logits.dim(1)?;
    if output_index >= width {
        return Err(Error::invalid(format!("output {output_index} out of range for {width} logits")));
    }
    let score = logits.narrow(1, output_index, 1)?.sum_all()?;
    let grads = score.backward()?;
    let grad = match grads.get(var.as_tensor()) {
        Some(g) => g.clone(),
        None => var.as_tensor().zeros_like()?,
    };
    let to_vec = |t: &Tensor| -> Result<Vec<f64>> { Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?) };
    cam_from_gradients(&to_vec(var.as_tensor())?, &to_vec(&grad)?, (c, h, w), target_class, out_size)
}

/// Grad-CAM of `class` of task `task_index` on an image; the map is
/// upsampled to the image's own size.
pub fn grad_cam(model: &Model, image: &RgbImage, task_index: usize, class: usize) -> Result<CamMap> {
    let range = model.layout().range(task_index)?;
    if class >= range.len() {
        return Err(Error::invalid(format!("class {class} out of range for a {}-way task", range.len())));
    }
    let x = to_tensor(&[resize_square(image, model.image_size())])?;
    let features = model.features(&x, false)?;
    if features.rank() != 4 {
        return Err(Error::invalid(format!("backbone {} exposes no convolutional feature maps", model.backbone())));
    }
    grad_cam_with_head(
        &features,
        |f| model.head(f, false),
        range.start + class,
        class,
        (image.height() as usize, image.width() as usize),
    )
}
