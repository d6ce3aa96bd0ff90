use candle_core::{DType, Device, Tensor, D};
use candle_nn::ops::log_softmax;

use super::HeadLayout;
use crate::data::LabelVector;
use crate::error::{Error, Result};

/// `(batch, num_tasks)` i64 tensor of labels in layout order, `-1` for missing.
pub fn labels_tensor(labels: &[LabelVector], layout: &HeadLayout, device: &Device) -> Result<Tensor> {
    let rows: Vec<i64> = labels.iter().flat_map(|l| layout.label_row(l)).collect();
    Ok(Tensor::from_vec(rows, (labels.len(), layout.num_tasks()), device)?)
}

/// Mean cross-entropy of each task over its labeled rows. A task without any
/// labeled row yields `None`.
pub fn task_losses(predictions: &Tensor, labels: &Tensor, layout: &HeadLayout) -> Result<Vec<Option<Tensor>>> {
    let (batch, width) = predictions.dims2()?;
    if width != layout.total_outputs() {
        return Err(Error::invalid(format!(
            "predictions have {width} outputs, layout expects {}",
            layout.total_outputs()
        )));
    }
    if labels.dims2()? != (batch, layout.num_tasks()) {
        return Err(Error::invalid("label tensor shape does not match the batch"));
    }
    let host = labels.to_dtype(DType::I64)?.to_vec2::<i64>()?;
    let device = predictions.device();
    let mut out = Vec::with_capacity(layout.num_tasks());
    for (i, &n) in layout.num_classes().iter().enumerate() {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (r, row) in host.iter().enumerate() {
            let l = row[i];
            if l < 0 {
                continue;
            }
            if l as usize >= n {
                return Err(Error::ClassIndex {
                    task: layout.tasks()[i],
                    index: l,
                    num_classes: n,
                });
            }
            rows.push(r as u32);
            targets.push(l as u32);
        }
        if rows.is_empty() {
            out.push(None);
            continue;
        }
        let count = rows.len();
        let rows = Tensor::from_vec(rows, count, device)?;
        let targets = Tensor::from_vec(targets, (count, 1), device)?;
        let segment = predictions.contiguous()?.index_select(&rows, 0)?.narrow(1, layout.offsets()[i], n)?;
        let nll = log_softmax(&segment, D::Minus1)?.gather(&targets, 1)?;
        out.push(Some((nll.sum_all()? * (-1.0 / count as f64))?));
    }
    Ok(out)
}

/// Masked multi-task loss: per task, the mean cross-entropy over rows whose
/// label is present, summed over tasks with equal weight.
pub fn batch_loss(predictions: &Tensor, labels: &Tensor, layout: &HeadLayout) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for loss in task_losses(predictions, labels, layout)?.into_iter().flatten() {
        total = Some(match total {
            None => loss,
            Some(t) => (t + loss)?,
        });
    }
    total.ok_or_else(|| Error::invalid("every label in the batch is missing; no loss can be computed"))
}
