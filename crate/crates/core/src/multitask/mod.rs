//! Shared-backbone multi-task heads and the masked batch loss.
//!
//! A multi-task model emits one concatenated logit vector per image. Task `i`
//! owns the segment `[offset_i, offset_i + num_classes[i])`, in the order the
//! tasks were configured. A missing label is encoded as `-1` and contributes
//! nothing to the loss.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, TaskId};
use crate::error::{Error, Result};

#[cfg(feature = "nn")]
mod loss;
#[cfg(feature = "nn")]
mod training;

#[cfg(feature = "nn")]
pub use loss::{batch_loss, labels_tensor, task_losses};
#[cfg(feature = "nn")]
pub use training::train_multitask;

/// Output layout of a (possibly single-task) classification head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    tasks: Vec<TaskId>,
    num_classes: Vec<usize>,
    offsets: Vec<usize>,
}

impl HeadLayout {
    pub fn new(tasks: Vec<TaskId>, num_classes: Vec<usize>) -> Result<Self> {
        if tasks.is_empty() || tasks.len() != num_classes.len() {
            return Err(Error::invalid("head layout needs one class count per task"));
        }
        if num_classes.contains(&0) {
            return Err(Error::invalid("every task needs at least one class"));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) {
                return Err(Error::invalid(format!("task {t} listed twice")));
            }
        }
        let offsets = num_classes
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        Ok(Self { tasks, num_classes, offsets })
    }

    /// Layout using the canonical class counts of each task.
    pub fn for_tasks(tasks: &[TaskId]) -> Result<Self> {
        Self::new(tasks.to_vec(), tasks.iter().map(|t| t.schema().num_classes()).collect())
    }

    pub fn single(task: TaskId) -> Self {
        Self::for_tasks(&[task]).expect("canonical schema")
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn num_classes(&self) -> &[usize] {
        &self.num_classes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_outputs(&self) -> usize {
        self.num_classes.iter().sum()
    }

    pub fn task_index(&self, task: TaskId) -> Option<usize> {
        self.tasks.iter().position(|&t| t == task)
    }

    pub fn range(&self, task_index: usize) -> Result<Range<usize>> {
        let (&o, &n) = self
            .offsets
            .get(task_index)
            .zip(self.num_classes.get(task_index))
            .ok_or_else(|| Error::invalid(format!("task index {task_index} out of range (have {})", self.tasks.len())))?;
        Ok(o..o + n)
    }

    /// Per-task label row (`-1` for missing) in layout order.
    pub fn label_row(&self, labels: &LabelVector) -> Vec<i64> {
        self.tasks.iter().map(|&t| labels.raw(t)).collect()
    }
}

/// The logit segment of task `task_index` within one concatenated prediction.
pub fn slice_task<'a, T>(prediction: &'a [T], task_index: usize, layout: &HeadLayout) -> Result<&'a [T]> {
    if prediction.len() != layout.total_outputs() {
        return Err(Error::invalid(format!(
            "prediction has {} outputs, layout expects {}",
            prediction.len(),
            layout.total_outputs()
        )));
    }
    Ok(&prediction[layout.range(task_index)?])
}

/// Softmax over each task segment of a concatenated logit vector.
pub fn segment_softmax(logits: &[f32], layout: &HeadLayout) -> Vec<Vec<f32>> {
    (0..layout.num_tasks())
        .map(|i| {
            let seg = &logits[layout.range(i).expect("index in range")];
            let max = seg.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exp: Vec<f64> = seg.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.iter().map(|e| (e / sum) as f32).collect()
        })
        .collect()
}
