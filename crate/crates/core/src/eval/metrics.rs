use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::TaskSchema;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Nothing was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// The class never occurs in gold; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
}

/// Per-class metrics and their gold-support weighted averages.
pub fn evaluate(predictions: &[usize], gold: &[usize], schema: &TaskSchema) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty prediction set"));
    }
    if predictions.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let k = schema.num_classes();
    for &c in predictions.iter().chain(gold) {
        schema.check_index(c as i64)?;
    }

    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &g) in predictions.iter().zip(gold) {
        predicted[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let n = gold.len() as f64;
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = if predicted[c] > 0 { tp[c] as f64 / predicted[c] as f64 } else { 0.0 };
            let recall = if support[c] > 0 { tp[c] as f64 / support[c] as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: schema.class_labels[c].clone(),
                precision,
                recall,
                f1,
                support: support[c],
                precision_undefined: predicted[c] == 0,
                recall_undefined: support[c] == 0,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(|m| m.support as f64 / n * f(m)).sum()
    };
    Ok(EvalReport {
        accuracy: tp.iter().sum::<usize>() as f64 / n,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        per_class,
        total: gold.len(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(12);
        writeln!(f, "{:<width$}{:>10}{:>10}{:>10}{:>10}", "class", "P", "R", "F1", "support")?;
        for c in &self.per_class {
            let flag = if c.precision_undefined || c.recall_undefined { " *" } else { "" };
            writeln!(
                f,
                "{:<width$}{:>10.4}{:>10.4}{:>10.4}{:>10}{flag}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(
            f,
            "{:<width$}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            "weighted avg", self.precision, self.recall, self.f1, self.total
        )?;
        write!(f, "accuracy {:.4}", self.accuracy)
    }
}
