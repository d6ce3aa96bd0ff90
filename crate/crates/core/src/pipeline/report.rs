use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub dedup_ms: f64,
    /// Share of the batch's inference time.
    pub inference_ms: f64,
}

/// Per-record timings and total latency, plus the run's wall time.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<(StageTimings, f64)>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub images: usize,
    pub wall_seconds: f64,
    pub images_per_second: f64,
    /// decode, dedup, inference and total.
    pub stages: BTreeMap<String, LatencySummary>,
}

fn summarize(mut v: Vec<f64>) -> LatencySummary {
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    // Nearest-rank percentile.
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    LatencySummary { mean_ms: mean, p95_ms: v[rank - 1] }
}

pub fn throughput_report(log: &RunLog) -> Result<ThroughputReport> {
    if log.records.is_empty() {
        return Err(Error::invalid("empty run: no records to report"));
    }
    if log.wall_seconds <= 0.0 {
        return Err(Error::invalid("run wall time must be positive"));
    }
    let col = |f: fn(&(StageTimings, f64)) -> f64| summarize(log.records.iter().map(f).collect());
    let mut stages = BTreeMap::new();
    stages.insert("decode".to_string(), col(|r| r.0.decode_ms));
    stages.insert("dedup".to_string(), col(|r| r.0.dedup_ms));
    stages.insert("inference".to_string(), col(|r| r.0.inference_ms));
    stages.insert("total".to_string(), col(|r| r.1));
    Ok(ThroughputReport {
        images: log.records.len(),
        wall_seconds: log.wall_seconds,
        images_per_second: log.records.len() as f64 / log.wall_seconds,
        stages,
    })
}
