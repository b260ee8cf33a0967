//! Append-only training metrics and the runtime parity report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::LossReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub objective: String,
    pub report: LossReport,
    pub step_seconds: f64,
}

/// Per-step loss reports, per-epoch wall clock, and the final evaluation
/// numbers. Steps are append-only with a strictly increasing index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub epoch_seconds: Vec<f64>,
    pub final_metrics: BTreeMap<String, f64>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_step(&mut self, record: StepRecord) {
        if let Some(last) = self.steps.last() {
            assert!(record.step > last.step, "step index must increase");
        }
        self.steps.push(record);
    }

    pub fn set_final(&mut self, name: impl Into<String>, value: f64) {
        self.final_metrics.insert(name.into(), value);
    }

    pub fn median_step_seconds(&self) -> Option<f64> {
        median(self.steps.iter().map(|s| s.step_seconds))
    }

    /// One JSON line per step, then one line per epoch timing, then one final
    /// summary record.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.steps {
            serde_json::to_writer(&mut out, s).map_err(|e| Error::Format(e.to_string()))?;
            out.push(b'\n');
        }
        for (epoch, secs) in self.epoch_seconds.iter().enumerate() {
            let rec = serde_json::json!({ "epoch": epoch, "epoch_seconds": secs });
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format(e.to_string()))?;
            out.push(b'\n');
        }
        let rec = serde_json::json!({ "final_metrics": &self.final_metrics });
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }
}

fn median(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median per-step wall time ratio (b over a) minus one.
pub fn runtime_report(log_a: &MetricsLog, log_b: &MetricsLog) -> Result<f64> {
    let ma = log_a
        .median_step_seconds()
        .ok_or_else(|| Error::Argument("log_a has no steps".into()))?;
    let mb = log_b
        .median_step_seconds()
        .ok_or_else(|| Error::Argument("log_b has no steps".into()))?;
    if ma <= 0.0 {
        return Err(Error::Argument("log_a has non-positive step times".into()));
    }
    Ok(mb / ma - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with_times(times: &[f64]) -> MetricsLog {
        let mut log = MetricsLog::new();
        for (i, &t) in times.iter().enumerate() {
            log.push_step(StepRecord {
                step: i,
                epoch: 0,
                objective: "simclr".into(),
                report: LossReport {
                    total: 1.0,
                    distance_term: 1.0,
                    diversity_term: 0.0,
                    per_component: BTreeMap::new(),
                },
                step_seconds: t,
            });
        }
        log
    }

    #[test]
    fn identical_logs_have_zero_overhead() {
        let log = log_with_times(&[0.1, 0.2, 0.3]);
        assert_eq!(runtime_report(&log, &log.clone()).unwrap(), 0.0);
    }

    #[test]
    fn doubled_step_times_report_full_overhead() {
        let a = log_with_times(&[0.1, 0.2, 0.3]);
        let b = log_with_times(&[0.2, 0.4, 0.6]);
        assert!((runtime_report(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_log_is_an_error() {
        let a = log_with_times(&[0.1]);
        assert!(runtime_report(&a, &MetricsLog::new()).is_err());
    }

    #[test]
    #[should_panic(expected = "step index must increase")]
    fn non_monotone_steps_panic() {
        let mut log = log_with_times(&[0.1, 0.2]);
        let mut rec = log.steps[0].clone();
        rec.step = 0;
        log.push_step(rec);
    }

    #[test]
    fn jsonl_round_trip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut log = log_with_times(&[0.1, 0.2]);
        log.epoch_seconds.push(0.5);
        log.set_final("knn_accuracy", 88.5);
        log.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("knn_accuracy"));
    }
}
