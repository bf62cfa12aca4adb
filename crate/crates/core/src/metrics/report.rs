use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One aggregated metric; `stderr` is `None` for single measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<MetricValue>,
}

impl MetricReport {
    pub fn push(&mut self, metric: impl Into<String>, value: f64, stderr: Option<f64>) {
        self.metrics.push(MetricValue {
            metric: metric.into(),
            value,
            stderr,
        });
    }

    /// Records the mean of `samples` with its standard error (zero for a single sample).
    pub fn push_samples(&mut self, metric: impl Into<String>, samples: &[f64]) {
        let (mean, se) = mean_stderr(samples);
        self.push(metric, mean, Some(se));
    }

    pub fn get(&self, metric: &str) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    /// `metric,value,stderr` rows; a missing stderr is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,stderr\n");
        for m in &self.metrics {
            let se = m.stderr.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", m.metric, m.value, se);
        }
        out
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
