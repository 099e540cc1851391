use crate::error::{Error, Result};

/// Named metric values from one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task: String,
    pub values: Vec<(String, f64)>,
    pub n: usize,
    pub seed: u64,
    pub steps: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "task,metric,value,n,seed,steps";

    pub fn new(task: &str, n: usize, seed: u64, steps: usize) -> Self {
        MetricReport { task: task.to_string(), values: Vec::new(), n, seed, steps }
    }

    pub fn push(&mut self, name: &str, value: f64) {
        self.values.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("metric_report", "sample count must be positive"));
        }
        if let Some((k, v)) = self.values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid("metric_report", format!("{k} is not finite ({v})")));
        }
        Ok(())
    }

    /// One row per metric, without the header.
    pub fn csv_rows(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{},{},{},{},{},{}\n", self.task, k, v, self.n, self.seed, self.steps))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}
