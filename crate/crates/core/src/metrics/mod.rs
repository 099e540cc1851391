//! Evaluation quantities. Everything here is a pure function of its inputs
//! (plus an explicit rng where projections are drawn).

mod classifier;
mod ngram;
mod report;
mod wasserstein;

pub use classifier::{style_accuracy, LogisticClassifier, StyleJudge, STYLE_GATE};
pub use ngram::NgramLm;
pub use report::MetricReport;
pub use wasserstein::{sliced_wasserstein, wasserstein_1d};

use crate::error::{Error, Result};

/// Fraction of outputs whose length is within ±2 of `target`.
pub fn length_success(outputs: &[Vec<usize>], target: usize) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::invalid("length_success", "no outputs"));
    }
    let hits = outputs.iter().filter(|o| o.len().abs_diff(target) <= 2).count();
    Ok(hits as f64 / outputs.len() as f64)
}
