//! Metrics rows and the CSV stream they are written to.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::Result;

pub const METRICS_HEADER: &str = "episode,steps,train_return,eval_return_mean,eval_return_std,td_loss,va_loss_mean,retrieval_aux_loss,reinit_count,wallclock_s";

/// One row per evaluation interval. Losses are means over the interval, or
/// NaN when no update happened in it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub steps: usize,
    pub train_return: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub td_loss: f64,
    pub va_loss_mean: f64,
    pub retrieval_aux_loss: f64,
    pub reinit_count: usize,
    pub wallclock_s: f64,
}

impl MetricsRow {
    /// Comma-separated line without a trailing newline. Floats use the
    /// shortest representation that round-trips.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.train_return,
            self.eval_return_mean,
            self.eval_return_std,
            self.td_loss,
            self.va_loss_mean,
            self.retrieval_aux_loss,
            self.reinit_count,
            self.wallclock_s
        )
    }
}

pub trait MetricsSink {
    fn record(&mut self, row: &MetricsRow) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRow> {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

/// Append-only CSV file, flushed after every row.
pub struct CsvMetrics {
    out: BufWriter<File>,
}

impl CsvMetrics {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }
}

impl MetricsSink for CsvMetrics {
    fn record(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_row_arity() {
        let row = MetricsRow {
            episode: 1,
            steps: 10,
            train_return: 2.5,
            eval_return_mean: 40.0,
            eval_return_std: 0.0,
            td_loss: 0.1,
            va_loss_mean: f64::NAN,
            retrieval_aux_loss: 0.7,
            reinit_count: 0,
            wallclock_s: 0.0,
        };
        let line = row.to_csv_line();
        assert_eq!(line.split(',').count(), METRICS_HEADER.split(',').count());
        assert!(line.starts_with("1,10,2.5,40,0,0.1,NaN,"));
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
