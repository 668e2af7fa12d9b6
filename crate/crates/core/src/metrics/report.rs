//! Aggregated per-run metrics and a comparison-table rendering.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub problem: String,
    pub dim: usize,
    pub steps: usize,
    /// Per-step log10 |integral(mu_n) - 1|; length steps + 1.
    pub log_integral: Vec<f64>,
    pub mean_log_integral: f64,
    /// W1 between consecutive step marginals; length steps.
    pub wdist: Vec<f64>,
    pub mean_wdist: f64,
    pub realized_cost: Option<f64>,
    /// Max/mean log10 relative density error against the reference solver
    /// (ring runs only).
    pub reference_log_error: Option<(f64, f64)>,
}

impl RunMetrics {
    pub fn from_series(
        problem: impl Into<String>,
        dim: usize,
        steps: usize,
        log_integral: Vec<f64>,
        wdist: Vec<f64>,
    ) -> Self {
        let mean_log_integral = mean(&log_integral);
        let mean_wdist = mean(&wdist);
        RunMetrics {
            problem: problem.into(),
            dim,
            steps,
            log_integral,
            mean_log_integral,
            wdist,
            mean_wdist,
            realized_cost: None,
            reference_log_error: None,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, run: RunMetrics) {
        self.runs.push(run);
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Aligned text table, one column of results per run.
    pub fn render_table(&self) -> String {
        format!("{self}")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>5} {:>6} {:>14} {:>12} {:>12} {:>14}",
            "problem", "dim", "steps", "log|int-1|", "W-dis", "cost J", "ref max eps"
        )?;
        for r in &self.runs {
            writeln!(
                f,
                "{:<22} {:>5} {:>6} {:>14.3} {:>12.4} {:>12} {:>14}",
                r.problem,
                r.dim,
                r.steps,
                r.mean_log_integral,
                r.mean_wdist,
                r.realized_cost
                    .map(|c| format!("{c:.4}"))
                    .unwrap_or_else(|| "-".into()),
                r.reference_log_error
                    .map(|(mx, _)| format!("{mx:.3}"))
                    .unwrap_or_else(|| "-".into()),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_renders_header_only() {
        let r = MetricsReport::default();
        let text = r.render_table();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn single_run_rows() {
        let mut r = MetricsReport::default();
        r.push(RunMetrics::from_series(
            "traffic",
            1,
            4,
            vec![-2.5; 5],
            vec![0.04; 4],
        ));
        let text = r.render_table();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("traffic"));
        assert!(text.contains("-2.5"));
    }
}
