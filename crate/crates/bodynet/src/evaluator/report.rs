//! Aggregated evaluation results and their text/CSV emission.

use super::metrics::empirical_cdf;
use super::{EvalError, Result};
use crate::dataio::WalkingMode;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub id: String,
    pub mode: WalkingMode,
    pub ate: f64,
    pub rte: f64,
    pub rte_truncated: bool,
}

/// Metrics over a set of evaluated sequences plus the pooled error CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rte_interval_s: f64,
    pub sequences: Vec<SequenceMetrics>,
    pub mean_ate: f64,
    pub mean_rte: f64,
    /// Pooled empirical CDF of pointwise errors: (error m, probability).
    pub cdf: Vec<(f64, f64)>,
    /// Any sequence fell short of the RTE interval.
    pub rte_truncated: bool,
}

impl MetricsReport {
    pub fn new(
        sequences: Vec<SequenceMetrics>,
        pooled_errors: &[f64],
        rte_interval_s: f64,
    ) -> Result<Self> {
        if sequences.is_empty() {
            return Err(EvalError::Empty { what: "sequence metrics" });
        }
        for s in &sequences {
            if !(s.ate >= 0.0) || !(s.rte >= 0.0) {
                return Err(EvalError::Invalid {
                    detail: format!("sequence {}: negative or non-finite metric", s.id),
                });
            }
        }
        let n = sequences.len() as f64;
        let mean_ate = sequences.iter().map(|s| s.ate).sum::<f64>() / n;
        let mean_rte = sequences.iter().map(|s| s.rte).sum::<f64>() / n;
        let cdf = empirical_cdf(pooled_errors)?;
        let rte_truncated = sequences.iter().any(|s| s.rte_truncated);
        Ok(MetricsReport { rte_interval_s, sequences, mean_ate, mean_rte, cdf, rte_truncated })
    }

    /// First error value whose cumulative probability reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.cdf
            .iter()
            .find(|(_, p)| *p >= q)
            .map(|(e, _)| *e)
            .unwrap_or_else(|| self.cdf.last().unwrap().0)
    }

    /// Human-readable summary document.
    pub fn text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "trajectory evaluation ({} sequences)", self.sequences.len()).unwrap();
        writeln!(out, "rte interval: {} s", self.rte_interval_s).unwrap();
        if self.rte_truncated {
            writeln!(
                out,
                "warning: at least one sequence is shorter than the rte interval; \
                 its rte covers a single truncated interval"
            )
            .unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{:<24} {:<6} {:>10} {:>10}", "sequence", "mode", "ate_m", "rte_m")
            .unwrap();
        for s in &self.sequences {
            let flag = if s.rte_truncated { " (truncated)" } else { "" };
            writeln!(
                out,
                "{:<24} {:<6} {:>10.4} {:>10.4}{flag}",
                s.id,
                s.mode.to_string(),
                s.ate,
                s.rte
            )
            .unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "mean ate: {:.4} m", self.mean_ate).unwrap();
        writeln!(out, "mean rte: {:.4} m", self.mean_rte).unwrap();
        writeln!(
            out,
            "error quantiles: p50 {:.4} m, p90 {:.4} m, max {:.4} m",
            self.quantile(0.5),
            self.quantile(0.9),
            self.cdf.last().unwrap().0
        )
        .unwrap();
        out
    }

    /// Per-sequence table: `id,mode,ate_m,rte_m`.
    pub fn sequence_csv(&self) -> String {
        let mut out = String::from("id,mode,ate_m,rte_m\n");
        for s in &self.sequences {
            writeln!(out, "{},{},{:.6},{:.6}", s.id, s.mode, s.ate, s.rte).unwrap();
        }
        out
    }

    /// Pooled CDF: `error_m,probability`.
    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("error_m,probability\n");
        for (e, p) in &self.cdf {
            writeln!(out, "{e:.6},{p:.6}").unwrap();
        }
        out
    }

    pub fn write_sequence_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.sequence_csv()).map_err(|e| EvalError::Io {
            context: format!("write {}", path.display()),
            source: e,
        })
    }

    pub fn write_cdf_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.cdf_csv()).map_err(|e| EvalError::Io {
            context: format!("write {}", path.display()),
            source: e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MetricsReport {
        MetricsReport::new(
            vec![
                SequenceMetrics {
                    id: "seq-a".into(),
                    mode: WalkingMode::STW,
                    ate: 1.5,
                    rte: 0.5,
                    rte_truncated: false,
                },
                SequenceMetrics {
                    id: "seq-b".into(),
                    mode: WalkingMode::DRW,
                    ate: 2.5,
                    rte: 1.5,
                    rte_truncated: true,
                },
            ],
            &[0.5, 1.0, 1.5, 2.0],
            60.0,
        )
        .unwrap()
    }

    #[test]
    fn means_and_flags_aggregate_over_sequences() {
        let r = sample_report();
        assert_eq!(r.mean_ate, 2.0);
        assert_eq!(r.mean_rte, 1.0);
        assert!(r.rte_truncated);
        assert_eq!(r.cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn csv_tables_have_one_row_per_entry() {
        let r = sample_report();
        let seq_csv = r.sequence_csv();
        let seq: Vec<&str> = seq_csv.lines().collect();
        assert_eq!(seq[0], "id,mode,ate_m,rte_m");
        assert_eq!(seq.len(), 3);
        assert!(seq[1].starts_with("seq-a,STW,1.500000"));
        let cdf_csv = r.cdf_csv();
        let cdf: Vec<&str> = cdf_csv.lines().collect();
        assert_eq!(cdf[0], "error_m,probability");
        assert_eq!(cdf.len(), 5);
        assert_eq!(cdf[4], "2.000000,1.000000");
    }

    #[test]
    fn text_report_names_modes_and_truncation() {
        let r = sample_report();
        let text = r.text();
        assert!(text.contains("DRW"));
        assert!(text.contains("(truncated)"));
        assert!(text.contains("mean ate: 2.0000 m"));
        assert!(text.contains("warning"));
    }

    #[test]
    fn negative_metrics_are_refused() {
        let err = MetricsReport::new(
            vec![SequenceMetrics {
                id: "x".into(),
                mode: WalkingMode::STW,
                ate: -1.0,
                rte: 0.0,
                rte_truncated: false,
            }],
            &[1.0],
            60.0,
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::Invalid { .. }));
    }

    #[test]
    fn quantiles_walk_the_cdf() {
        let r = sample_report();
        assert_eq!(r.quantile(0.5), 1.0);
        assert_eq!(r.quantile(0.9), 2.0);
    }
}
