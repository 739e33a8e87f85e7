use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, Protocol};

/// Relative MAE reduction of `candidate` over `base`, in percent. Zero when
/// `base` is zero.
pub fn improvement_pct(base: f64, candidate: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - candidate) / base * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub history_size: usize,
    pub baseline_mae: f64,
    pub candidate_mae: f64,
    /// `baseline - candidate`; positive means the candidate is better.
    pub abs_improvement: f64,
    pub pct_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub protocol: Protocol,
    pub baseline_label: String,
    pub candidate_label: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side MAE of two runs over the same protocol and history range.
pub fn compare_reports(baseline: &EvalReport, candidate: &EvalReport) -> Result<Comparison, EvalError> {
    if baseline.protocol != candidate.protocol {
        return Err(EvalError::ConfigMismatch(format!(
            "protocols differ: {} vs {}",
            baseline.protocol.as_str(),
            candidate.protocol.as_str()
        )));
    }
    if baseline.history_range != candidate.history_range {
        return Err(EvalError::ConfigMismatch(format!(
            "history ranges differ: {:?} vs {:?}",
            baseline.history_range, candidate.history_range
        )));
    }
    if baseline.mae_by_size.keys().ne(candidate.mae_by_size.keys()) {
        return Err(EvalError::ConfigMismatch("history sizes differ".into()));
    }
    Ok(Comparison {
        protocol: baseline.protocol,
        baseline_label: baseline.recommender.label().to_string(),
        candidate_label: candidate.recommender.label().to_string(),
        rows: rows(&baseline.mae_by_size, &candidate.mae_by_size),
    })
}

fn rows(base: &BTreeMap<usize, f64>, cand: &BTreeMap<usize, f64>) -> Vec<ComparisonRow> {
    base.iter()
        .map(|(size, b)| {
            let c = cand[size];
            ComparisonRow {
                history_size: *size,
                baseline_mae: *b,
                candidate_mae: c,
                abs_improvement: b - c,
                pct_improvement: improvement_pct(*b, c),
            }
        })
        .collect()
}

impl Comparison {
    /// Keeps only the given history sizes, e.g. `[5, 9, 13, 17]`.
    pub fn select(&self, sizes: &[usize]) -> Comparison {
        Comparison {
            rows: self
                .rows
                .iter()
                .filter(|r| sizes.contains(&r.history_size))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn row(&self, history_size: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.history_size == history_size)
    }

    /// History sizes across, methods down, four-decimal MAE.
    pub fn render_table(&self) -> String {
        let head = "User's history size";
        let w = head
            .len()
            .max(self.baseline_label.len())
            .max(self.candidate_label.len());
        let mut out = String::new();
        let line = |out: &mut String, label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<w$}");
            for c in cells {
                let _ = write!(out, " | {c:>8}");
            }
            out.push('\n');
        };
        line(&mut out, head, self.rows.iter().map(|r| r.history_size.to_string()).collect());
        let _ = writeln!(out, "{}", "-".repeat(w + self.rows.len() * 11));
        line(&mut out, &self.baseline_label, self.rows.iter().map(|r| format!("{:.4}", r.baseline_mae)).collect());
        line(&mut out, &self.candidate_label, self.rows.iter().map(|r| format!("{:.4}", r.candidate_mae)).collect());
        line(&mut out, "Improvement", self.rows.iter().map(|r| format!("{:.2}%", r.pct_improvement)).collect());
        out
    }
}
