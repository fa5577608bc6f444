//! CSV output with deterministic number formatting.
//!
//! All floating-point cells go through [`g6`]: six significant digits, '.' as
//! the decimal separator, no locale or platform variation. Writing the same
//! records twice yields byte-identical files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{ConditionResult, LearningCurve};
use crate::solver::SolveResult;

/// Formats with six significant digits. Values with a decimal exponent in
/// [-4, 6) print in positional notation with trailing zeros trimmed; anything
/// further out uses scientific notation.
pub fn g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let mut s = format!("{x:.decimals$}");
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        s
    } else {
        let mut s = format!("{x:.5e}");
        // Normalize Rust's "1.23456e7" exponent form to keep a stable shape.
        if let Some(epos) = s.find('e') {
            let (mantissa, exp_part) = s.split_at(epos);
            let mut mantissa = mantissa.to_string();
            while mantissa.ends_with('0') {
                mantissa.pop();
            }
            if mantissa.ends_with('.') {
                mantissa.pop();
            }
            s = format!("{mantissa}{exp_part}");
        }
        s
    }
}

/// Writes a header row plus data rows, comma-separated, LF line endings.
/// Cells must not contain commas or newlines.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, csv_string(header, rows)).map_err(|e| Error::io(path, e))
}

pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders a solve trace: one row per recorded step holding the per-option
/// squared prediction errors, plus the losses of the step taken from that
/// point. The final row has no loss cells (no further step was taken).
pub fn trace_csv_string(result: &SolveResult) -> String {
    let num_options = result.final_errors.len();
    let mut header = vec!["step".to_string(), "loss_pred".into(), "loss_dis".into(), "loss_bound".into()];
    for k in 0..num_options {
        header.push(format!("err_{k}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    let mut rows = Vec::with_capacity(result.option_errors.len());
    for (step, errors) in result.option_errors.iter().enumerate() {
        let mut row = vec![step.to_string()];
        match result.losses.get(step) {
            Some(l) => {
                row.push(g6(l.pred));
                row.push(g6(l.dis));
                row.push(g6(l.bound));
            }
            None => row.extend(["".to_string(), "".into(), "".into()]),
        }
        row.extend(errors.iter().map(|&e| g6(e)));
        rows.push(row);
    }
    csv_string(&header_refs, &rows)
}

pub fn write_trace_csv(path: &Path, result: &SolveResult) -> Result<()> {
    fs::write(path, trace_csv_string(result)).map_err(|e| Error::io(path, e))
}

const RESULTS_HEADER: [&str; 12] = [
    "rule",
    "distractors",
    "num_distractors",
    "kind",
    "test_index",
    "test_seed",
    "model_seed",
    "choice",
    "correct",
    "failed",
    "success_rate",
    "sem",
];

/// Renders condition results: per-test data rows followed by one summary row
/// per condition. An empty slice yields just the header.
pub fn results_csv_string(results: &[ConditionResult]) -> String {
    let mut rows = Vec::new();
    for result in results {
        let rule = result.condition.rule.name().to_string();
        let distractors: Vec<&str> =
            result.condition.distractors.iter().map(|f| f.name()).collect();
        let distractors = distractors.join("+");
        let num_distractors = result.condition.distractors.len().to_string();

        for outcome in &result.outcomes {
            rows.push(vec![
                rule.clone(),
                distractors.clone(),
                num_distractors.clone(),
                "test".to_string(),
                outcome.index.to_string(),
                outcome.test_seed.to_string(),
                outcome.model_seed.to_string(),
                outcome.choice.to_string(),
                if outcome.correct { "1" } else { "0" }.to_string(),
                if outcome.failed { "1" } else { "0" }.to_string(),
                String::new(),
                String::new(),
            ]);
        }
        rows.push(vec![
            rule,
            distractors,
            num_distractors,
            "summary".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            result.successes.to_string(),
            result.failures.to_string(),
            g6(result.success_rate),
            g6(result.sem),
        ]);
    }
    csv_string(&RESULTS_HEADER, &rows)
}

pub fn write_results(path: &Path, results: &[ConditionResult]) -> Result<()> {
    fs::write(path, results_csv_string(results)).map_err(|e| Error::io(path, e))
}

/// Renders a learning curve as (sequences_trained, accuracy) rows.
pub fn curve_csv_string(curve: &LearningCurve) -> String {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![p.sequences_trained.to_string(), g6(p.accuracy)])
        .collect();
    csv_string(&["sequences_trained", "accuracy"], &rows)
}

pub fn write_curve(path: &Path, curve: &LearningCurve) -> Result<()> {
    fs::write(path, curve_csv_string(curve)).map_err(|e| Error::io(path, e))
}
