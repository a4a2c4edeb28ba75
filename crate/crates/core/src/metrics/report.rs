use std::io::Write;

use super::roc::Significance;
use super::MetricError;
use crate::model::DisplayMode;

pub const REPORT_HEADER: [&str; 7] = ["method", "mode", "srcc", "krcc", "plcc", "auc_ds", "auc_bw"];

/// One evaluation row; the ROC columns are empty when no raw scores were available.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    pub mode: DisplayMode,
    pub srcc: f64,
    pub krcc: f64,
    pub plcc: f64,
    pub auc_ds: Option<f64>,
    pub auc_bw: Option<f64>,
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_report<W: Write>(writer: W, rows: &[MethodReport]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.mode.to_string(),
            num(r.srcc),
            num(r.krcc),
            num(r.plcc),
            r.auc_ds.map(num).unwrap_or_default(),
            r.auc_bw.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text matrix: `1` row better than column, `-1` worse, `0` indistinguishable.
pub fn format_significance_matrix(methods: &[String], m: &[Vec<Significance>]) -> String {
    let width = methods.iter().map(|s| s.len()).max().unwrap_or(0).max(2);
    let mut s = format!("{:width$}", "");
    for name in methods {
        s.push_str(&format!(" {name:>width$}"));
    }
    s.push('\n');
    for (name, row) in methods.iter().zip(m) {
        s.push_str(&format!("{name:width$}"));
        for cell in row {
            s.push_str(&format!(" {:>width$}", cell.symbol()));
        }
        s.push('\n');
    }
    s
}
