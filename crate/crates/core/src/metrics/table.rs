use std::fmt::Write;

use super::{MetricsReport, Scores};

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Renders the overall scores as a Markdown table with Precision, Recall, Macro-F1 and JEM
/// columns (percent, two decimals). `label` names the row, e.g. the verifier.
pub fn render_table(label: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("| Verifier | Precision | Recall | Macro-F1 | JEM | Loc-only |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {label} | {} | {} | {} | {} | {} |",
        pct(report.precision),
        pct(report.recall),
        pct(report.macro_f1),
        pct(report.jem),
        pct(report.localization_only_match),
    );
    out
}

/// One row per domain plus an overall row.
pub fn render_domain_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("| Domain | n | Precision | Recall | Macro-F1 | JEM |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    let row = |out: &mut String, name: &str, s: &Scores| {
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} | {} | {} |",
            s.n,
            pct(s.precision),
            pct(s.recall),
            pct(s.macro_f1),
            pct(s.jem)
        );
    };
    for (domain, scores) in &report.per_domain {
        row(&mut out, domain.as_str(), scores);
    }
    row(&mut out, "overall", &report.tally.scores());
    out
}
