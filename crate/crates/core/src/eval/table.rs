//! Aligned plain-text tables for reports.

use super::elt::EltReport;
use super::metrics::{CompileStats, VarianceReport};

/// Left-aligned first column, right-aligned numbers, two-space gutters.
pub fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().take(cols).map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn variance_table(rows: &[(String, VarianceReport)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                format!("{:.4}", r.avg_sim),
                format!("{:.4}", r.min_sim),
                format!("{:.4}", r.median_sim),
                format!("{:.4}", r.std_sim),
                format!("{:.4}", r.variance_col),
                r.unique_versions.to_string(),
                format!("{:.4}", r.duplication_gini),
            ]
        })
        .collect();
    render(
        &["Prompt", "Avg Sim", "Min Sim", "Median Sim", "Std Sim", "Variance", "Unique", "Dup. Gini"],
        &body,
    )
}

pub fn compile_table(rows: &[(String, CompileStats)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, s)| {
            vec![
                label.clone(),
                s.runs.to_string(),
                format!("{:.2}", s.sc),
                format!("{:.2}", s.spc),
                s.edits_needed.to_string(),
            ]
        })
        .collect();
    render(&["Configuration", "Runs", "SC", "SPC", "Edits"], &body)
}

pub fn elt_table(report: &EltReport) -> String {
    let mark = |ok: bool| if ok { "yes" } else { "no" }.to_string();
    let mut body: Vec<Vec<String>> = report
        .tasks
        .iter()
        .map(|t| {
            vec![
                t.id.clone(),
                t.questions.to_string(),
                mark(t.extraction_loading_ok),
                t.transform_ok.map_or("-".to_string(), mark),
            ]
        })
        .collect();
    body.push(vec![
        format!("total ({})", report.mode.as_str()),
        String::new(),
        format!("SRDEL {:.1}", report.srdel),
        format!("SRDT {:.1}", report.srdt),
    ]);
    render(&["Task", "Questions", "Extract+Load", "Transform"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let t = render(&["a", "bb"], &[vec!["xyz".into(), "1".into()], vec!["q".into(), "22".into()]]);
        assert_eq!(t, "a    bb\n---  --\nxyz   1\nq    22\n");
    }
}
