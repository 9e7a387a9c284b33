//! Plain-text report tables. Scores are shown as percentages.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{LengthBucket, MetricReport};

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

const HEADER: [&str; 8] = ["cases", "ANLS", "F1(token)", "ROUGE-L", "Recall@k", "Tokens", "Latency(ms)", "GPT-Acc"];

fn row(label: &str, r: &MetricReport) -> [String; 9] {
    [
        label.to_string(),
        r.case_count.to_string(),
        pct(r.anls),
        pct(r.token_f1),
        pct(r.rouge_l),
        opt_pct(r.recall_at_k),
        format!("{:.0}", r.mean_tokens),
        format!("{:.1}", r.mean_latency_ms),
        opt_pct(r.gpt_acc),
    ]
}

fn table(first: &str, rows: &[[String; 9]]) -> String {
    let mut header = vec![first.to_string()];
    header.extend(HEADER.iter().map(|s| s.to_string()));
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for r in rows {
        line(r);
    }
    out
}

pub fn render_report(report: &MetricReport) -> String {
    let mut out = table("run", &[row("all", report)]);
    let _ = writeln!(out, "k = {}; F1 is token-level", report.k);
    if report.recall_excluded > 0 {
        let _ = writeln!(out, "{} case(s) without ground-truth evidence left out of recall", report.recall_excluded);
    }
    out
}

pub fn render_k_table(by_k: &BTreeMap<usize, MetricReport>) -> String {
    let rows: Vec<_> = by_k.iter().map(|(k, r)| row(&k.to_string(), r)).collect();
    table("k", &rows)
}

pub fn render_bucket_table(by_length: &BTreeMap<LengthBucket, MetricReport>) -> String {
    let rows: Vec<_> = by_length.iter().map(|(b, r)| row(&b.to_string(), r)).collect();
    table("chunks", &rows)
}
