//! Plain-text tables for the evaluation reports.

use super::metrics::{Db, MetricsReport};

/// One row of a per-channel PSNR table.
#[derive(Debug, Clone)]
pub struct ChannelRow {
    pub label: String,
    pub psnr_r: Db,
    pub psnr_g: Db,
    pub psnr_b: Db,
}

impl ChannelRow {
    pub fn from_report(label: impl Into<String>, r: &MetricsReport) -> Self {
        Self { label: label.into(), psnr_r: r.psnr_r, psnr_g: r.psnr_g, psnr_b: r.psnr_b }
    }
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{:<w$}", c, w = widths[i])
                } else {
                    format!("{:>w$}", c, w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    let head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    out.push_str(&line(&head));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 3 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn delta_cell(ours: Db, base: Db) -> String {
    if ours.0.is_finite() && base.0.is_finite() {
        format!("{:+.2}", ours.0 - base.0)
    } else {
        "n/a".to_string()
    }
}

/// Band-wise comparison: Avg / Low / Mid / High PSNR plus a delta column
/// against the first (baseline) row.
pub fn format_band_table(rows: &[(String, MetricsReport)]) -> String {
    let header = ["Model", "Avg PSNR", "Low-Freq", "Mid-Freq", "High-Freq", "Delta"];
    let base = rows.first().map(|(_, r)| r.psnr_avg);
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, (label, r))| {
            let bands = r.bands.as_ref();
            vec![
                label.clone(),
                r.psnr_avg.render(),
                bands.map(|b| b.low.render()).unwrap_or_else(|| "n/a".into()),
                bands.map(|b| b.mid.render()).unwrap_or_else(|| "n/a".into()),
                bands.map(|b| b.high.render()).unwrap_or_else(|| "n/a".into()),
                if i == 0 { "-".to_string() } else { delta_cell(r.psnr_avg, base.unwrap()) },
            ]
        })
        .collect();
    render_table(&header, &body)
}

/// Per-channel PSNR comparison (the layout shared by the partition sweep,
/// the validation comparison, and the strategy comparison).
pub fn format_channel_table(label_header: &str, rows: &[ChannelRow]) -> String {
    let header = [label_header, "PSNR_R", "PSNR_G", "PSNR_B"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.label.clone(), r.psnr_r.render(), r.psnr_g.render(), r.psnr_b.render()]
        })
        .collect();
    render_table(&header, &body)
}
