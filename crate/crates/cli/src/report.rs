//! `report`: JSON passthrough, CSV tables and static SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::Context;

use diagent_core::diagnostics::{DatasetDiagnostics, DiagnosticsReport, ErrorCategory, HistogramSet};
use diagent_core::harness::AblationTable;

use crate::cli::{Cli, Format, ReportArgs};
use crate::commands::{require_input, Document};
use crate::{CliError, CliResult};

const PALETTE: [&str; 6] = ["#4e79a7", "#e15759", "#f28e2b", "#76b7b2", "#59a14f", "#b07aa1"];

pub fn report(a: &ReportArgs, cli: &Cli) -> CliResult<()> {
    require_input(&a.analysis)?;
    let text = fs::read_to_string(&a.analysis).map_err(|e| CliError::Usage(format!("{}: {e}", a.analysis.display())))?;
    let doc: Document =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.analysis.display())))?;

    if a.format == Format::Json && a.out.is_none() {
        let mut text = serde_json::to_string_pretty(&doc).context("serializing")?;
        text.push('\n');
        std::io::stdout().write_all(text.as_bytes()).context("writing output")?;
        return Ok(());
    }
    let Some(dir) = &a.out else {
        return Err(CliError::Usage("--out DIR is required for csv and svg".into()));
    };
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Usage(format!("{}: not a directory", dir.display())));
    }

    let files: Vec<(String, String)> = match (a.format, &doc) {
        (Format::Json, _) => {
            let mut text = serde_json::to_string_pretty(&doc).context("serializing")?;
            text.push('\n');
            vec![("report.json".into(), text)]
        }
        (Format::Csv, Document::Diagnostics(r)) => diagnostics_csv(r)?,
        (Format::Csv, Document::Ablation(d)) => vec![("ablation.csv".into(), ablation_csv(&d.table)?)],
        (Format::Svg, Document::Diagnostics(r)) => diagnostics_svg(r),
        (Format::Svg, Document::Ablation(d)) => vec![("ablation.svg".into(), ablation_svg(&d.table))],
    };

    let paths: Vec<PathBuf> = files.iter().map(|(name, _)| dir.join(name)).collect();
    for p in &paths {
        if p.exists() && !cli.force {
            return Err(CliError::Usage(format!("{}: already exists (use --force to overwrite)", p.display())));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (p, (_, content)) in paths.iter().zip(&files) {
        fs::write(p, content).with_context(|| format!("writing {}", p.display()))?;
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' }).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn csv_string(rows: Vec<Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn diagnostics_csv(r: &DiagnosticsReport) -> anyhow::Result<Vec<(String, String)>> {
    let mut summary = vec![[
        "dataset",
        "n_records",
        "n_correct",
        "n_incorrect",
        "n_unfinished",
        "n_error",
        "accuracy",
        "mean_tokens_correct",
        "mean_tokens_incorrect",
    ]
    .map(String::from)
    .to_vec()];
    let mut buckets = vec![
        ["dataset", "bucket_lo", "bucket_hi", "n_correct", "n_incorrect", "n_unfinished", "n_error", "accuracy_ratio"]
            .map(String::from)
            .to_vec(),
    ];
    let mut hist = vec![["dataset", "histogram", "series", "bin_lo", "bin_hi", "count"].map(String::from).to_vec()];
    let mut errors = vec![["dataset", "category", "count", "fraction"].map(String::from).to_vec()];

    for d in &r.datasets {
        summary.push(vec![
            d.dataset.clone(),
            d.n_records.to_string(),
            d.n_correct.to_string(),
            d.n_incorrect.to_string(),
            d.n_unfinished.to_string(),
            d.n_error.to_string(),
            opt(d.accuracy),
            opt(d.mean_tokens_correct),
            opt(d.mean_tokens_incorrect),
        ]);
        for b in &d.buckets {
            buckets.push(vec![
                d.dataset.clone(),
                b.bucket_lo.to_string(),
                b.bucket_hi.to_string(),
                b.n_correct.to_string(),
                b.n_incorrect.to_string(),
                b.n_unfinished.to_string(),
                b.n_error.to_string(),
                opt(b.accuracy_ratio),
            ]);
        }
        for (name, set) in histogram_sets(d) {
            for s in &set.series {
                for (i, c) in s.counts.iter().enumerate() {
                    let lo = i as u64 * set.bin_width;
                    hist.push(vec![
                        d.dataset.clone(),
                        name.into(),
                        s.label.clone(),
                        lo.to_string(),
                        (lo + set.bin_width).to_string(),
                        c.to_string(),
                    ]);
                }
            }
        }
        for c in ErrorCategory::ALL {
            errors.push(vec![
                d.dataset.clone(),
                c.as_str().into(),
                d.errors.counts.get(&c).copied().unwrap_or(0).to_string(),
                format!("{:.6}", d.errors.fraction(c)),
            ]);
        }
    }
    Ok(vec![
        ("summary.csv".into(), csv_string(summary)?),
        ("buckets.csv".into(), csv_string(buckets)?),
        ("histograms.csv".into(), csv_string(hist)?),
        ("errors.csv".into(), csv_string(errors)?),
    ])
}

fn histogram_sets(d: &DatasetDiagnostics) -> [(&'static str, &HistogramSet); 3] {
    [
        ("correctness", &d.histogram_correctness),
        ("finished", &d.histogram_finished),
        ("difficulty", &d.histogram_difficulty),
    ]
}

fn ablation_csv(t: &AblationTable) -> anyhow::Result<String> {
    let mut rows = vec![
        ["dataset", "condition", "mean_accuracy", "ci_low", "ci_high", "n_items", "n_seeds", "n_errors"]
            .map(String::from)
            .to_vec(),
    ];
    for row in &t.rows {
        for c in &row.cells {
            let s = &c.summary;
            rows.push(vec![
                row.dataset.clone(),
                c.label.clone(),
                format!("{:.6}", s.mean_accuracy),
                format!("{:.6}", s.ci_low),
                format!("{:.6}", s.ci_high),
                s.n_items.to_string(),
                s.n_seeds.to_string(),
                s.n_errors.to_string(),
            ]);
        }
    }
    csv_string(rows)
}

// Plot area inside a fixed canvas.
const W: f64 = 640.0;
const H: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open_svg(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#, H - BOTTOM);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

fn y_ticks(s: &mut String, max: f64, fmt: impl Fn(f64) -> String) {
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let y = H - BOTTOM - plot_h * i as f64 / 4.0;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt(v));
    }
}

fn legend(s: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let x = W - RIGHT - 120.0;
        let y = TOP + 4.0 + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="10" height="10" fill="{color}"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 14.0, y + 9.0, escape(l));
    }
}

fn x_labels(s: &mut String, labels: &[String], slot: f64) {
    let step = labels.len().div_ceil(12).max(1);
    for (i, l) in labels.iter().enumerate().step_by(step) {
        let x = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - BOTTOM + 14.0, escape(l));
    }
}

/// Grouped bars: one group per bin, one bar per series.
fn token_histogram_svg(dataset: &str, set: &HistogramSet) -> String {
    let mut s = open_svg(&format!("{dataset}: token usage by outcome"), "total tokens", "runs");
    let n_bins = set.n_bins().max(1);
    let max = set.series.iter().flat_map(|h| h.counts.iter()).copied().max().unwrap_or(0).max(1) as f64;
    y_ticks(&mut s, max, |v| format!("{v:.0}"));
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let slot = plot_w / n_bins as f64;
    let bar = slot * 0.8 / set.series.len().max(1) as f64;
    for (si, h) in set.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (bi, &c) in h.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let bh = plot_h * c as f64 / max;
            let x = LEFT + slot * bi as f64 + slot * 0.1 + bar * si as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{bh:.2}" fill="{color}"/>"#,
                H - BOTTOM - bh
            );
        }
    }
    let bins: Vec<String> = (0..n_bins).map(|i| (i as u64 * set.bin_width).to_string()).collect();
    x_labels(&mut s, &bins, slot);
    legend(&mut s, &set.series.iter().map(|h| h.label.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Accuracy per token bucket; absent buckets break the line.
fn accuracy_curve_svg(d: &DatasetDiagnostics) -> String {
    let mut s = open_svg(&format!("{}: accuracy by token bucket", d.dataset), "total tokens", "accuracy");
    y_ticks(&mut s, 1.0, |v| format!("{v:.2}"));
    let n = d.buckets.len().max(1);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let slot = plot_w / n as f64;
    let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for (i, b) in d.buckets.iter().enumerate() {
        match b.accuracy_ratio {
            Some(a) => {
                let pt = (LEFT + slot * (i as f64 + 0.5), H - BOTTOM - plot_h * a);
                segments.last_mut().unwrap().push(pt);
            }
            None if !segments.last().unwrap().is_empty() => segments.push(Vec::new()),
            None => {}
        }
    }
    for seg in segments.iter().filter(|s| !s.is_empty()) {
        let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, pts.join(" "), PALETTE[0]);
        for (x, y) in seg {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, PALETTE[0]);
        }
    }
    let labels: Vec<String> = d.buckets.iter().map(|b| b.bucket_lo.to_string()).collect();
    x_labels(&mut s, &labels, slot);
    s.push_str("</svg>\n");
    s
}

fn diagnostics_svg(r: &DiagnosticsReport) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for d in &r.datasets {
        let name = slug(&d.dataset);
        files.push((format!("{name}_tokens.svg"), token_histogram_svg(&d.dataset, &d.histogram_correctness)));
        files.push((format!("{name}_accuracy.svg"), accuracy_curve_svg(d)));
    }
    files
}

/// Grouped bars per dataset with CI whiskers.
fn ablation_svg(t: &AblationTable) -> String {
    let mut s = open_svg("Accuracy by ablation condition", "dataset", "accuracy (%)");
    y_ticks(&mut s, 100.0, |v| format!("{v:.0}"));
    let plot_w = W - LEFT - RIGHT - 130.0;
    let plot_h = H - TOP - BOTTOM;
    let slot = plot_w / t.rows.len().max(1) as f64;
    let bar = slot * 0.8 / t.labels.len().max(1) as f64;
    let y_of = |v: f64| H - BOTTOM - plot_h * v.clamp(0.0, 1.0);
    for (ri, row) in t.rows.iter().enumerate() {
        for (ci, cell) in row.cells.iter().enumerate() {
            let color = PALETTE[ci % PALETTE.len()];
            let x = LEFT + slot * ri as f64 + slot * 0.1 + bar * ci as f64;
            let y = y_of(cell.summary.mean_accuracy);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{color}"/>"#,
                H - BOTTOM - y
            );
            let cx = x + bar / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y_of(cell.summary.ci_low),
                y_of(cell.summary.ci_high)
            );
        }
    }
    x_labels(&mut s, &t.rows.iter().map(|r| r.dataset.clone()).collect::<Vec<_>>(), slot);
    legend(&mut s, &t.labels);
    s.push_str("</svg>\n");
    s
}
