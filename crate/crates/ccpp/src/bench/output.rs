//! Trial tables, summaries, histograms and SVG bar charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BenchError, Summary, TrialReport};

/// Number of histogram bins.
pub const HIST_BINS: usize = 30;

/// Equal-width histogram over the finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `HIST_BINS + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Histogram of the finite entries of `values` with [`HIST_BINS`] bins.
/// A constant sample gets a unit-width range centred on its value.
pub fn histogram(values: &[f64]) -> Histogram {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let (mut lo, mut hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if v.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo <= 0.0 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let w = (hi - lo) / HIST_BINS as f64;
    let edges: Vec<f64> = (0..=HIST_BINS).map(|i| lo + w * i as f64).collect();
    let mut counts = vec![0; HIST_BINS];
    for x in v {
        let b = (((x - lo) / w) as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

fn io(path: &Path, source: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> BenchError {
    io(path, std::io::Error::other(e))
}

/// Metric columns rendered as histograms.
const METRICS: [(&str, fn(&TrialReport) -> f64); 4] = [
    ("bound", |r| r.bound),
    ("objective", |r| r.objective),
    ("ec0", |r| r.ec0),
    ("ecc", |r| r.ecc),
];

/// Renders the trial table. Wall times are omitted so that identical seeds
/// give byte-identical files.
pub fn trials_csv(reports: &[TrialReport]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "status", "objective", "bound", "ec0", "ecc", "nodes", "x"])?;
    for r in reports {
        let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.trial.to_string(),
            r.status.clone(),
            r.objective.to_string(),
            r.bound.to_string(),
            r.ec0.to_string(),
            r.ecc.to_string(),
            r.nodes.to_string(),
            x.join(";"),
        ])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn svg_bars(title: &str, h: &Histogram) -> String {
    let (width, height, pad) = (600.0, 300.0, 30.0);
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (width - 2.0 * pad) / h.counts.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{title}</text>"#);
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = (height - 2.0 * pad) * c as f64 / max;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4878a8"/>"##,
            pad + bw * i as f64,
            height - pad - bh,
            (bw - 1.0).max(0.5),
            bh
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        height - 8.0,
        h.edges[0]
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.4}</text>"#,
        width - pad,
        height - 8.0,
        h.edges[h.edges.len() - 1]
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `trials.csv`, `summary.json` and one `hist_<metric>.csv` per
/// metric (plus `hist_<metric>.svg` when `svg` is set) into `dir`.
pub fn emit_outputs(reports: &[TrialReport], summary: &Summary, dir: &Path, svg: bool) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join("trials.csv");
    let bytes = trials_csv(reports).map_err(|e| csv_err(&path, e))?;
    fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| io(&path, e))?;
    for (name, f) in METRICS {
        let values: Vec<f64> = reports.iter().filter(|r| r.has_point()).map(f).collect();
        let h = histogram(&values);
        let path = dir.join(format!("hist_{name}.csv"));
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = std::iter::once(["lo".to_string(), "hi".into(), "count".into()]).chain(
            h.counts
                .iter()
                .enumerate()
                .map(|(i, c)| [h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()]),
        );
        for row in rows {
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| io(&path, e.into_error()))?;
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        if svg {
            let path = dir.join(format!("hist_{name}.svg"));
            fs::write(&path, svg_bars(name, &h)).map_err(|e| io(&path, e))?;
        }
    }
    Ok(())
}
