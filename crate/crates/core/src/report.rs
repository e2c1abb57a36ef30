//! Ledger analysis written out as CSV tables and SVG figures.
//!
//! `analyze` produces, in one directory:
//!
//! | file | content |
//! |------|---------|
//! | `impact.csv` | one row per group: mean ACC/MF1 (percent) per setting, mean `r` |
//! | `w_matrix.csv` | targets by sources, blank where a pair is infeasible |
//! | `generalization.csv` | column means of `W` |
//! | `h_<target>.csv` | normalized comparison matrix of one target |
//! | `h_<target>_raw.csv` | the same before normalization (percent) |
//! | `w_matrix_alpha_<a>.csv` | `W` under another dead band, when requested |
//!
//! `render_svgs` turns each of those CSVs into an `.svg` twin.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ledger::{LedgerError, RunLedger};
use crate::plan::{enumerate_sources, group_pairs, GroupKey, PlanError};
use crate::synthgen::ChannelId;
use crate::transferscore::{
    alpha_sensitivity, build_w, generalization_vector, impact_report, EigenMethod, Generalization, ImpactReport,
    PairwiseMatrix, ScoreError, TransferabilityMatrix,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad table {path}: {msg}")]
    Table { path: PathBuf, msg: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub alpha: f64,
    pub impact: ImpactReport,
    pub w: TransferabilityMatrix,
    pub matrices: Vec<PairwiseMatrix>,
    pub generalization: Vec<Generalization>,
    pub sensitivity: Vec<(f64, TransferabilityMatrix)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    pub method: EigenMethod,
    /// Extra dead bands to rebuild `W` under.
    pub sensitivity: Vec<f64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            alpha: crate::transferscore::DEFAULT_ALPHA,
            method: EigenMethod::ColumnAverage,
            sensitivity: Vec::new(),
        }
    }
}

/// Check the ledger against its own plan, then run the full analysis.
pub fn analyze(ledger: &RunLedger, opts: &AnalyzeOptions) -> Result<Analysis, ReportError> {
    ledger.check_within_plan()?;
    let missing = ledger.pending()?;
    if !missing.is_empty() {
        return Err(ScoreError::MissingRecord(missing).into());
    }
    let pairs = ledger.meta.pairs()?;
    let columns: Vec<ChannelId> = enumerate_sources(&ledger.meta.universe)?.iter().map(|d| d.id()).collect();
    let impact = impact_report(&ledger.records, &group_pairs(&pairs))?;
    let (w, matrices) = build_w(&ledger.records, &pairs, &columns, opts.alpha, opts.method)?;
    let generalization = generalization_vector(&w)?;
    let sensitivity = alpha_sensitivity(&ledger.records, &pairs, &columns, &opts.sensitivity, opts.method)?;
    Ok(Analysis { alpha: opts.alpha, impact, w, matrices, generalization, sensitivity })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    opt(v.map(|x| x * 100.0))
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_table(corner: &str, cols: &[ChannelId], rows: &[(ChannelId, Vec<Option<f64>>)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![corner.to_string()];
    header.extend(cols.iter().map(|c| c.to_string()));
    let body = rows
        .iter()
        .map(|(id, vals)| std::iter::once(id.to_string()).chain(vals.iter().map(|v| opt(*v))).collect())
        .collect();
    (header, body)
}

fn write_w(path: &Path, w: &TransferabilityMatrix) -> Result<(), ReportError> {
    let rows: Vec<_> = w.targets.iter().cloned().zip(w.entries.iter().cloned()).collect();
    let (h, b) = matrix_table("target", &w.sources, &rows);
    write_table(path, &h, &b)
}

fn write_square(path: &Path, ids: &[ChannelId], m: &[Vec<f64>]) -> Result<(), ReportError> {
    let rows: Vec<_> = ids.iter().cloned().zip(m.iter().map(|r| r.iter().map(|v| Some(*v)).collect())).collect();
    let (h, b) = matrix_table("source", ids, &rows);
    write_table(path, &h, &b)
}

fn alpha_tag(a: f64) -> String {
    format!("{a}").replace('.', "p")
}

/// Write every CSV of `analysis` into `out`. Returns the paths written.
pub fn write_csvs(analysis: &Analysis, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let header: Vec<String> = [
        "group", "env_diff", "channel_diff", "cond_diff", "n_pairs", "fs_acc", "fs_mf1", "dt_acc", "dt_mf1",
        "ft_acc", "ft_mf1", "r", "empty",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = analysis
        .impact
        .rows
        .iter()
        .map(|r| {
            let k: GroupKey = r.group;
            vec![
                k.to_string(),
                k.env_diff.to_string(),
                k.channel_diff.to_string(),
                k.cond_diff.to_string(),
                r.n_pairs.to_string(),
                pct(r.fs.map(|v| v.0)),
                pct(r.fs.map(|v| v.1)),
                pct(r.dt.map(|v| v.0)),
                pct(r.dt.map(|v| v.1)),
                pct(r.ft.map(|v| v.0)),
                pct(r.ft.map(|v| v.1)),
                opt(r.r),
                (r.n_pairs == 0).to_string(),
            ]
        })
        .collect();
    let p = out.join("impact.csv");
    write_table(&p, &header, &rows)?;
    written.push(p);

    let p = out.join("w_matrix.csv");
    write_w(&p, &analysis.w)?;
    written.push(p);

    let p = out.join("generalization.csv");
    let rows: Vec<Vec<String>> = analysis
        .generalization
        .iter()
        .map(|g| vec![g.source.to_string(), num(g.value), g.n_targets.to_string()])
        .collect();
    write_table(&p, &["source".into(), "value".into(), "n_targets".into()], &rows)?;
    written.push(p);

    for m in &analysis.matrices {
        let p = out.join(format!("h_{}.csv", m.target.slug()));
        write_square(&p, &m.sources, &m.normalized)?;
        written.push(p);
        let p = out.join(format!("h_{}_raw.csv", m.target.slug()));
        write_square(&p, &m.sources, &m.raw)?;
        written.push(p);
    }
    for (a, w) in &analysis.sensitivity {
        let p = out.join(format!("w_matrix_alpha_{}.csv", alpha_tag(*a)));
        write_w(&p, w)?;
        written.push(p);
    }
    Ok(written)
}

/// A CSV read back as a header and string cells.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Table { header, rows })
}

fn parse_cell(path: &Path, s: &str) -> Result<Option<f64>, ReportError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| ReportError::Table { path: path.into(), msg: format!("not a number: `{s}`") })
}

/// How a heatmap maps values to colours.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Diverging on a log axis, green at 1.
    Reciprocal,
    /// Diverging on a linear axis, green at 0.
    Signed,
    /// White to green from 0 to the maximum.
    Weight,
}

fn lerp(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64, y: f64| (x + (y - x) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

const RED: (f64, f64, f64) = (215.0, 48.0, 39.0);
const GREEN: (f64, f64, f64) = (26.0, 152.0, 80.0);
const BLUE: (f64, f64, f64) = (49.0, 54.0, 149.0);
const WHITE: (f64, f64, f64) = (255.0, 255.0, 255.0);

fn colour(scale: Scale, v: f64, extent: f64) -> String {
    match scale {
        Scale::Reciprocal | Scale::Signed => {
            let x = if scale == Scale::Reciprocal { v.max(1e-12).ln() } else { v };
            let t = if extent > 0.0 { x / extent } else { 0.0 };
            if t < 0.0 {
                lerp(GREEN, RED, -t)
            } else {
                lerp(GREEN, BLUE, t)
            }
        }
        Scale::Weight => lerp(WHITE, GREEN, if extent > 0.0 { v / extent } else { 0.0 }),
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn heatmap_svg(title: &str, t: &Table, scale: Scale, path: &Path) -> Result<String, ReportError> {
    let cols = &t.header[1..];
    let mut cells = Vec::new();
    for row in &t.rows {
        let vals = row[1..].iter().map(|s| parse_cell(path, s)).collect::<Result<Vec<_>, _>>()?;
        cells.push((row[0].clone(), vals));
    }
    let extent = cells
        .iter()
        .flat_map(|(_, v)| v.iter().flatten())
        .map(|&v| match scale {
            Scale::Reciprocal => v.max(1e-12).ln().abs(),
            _ => v.abs(),
        })
        .fold(0.0, f64::max);

    let (cw, ch, left, top) = (64.0, 24.0, 170.0, 150.0);
    let width = left + cw * cols.len() as f64 + 20.0;
    let height = top + ch * cells.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="8" y="16" font-size="13">{}</text>"#, esc(title));
    for (j, c) in cols.iter().enumerate() {
        let x = left + cw * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 6.0,
            top - 6.0,
            esc(c)
        );
    }
    for (i, (label, vals)) in cells.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + ch * 0.65, esc(label));
        for (j, v) in vals.iter().enumerate() {
            let x = left + cw * j as f64;
            match v {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}" stroke="#ffffff"/><text x="{}" y="{}" text-anchor="middle">{:.3}</text>"##,
                        colour(scale, *v, extent),
                        x + cw / 2.0,
                        y + ch * 0.65,
                        v
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="#eeeeee" stroke="#ffffff"/>"##
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn bars_svg(title: &str, labels: &[String], values: &[Option<f64>]) -> String {
    let (bh, left, plot) = (20.0, 260.0, 320.0);
    let extent = values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let has_neg = values.iter().flatten().any(|v| *v < 0.0);
    let zero = if has_neg { left + plot / 2.0 } else { left };
    let span = if has_neg { plot / 2.0 } else { plot };
    let height = 40.0 + bh * labels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="10">"#,
        left + plot + 70.0
    );
    let _ = writeln!(s, r#"<text x="8" y="16" font-size="13">{}</text>"#, esc(title));
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let y = 28.0 + bh * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + bh * 0.65, esc(l));
        match v {
            Some(v) => {
                let w = if extent > 0.0 { v.abs() / extent * span } else { 0.0 };
                let x = if *v < 0.0 { zero - w } else { zero };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{}" width="{w}" height="{}" fill="{}"/><text x="{}" y="{}">{:.3}</text>"#,
                    y + 2.0,
                    bh - 4.0,
                    if *v < 0.0 { "#d73027" } else { "#1a9850" },
                    left + plot + 4.0,
                    y + bh * 0.65,
                    v
                );
            }
            None => {
                let _ = writeln!(s, r#"<text x="{}" y="{}">empty</text>"#, zero + 4.0, y + bh * 0.65);
            }
        }
    }
    let _ = writeln!(s, r##"<line x1="{zero}" y1="24" x2="{zero}" y2="{}" stroke="#333333"/>"##, height - 8.0);
    s.push_str("</svg>\n");
    s
}

fn column(t: &Table, name: &str, path: &Path) -> Result<usize, ReportError> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| ReportError::Table { path: path.into(), msg: format!("no `{name}` column") })
}

/// Emit an `.svg` next to every known CSV in `dir`. Returns the SVG paths.
pub fn render_svgs(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut written = Vec::new();
    for name in names {
        let path = dir.join(&name);
        let stem = name.trim_end_matches(".csv");
        let t = read_table(&path)?;
        let svg = if stem == "impact" {
            let (g, r) = (column(&t, "group", &path)?, column(&t, "r", &path)?);
            let labels: Vec<String> = t.rows.iter().map(|row| row[g].clone()).collect();
            let vals = t.rows.iter().map(|row| parse_cell(&path, &row[r])).collect::<Result<Vec<_>, _>>()?;
            bars_svg("Relative difference r (%) by group", &labels, &vals)
        } else if stem == "generalization" {
            let v = column(&t, "value", &path)?;
            let labels: Vec<String> = t.rows.iter().map(|row| row[0].clone()).collect();
            let vals = t.rows.iter().map(|row| parse_cell(&path, &row[v])).collect::<Result<Vec<_>, _>>()?;
            bars_svg("Generalization (mean transferability)", &labels, &vals)
        } else if stem.starts_with("w_matrix") {
            heatmap_svg(&format!("Transferability {stem}"), &t, Scale::Weight, &path)?
        } else if let Some(target) = stem.strip_prefix("h_") {
            if let Some(target) = target.strip_suffix("_raw") {
                heatmap_svg(&format!("Pairwise differences (%) for {target}"), &t, Scale::Signed, &path)?
            } else {
                heatmap_svg(&format!("Normalized comparisons for {target}"), &t, Scale::Reciprocal, &path)?
            }
        } else {
            continue;
        };
        let out = dir.join(format!("{stem}.svg"));
        fs::write(&out, svg)?;
        written.push(out);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colours_have_green_midpoint() {
        assert_eq!(colour(Scale::Reciprocal, 1.0, 2.0), "#1a9850");
        assert_eq!(colour(Scale::Signed, 0.0, 5.0), "#1a9850");
        assert_ne!(colour(Scale::Reciprocal, 0.2, 2.0), colour(Scale::Reciprocal, 5.0, 2.0));
        assert_eq!(colour(Scale::Weight, 0.0, 1.0), "#ffffff");
    }

    #[test]
    fn alpha_tags() {
        assert_eq!(alpha_tag(0.5), "0p5");
        assert_eq!(alpha_tag(2.0), "2");
    }

    #[test]
    fn heatmap_marks_absent_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w_matrix.csv");
        fs::write(&p, "target,A:C4,B:C4\nT:C4,0.6,\n").unwrap();
        let svgs = render_svgs(dir.path()).unwrap();
        assert_eq!(svgs.len(), 1);
        let text = fs::read_to_string(&svgs[0]).unwrap();
        assert!(text.contains("0.600"));
        assert!(text.contains("#eeeeee"));
        fs::write(&p, "target,A:C4\nT:C4,abc\n").unwrap();
        assert!(matches!(render_svgs(dir.path()), Err(ReportError::Table { .. })));
    }
}
