//! Report files: ratio CSV, one SVG ratio chart per distortion kind and a
//! text accuracy table with mean ± std over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Variant;
use super::eval::{Cell, EvalReport};
use super::PipelineError;
use crate::degrade::DistortionKind;

pub const CSV_HEADER: &str = "model,kind,intensity,accuracy,ratio";

/// Per-model statistics over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSummary {
    pub model: String,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// `(cell, mean, std)` in grid order; std is the sample deviation (0 for
    /// one seed).
    pub cells: Vec<(Cell, f64, f64)>,
}

impl ModelSummary {
    pub fn mean(&self, cell: Cell) -> Option<f64> {
        self.cells.iter().find(|(c, ..)| *c == cell).map(|&(_, m, _)| m)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by model label, checking that they share one grid.
pub fn summarize(reports: &[EvalReport]) -> Result<Vec<ModelSummary>, PipelineError> {
    let first = reports.first().ok_or_else(|| PipelineError::Config("no evaluation reports given".into()))?;
    let grid: Vec<Cell> = first.cells.iter().map(|&(c, _)| c).collect();
    for r in reports {
        let cells: Vec<Cell> = r.cells.iter().map(|&(c, _)| c).collect();
        if cells != grid {
            return Err(PipelineError::GridMismatch(format!(
                "'{}' seed {} has {} cells, '{}' seed {} has {}",
                r.model,
                r.seed,
                cells.len(),
                first.model,
                first.seed,
                grid.len()
            )));
        }
    }
    let mut out: Vec<ModelSummary> = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.model.as_str()) {
            labels.push(&r.model);
        }
    }
    for label in labels {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.model == label).collect();
        if group.iter().any(|r| r.variant != group[0].variant) {
            return Err(PipelineError::Config(format!("model '{label}' mixes variants")));
        }
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Config(format!("model '{label}' has a repeated seed")));
        }
        let cells = grid
            .iter()
            .enumerate()
            .map(|(i, &cell)| {
                let values: Vec<f64> = group.iter().map(|r| r.cells[i].1).collect();
                let (m, s) = mean_std(&values);
                (cell, m, s)
            })
            .collect();
        out.push(ModelSummary { model: label.to_string(), variant: group[0].variant, seeds, cells });
    }
    Ok(out)
}

fn baseline(summaries: &[ModelSummary]) -> Result<&ModelSummary, PipelineError> {
    let mut it = summaries.iter().filter(|s| s.variant == Variant::SingleBaseline);
    match (it.next(), it.next()) {
        (Some(b), None) => Ok(b),
        (None, _) => Err(PipelineError::Config("ratios need exactly one single_baseline model".into())),
        (Some(_), Some(_)) => Err(PipelineError::Config("more than one single_baseline model given".into())),
    }
}

/// Mean accuracy divided by the baseline's mean accuracy in the same cell.
fn ratio(acc: f64, base: f64) -> f64 {
    if base > 0.0 {
        acc / base
    } else if acc > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

pub fn render_csv(summaries: &[ModelSummary]) -> Result<String, PipelineError> {
    let base = baseline(summaries)?;
    let mut s = format!("{CSV_HEADER}\n");
    for m in summaries {
        for (i, &(cell, mean, _)) in m.cells.iter().enumerate() {
            let r = ratio(mean, base.cells[i].1);
            let _ = writeln!(s, "{},{},{},{mean:.6},{r:.6}", m.model, cell.kind, cell.intensity);
        }
    }
    Ok(s)
}

fn kinds(summary: &ModelSummary) -> Vec<DistortionKind> {
    let mut out = Vec::new();
    for (cell, ..) in &summary.cells {
        if !cell.is_clean() && !out.contains(&cell.kind) {
            out.push(cell.kind);
        }
    }
    out
}

pub fn render_table(summaries: &[ModelSummary]) -> String {
    let mut s = String::new();
    let width = summaries.iter().map(|m| m.model.len()).max().unwrap_or(5).max(5);
    let clean_col = |m: &ModelSummary| {
        let (_, mean, std) = m.cells[0];
        format!("{:>6.2} ± {:<5.2}", mean * 100.0, std * 100.0)
    };
    let Some(first) = summaries.first() else {
        return s;
    };
    for kind in kinds(first) {
        let cells: Vec<Cell> = first.cells.iter().map(|&(c, ..)| c).filter(|c| c.kind == kind).collect();
        let _ = writeln!(s, "{kind} (top-1 accuracy %, mean ± std over seeds)");
        let _ = write!(s, "{:<width$}  {:^14}", "model", "clean");
        for c in &cells {
            let _ = write!(s, "  {:^14}", format!("int.{}", c.intensity));
        }
        s.push('\n');
        for m in summaries {
            let _ = write!(s, "{:<width$}  {}", m.model, clean_col(m));
            for c in &cells {
                let (_, mean, std) = m.cells.iter().find(|(x, ..)| x == c).copied().expect("shared grid");
                let _ = write!(s, "  {:>6.2} ± {:<5.2}", mean * 100.0, std * 100.0);
            }
            s.push('\n');
        }
        s.push('\n');
    }
    let _ = writeln!(s, "seeds: {}", first.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Ratio-to-baseline line chart for one distortion kind.
pub fn render_svg(summaries: &[ModelSummary], kind: DistortionKind) -> Result<String, PipelineError> {
    let base = baseline(summaries)?;
    let (w, h) = (560.0, 360.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let series: Vec<(&str, Vec<(u8, f64)>)> = summaries
        .iter()
        .map(|m| {
            let pts = m
                .cells
                .iter()
                .zip(&base.cells)
                .filter(|((c, ..), _)| c.kind == kind)
                .map(|(&(c, mean, _), &(_, b, _))| (c.intensity, ratio(mean, b)))
                .collect();
            (m.model.as_str(), pts)
        })
        .collect();
    let finite = series.iter().flat_map(|(_, p)| p.iter().map(|&(_, r)| r)).filter(|r| r.is_finite());
    let (mut lo, mut hi) = finite.fold((1.0f64, 1.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let pad = ((hi - lo) * 0.1).max(0.05);
    lo -= pad;
    hi += pad;
    let px = |i: u8| left + (f64::from(i) - 1.0) / 3.0 * (w - left - right);
    let py = |r: f64| top + (hi - r.clamp(lo, hi)) / (hi - lo) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{kind}: accuracy ratio to baseline</text>"#,
        (left + w - right) / 2.0
    );
    // Axes, ticks and grid.
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    for i in 1..=4u8 {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">Int.{i}</text>"#,
            px(i),
            h - bottom + 18.0
        );
    }
    for k in 0..=4 {
        let r = lo + (hi - lo) * f64::from(k) / 4.0;
        let y = py(r);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/><text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{r:.3}</text>"##,
            w - right,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="black" stroke-dasharray="5,4"/>"#,
        py(1.0),
        w - right
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(i, r)| format!("{:.1},{:.1}", px(i), py(r))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(i, r) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(i), py(r));
        }
        let ly = top + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}" font-family="sans-serif" font-size="11">{name}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 35.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub table: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Writes `report.csv`, `table.txt` and `ratio_<kind>.svg` into `out_dir`.
pub fn write_report(reports: &[EvalReport], out_dir: &Path) -> Result<ReportFiles, PipelineError> {
    let summaries = summarize(reports)?;
    let csv = render_csv(&summaries)?;
    fs::create_dir_all(out_dir)?;
    let files = ReportFiles {
        csv: out_dir.join("report.csv"),
        table: out_dir.join("table.txt"),
        charts: kinds(&summaries[0]).iter().map(|k| out_dir.join(format!("ratio_{k}.svg"))).collect(),
    };
    fs::write(&files.csv, csv)?;
    fs::write(&files.table, render_table(&summaries))?;
    for (kind, path) in kinds(&summaries[0]).into_iter().zip(&files.charts) {
        fs::write(path, render_svg(&summaries, kind)?)?;
    }
    Ok(files)
}
