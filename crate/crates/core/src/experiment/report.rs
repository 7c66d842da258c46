use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Cell, PresetReport, PresetRow, RunReport};
use crate::{Error, Result};

fn pct(c: &Option<Cell>) -> String {
    match c {
        Some(c) => format!("{:.1} ± {:.1}", 100.0 * c.mean, 100.0 * c.std),
        None => "-".into(),
    }
}

// kappa columns already hold percentages
fn cell_text(col: &str, c: &Option<Cell>) -> String {
    match c {
        Some(c) if col.starts_with("kappa") => format!("{:.2} ± {:.2}", c.mean, c.std),
        _ => pct(c),
    }
}

/// One line per row: `method,<col> mean,<col> std,...`. Accuracies are
/// fractions; empty fields mark cells that were not run.
pub fn render_csv(report: &PresetReport) -> String {
    let mut out = String::from("method");
    for c in &report.columns {
        let _ = write!(out, ",{c} mean,{c} std");
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&row.label.replace(',', ";"));
        for cell in &row.cells {
            match cell {
                Some(c) => {
                    let _ = write!(out, ",{:.6},{:.6}", c.mean, c.std);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Aligned plain-text table with `mean ± std` in percent.
pub fn render_text(report: &PresetReport) -> String {
    let mut header = vec!["method".to_string()];
    header.extend(report.columns.iter().cloned());
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.label.clone()];
            v.extend(r.cells.iter().zip(&report.columns).map(|(c, col)| cell_text(col, c)));
            v
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r.get(i).map_or(0, |s| s.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if i == 0 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "  {}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = format!("{}\n", report.preset);
    out.push_str(&line(&header));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn write_preset_outputs(dir: &Path, report: &PresetReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in [
        ("preset.json", serde_json::to_vec_pretty(report)?),
        ("table.csv", render_csv(report).into_bytes()),
        ("table.txt", render_text(report).into_bytes()),
    ] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn from_run(r: RunReport) -> PresetReport {
    PresetReport {
        preset: "run".into(),
        config_checksum: r.config_checksum.clone(),
        columns: vec!["accuracy".into()],
        rows: vec![PresetRow {
            label: r.label.clone(),
            cells: vec![Cell::from_values(&r.accuracies)],
        }],
        runs: vec![r],
    }
}

fn collect(dir: &Path, depth: usize, out: &mut Vec<PresetReport>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() && depth > 0 {
            collect(&path, depth - 1, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            let Ok(text) = fs::read_to_string(&path) else { continue };
            if let Ok(p) = serde_json::from_str::<PresetReport>(&text) {
                out.push(p);
            } else if let Ok(r) = serde_json::from_str::<RunReport>(&text) {
                out.push(from_run(r));
            }
        }
    }
    Ok(())
}

/// Every preset or run report found in `dir` and its immediate subdirectories.
pub fn load_reports(dir: &Path) -> Result<Vec<PresetReport>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    collect(dir, 1, &mut out)?;
    Ok(out)
}
