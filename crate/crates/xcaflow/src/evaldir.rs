//! Metrics over directories of predicted and ground-truth flow files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use xcaflow_core::metrics::{evaluate, EvalResult};

use crate::error::DataError;
use crate::io::{read_flow_any, read_mask};

#[derive(Clone, Debug, PartialEq)]
pub struct FileMetrics {
    pub name: String,
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub files: Vec<FileMetrics>,
    /// Pixel-weighted totals over all files.
    pub total: EvalResult,
}

fn stem(p: &Path) -> Option<String> {
    p.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn flow_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DataError::new(format!("reading directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("flo" | "png")))
        .collect();
    out.sort();
    Ok(out)
}

fn find_with_stem(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

fn eval_file(pred: &Path, gt_dir: &Path, occ_dir: Option<&Path>) -> Result<FileMetrics> {
    let name = stem(pred).context("unnamed prediction file")?;
    let gt_path = find_with_stem(gt_dir, &name, &["flo", "png"])
        .ok_or_else(|| DataError::new(format!("no ground truth for '{name}' in {}", gt_dir.display())))?;
    let (flow, _) = read_flow_any(pred)?;
    let (gt, valid) = read_flow_any(&gt_path)?;
    let occ = match occ_dir.and_then(|d| find_with_stem(d, &name, &["png"])) {
        Some(p) => Some(read_mask(&p)?),
        None => None,
    };
    let result = evaluate(&flow, &gt, valid.as_deref(), occ.as_deref()).with_context(|| format!("evaluating '{name}'"))?;
    Ok(FileMetrics { name, result })
}

/// Evaluates every `.flo`/`.png` in `pred_dir` against the file with the same
/// stem in `gt_dir`. Occlusion masks (`<stem>.png`, nonzero = occluded) are
/// optional per file; without one the unmatched columns are absent.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, occ_dir: Option<&Path>) -> Result<EvalTable> {
    let preds = flow_files(pred_dir)?;
    if preds.is_empty() {
        return Err(DataError::new(format!("no flow files in {}", pred_dir.display())).into());
    }
    let files = preds
        .par_iter()
        .map(|p| eval_file(p, gt_dir, occ_dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable {
        total: combine(&files),
        files,
    })
}

fn combine(files: &[FileMetrics]) -> EvalResult {
    let sum = |f: &dyn Fn(&EvalResult) -> f64| files.iter().map(|m| f(&m.result)).sum::<f64>();
    let n_all: usize = files.iter().map(|f| f.result.n_all).sum();
    let n_matched: usize = files.iter().map(|f| f.result.n_matched).sum();
    let all_have_occ = files.iter().all(|f| f.result.n_unmatched.is_some());
    let n_unmatched = all_have_occ.then(|| files.iter().filter_map(|f| f.result.n_unmatched).sum::<usize>());
    let div = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
    EvalResult {
        aepe_all: div(sum(&|r| r.aepe_all * r.n_all as f64), n_all),
        aepe_matched: div(sum(&|r| r.aepe_matched * r.n_matched as f64), n_matched),
        aepe_unmatched: n_unmatched.map(|nu| {
            div(sum(&|r| r.aepe_unmatched.unwrap_or(0.0) * r.n_unmatched.unwrap_or(0) as f64), nu)
        }),
        fl_all: div(sum(&|r| r.fl_all * r.n_all as f64), n_all),
        fl_noc: div(sum(&|r| r.fl_noc * r.n_matched as f64), n_matched),
        n_all,
        n_matched,
        n_unmatched,
    }
}

const HEADER: [&str; 9] = [
    "name",
    "n_all",
    "aepe_all",
    "n_matched",
    "aepe_matched",
    "n_unmatched",
    "aepe_unmatched",
    "fl_all",
    "fl_noc",
];

fn row(name: &str, r: &EvalResult) -> [String; 9] {
    let opt = |v: Option<String>| v.unwrap_or_default();
    [
        name.to_string(),
        r.n_all.to_string(),
        format!("{:.6}", r.aepe_all),
        r.n_matched.to_string(),
        format!("{:.6}", r.aepe_matched),
        opt(r.n_unmatched.map(|n| n.to_string())),
        opt(r.aepe_unmatched.map(|a| format!("{a:.6}"))),
        format!("{:.4}", r.fl_all),
        format!("{:.4}", r.fl_noc),
    ]
}

impl EvalTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(HEADER)?;
        for f in &self.files {
            w.write_record(row(&f.name, &f.result))?;
        }
        w.write_record(row("ALL", &self.total))?;
        Ok(w.flush()?)
    }

    /// Fixed-width table; absent unmatched values print as `-`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>10} {:>10} {:>10} {:>8} {:>8}",
            "name", "pixels", "AEPE", "matched", "unmatched", "Fl-all%", "Fl-noc%"
        );
        for (name, r) in self.files.iter().map(|f| (f.name.as_str(), &f.result)).chain([("ALL", &self.total)]) {
            let un = r.aepe_unmatched.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<20} {:>9} {:>10.4} {:>10.4} {:>10} {:>8.3} {:>8.3}",
                name, r.n_all, r.aepe_all, r.aepe_matched, un, r.fl_all, r.fl_noc
            );
        }
        s
    }
}
