//! Accuracy tables, box-plot summaries and confusion-matrix renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{AggregateResult, Target};
use crate::training::{confusion_accuracy, Confusion};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("confusion matrix is {rows}x{cols} with {labels} labels; expected square and aligned")]
    ShapeMismatch { rows: usize, cols: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// `"mean ± std"` with two decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_id: String,
    /// Percent.
    pub mean: f64,
    pub std: f64,
    pub formatted: String,
    pub runs: usize,
    pub std_undefined: bool,
    /// Mean test accuracy (percent) per held-out domain.
    pub per_fold: Vec<(u32, f64)>,
    pub target: Option<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

/// One row per aggregate, sorted by config id, accuracies in percent.
pub fn build_table(results: &[AggregateResult]) -> ReportTable {
    let mut rows: Vec<ReportRow> = results
        .iter()
        .map(|a| {
            let mean = a.mean * 100.0;
            let std = a.std * 100.0;
            ReportRow {
                config_id: a.config_id.clone(),
                mean,
                std,
                formatted: format_mean_std(mean, std),
                runs: a.runs.len(),
                std_undefined: a.std_undefined,
                per_fold: a.per_fold_means().into_iter().map(|(d, m)| (d, m * 100.0)).collect(),
                target: a.target,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.config_id.cmp(&b.config_id));
    ReportTable { rows }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,test_accuracy,mean,std,runs,target\n");
        for r in &self.rows {
            let target = r.target.map(|t| format_mean_std(t.mean, t.std)).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.4},{:.4},{},{}", r.config_id, r.formatted, r.mean, r.std, r.runs, target);
        }
        out
    }
}

/// Five-number summary with 1.5 IQR outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub method: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
    pub points: Vec<f64>,
}

/// Quantile of sorted data by linear interpolation at rank `(n - 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box-plot summary of one method's points. `None` when there are none.
pub fn box_stats(method: &str, points: &[f64]) -> Option<BoxStats> {
    if points.is_empty() {
        return None;
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Some(BoxStats {
        method: method.to_string(),
        min: sorted[0],
        q1,
        median: quantile(&sorted, 0.5),
        q3,
        max: sorted[sorted.len() - 1],
        outliers: sorted.iter().copied().filter(|&v| v < lo || v > hi).collect(),
        points: points.to_vec(),
    })
}

/// Box-plot data per method, in the given order.
pub fn boxplot_data(methods: &[(String, Vec<f64>)]) -> Vec<BoxStats> {
    methods.iter().filter_map(|(m, pts)| box_stats(m, pts)).collect()
}

fn check_square(confusion: &Confusion, labels: &[String]) -> Result<(), ReportError> {
    let rows = confusion.len();
    let cols = confusion.first().map_or(0, Vec::len);
    if rows == 0 || rows != labels.len() || confusion.iter().any(|r| r.len() != rows) {
        return Err(ReportError::ShapeMismatch {
            rows,
            cols,
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Exact counts, rows true class, columns predicted, in label order.
pub fn confusion_csv(confusion: &Confusion, labels: &[String]) -> Result<String, ReportError> {
    check_square(confusion, labels)?;
    let mut out = String::from("true\\predicted");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(confusion) {
        out.push_str(l);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Heatmap with counts in the cells and the accuracy in the caption.
/// Cell shade is the row-normalized rate.
pub fn confusion_svg(confusion: &Confusion, labels: &[String], title: &str) -> Result<String, ReportError> {
    check_square(confusion, labels)?;
    let k = labels.len();
    let cell = 80;
    let left = 110;
    let top = 60;
    let width = left + k * cell + 20;
    let height = top + k * cell + 70;
    let acc = confusion_accuracy(confusion);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, width / 2, escape(title));
    for (i, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let rate = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = (255.0 * (1.0 - rate)).round() as u8;
            let (x, y) = (left + j * cell, top + i * cell);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
            );
            let ink = if rate > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v}</text>"#,
                x + cell / 2,
                y + cell / 2 + 5
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8,
            top + i * cell + cell / 2 + 5,
            escape(&labels[i])
        );
    }
    for (j, l) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + j * cell + cell / 2,
            top + k * cell + 20,
            escape(l)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted; accuracy {acc:.4}</text>"#,
        left + k * cell / 2,
        top + k * cell + 50
    );
    s.push_str("</svg>\n");
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedConfusion {
    pub svg: PathBuf,
    pub csv: PathBuf,
    pub accuracy: f64,
}

/// Writes `<dir>/<name>.svg` and `<dir>/<name>.csv`.
pub fn render_confusion(
    confusion: &Confusion,
    labels: &[String],
    dir: &Path,
    name: &str,
) -> Result<RenderedConfusion, ReportError> {
    let svg = confusion_svg(confusion, labels, name)?;
    let csv = confusion_csv(confusion, labels)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let svg_path = dir.join(format!("{name}.svg"));
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&svg_path, svg).map_err(io(&svg_path))?;
    std::fs::write(&csv_path, csv).map_err(io(&csv_path))?;
    Ok(RenderedConfusion {
        svg: svg_path,
        csv: csv_path,
        accuracy: confusion_accuracy(confusion),
    })
}

/// Element-wise sum of equally sized matrices.
pub fn sum_confusions<'a>(mats: impl IntoIterator<Item = &'a Confusion>) -> Option<Confusion> {
    let mut it = mats.into_iter();
    let mut acc = it.next()?.clone();
    for m in it {
        if m.len() != acc.len() {
            return None;
        }
        for (a, b) in acc.iter_mut().zip(m) {
            if a.len() != b.len() {
                return None;
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    Some(acc)
}

/// Modelling choices every report states alongside its numbers.
pub const ASSUMPTIONS: [&str; 6] = [
    "validation is a stratified 20% window-level split of the training domains",
    "the best epoch is chosen by validation accuracy; test accuracy at that epoch is reported",
    "RMS scale is fitted per axis over all training-domain recordings",
    "Z-score uses the population standard deviation of each recording",
    "windows are non-overlapping; the tail shorter than a window is dropped",
    "repeat r trains with seed base + r",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::RunSummary;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_repeat_formats_zero_std() {
        let a = AggregateResult::from_runs(
            "grid",
            vec![RunSummary {
                test_domain: 16,
                repeat: 0,
                seed: 42,
                test_acc: 0.8276,
                confusion: vec![vec![1, 0], vec![0, 1]],
            }],
            None,
        );
        let t = build_table(&[a]);
        assert_eq!(t.rows[0].formatted, "82.76 ± 0.00");
        assert_eq!(format_mean_std(82.76, 2.91), "82.76 ± 2.91");
        let back: ReportTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn textbook_quartiles() {
        let b = box_stats("m", &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(b.outliers.is_empty());
        let one = box_stats("m", &[7.0]).unwrap();
        assert_eq!((one.min, one.q1, one.median, one.q3, one.max), (7.0, 7.0, 7.0, 7.0, 7.0));
        let out = box_stats("m", &[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(out.outliers, vec![100.0]);
    }

    #[test]
    fn confusion_rendering() {
        let c = vec![vec![9, 1], vec![2, 8]];
        let l = labels(&["B", "S"]);
        assert_eq!(confusion_csv(&c, &l).unwrap(), "true\\predicted,B,S\nB,9,1\nS,2,8\n");
        assert!(confusion_svg(&c, &l, "t").unwrap().contains("accuracy 0.8500"));
        let id = vec![vec![5, 0], vec![0, 5]];
        assert!(confusion_svg(&id, &l, "t").unwrap().contains("accuracy 1.0000"));
        let bad = vec![vec![1, 2, 3], vec![4, 5, 6]];
        assert!(matches!(confusion_csv(&bad, &l), Err(ReportError::ShapeMismatch { rows: 2, cols: 3, .. })));
        let dir = tempfile::tempdir().unwrap();
        let r = render_confusion(&c, &l, dir.path(), "A1_16").unwrap();
        assert!(r.svg.is_file() && r.csv.is_file());
        assert_eq!(r.accuracy, 0.85);
    }

    #[test]
    fn confusion_sums() {
        let a = vec![vec![1, 2], vec![3, 4]];
        assert_eq!(sum_confusions([&a, &a]), Some(vec![vec![2, 4], vec![6, 8]]));
        assert_eq!(sum_confusions(std::iter::empty()), None);
    }
}
