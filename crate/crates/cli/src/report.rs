use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use slagnet::experiments::{
    ablation_suite, hyperparameter_grid, load_run_records, write_json, AggregateResult, RunRecord, RunSummary, Target,
};
use slagnet::reporting::{boxplot_data, build_table, format_mean_std, render_confusion, sum_confusions, ASSUMPTIONS};

pub struct ReportOutcome {
    pub configs: usize,
    pub runs: usize,
    pub written: Vec<PathBuf>,
    /// Run files that could not be read, with the reason.
    pub failures: Vec<(PathBuf, String)>,
}

#[derive(Debug)]
pub struct NoResults(pub PathBuf);

impl std::fmt::Display for NoResults {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no run records under {}", self.0.display())
    }
}

impl std::error::Error for NoResults {}

/// Known targets and notes by config id.
fn catalogue() -> BTreeMap<String, (Option<Target>, Option<String>)> {
    hyperparameter_grid()
        .into_iter()
        .chain(ablation_suite())
        .map(|c| (c.id, (c.target, c.note)))
        .collect()
}

fn write_text(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Order for box plots: ablation rows first in table order, then the rest.
fn method_rank(id: &str) -> (usize, String) {
    let pos = ablation_suite().iter().position(|c| c.id == id).unwrap_or(usize::MAX);
    (pos, id.to_string())
}

pub fn write_report(results: &Path, out: &Path) -> Result<ReportOutcome> {
    let (records, failures) = load_run_records(results);
    if records.is_empty() {
        if failures.is_empty() {
            return Err(NoResults(results.to_path_buf()).into());
        }
        return Ok(ReportOutcome {
            configs: 0,
            runs: 0,
            written: Vec::new(),
            failures,
        });
    }
    let catalogue = catalogue();
    let mut by_config: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        by_config.entry(r.config_id.clone()).or_default().push(r);
    }
    let runs = by_config.values().map(Vec::len).sum();
    let aggregates: Vec<AggregateResult> = by_config
        .iter()
        .map(|(id, recs)| {
            let target = catalogue.get(id).and_then(|(t, _)| *t);
            AggregateResult::from_runs(id, recs.iter().map(RunSummary::from).collect(), target)
        })
        .collect();
    let mut written = Vec::new();

    let table = build_table(&aggregates);
    let table_dir = out.join("table");
    let json_path = table_dir.join("summary.json");
    write_json(&json_path, &table)?;
    written.push(json_path);
    write_text(&table_dir.join("summary.csv"), &table.to_csv(), &mut written)?;

    let mut md = String::from("| config | test accuracy (%) | runs | folds | target |\n|---|---|---|---|---|\n");
    for row in &table.rows {
        let target = row.target.map(|t| format_mean_std(t.mean, t.std)).unwrap_or_else(|| "-".into());
        let _ = writeln!(md, "| {} | {} | {} | {} | {} |", row.config_id, row.formatted, row.runs, row.per_fold.len(), target);
    }
    let notes: Vec<String> = by_config
        .keys()
        .filter_map(|id| catalogue.get(id).and_then(|(_, n)| n.as_ref()).map(|n| format!("- {id}: {n}")))
        .collect();
    if !notes.is_empty() {
        md.push_str("\nRow notes:\n\n");
        md.push_str(&notes.join("\n"));
        md.push('\n');
    }
    md.push_str("\nAssumptions:\n\n");
    for a in ASSUMPTIONS {
        let _ = writeln!(md, "- {a}");
    }
    write_text(&table_dir.join("summary.md"), &md, &mut written)?;

    let mut methods: Vec<(String, Vec<f64>)> = aggregates
        .iter()
        .map(|a| (a.config_id.clone(), a.per_fold_means().into_iter().map(|(_, m)| m * 100.0).collect()))
        .collect();
    methods.sort_by_key(|(id, _)| method_rank(id));
    let boxes = boxplot_data(&methods);
    let box_dir = out.join("boxplot");
    let box_json = box_dir.join("summary.json");
    write_json(&box_json, &boxes)?;
    written.push(box_json);
    let mut csv = String::from("method,min,q1,median,q3,max,outliers,points\n");
    for b in &boxes {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            csv,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}",
            b.method,
            b.min,
            b.q1,
            b.median,
            b.q3,
            b.max,
            join(&b.outliers),
            join(&b.points)
        );
    }
    write_text(&box_dir.join("summary.csv"), &csv, &mut written)?;

    let conf_dir = out.join("confusion");
    for (id, recs) in &by_config {
        let labels: Vec<String> = recs[0].result.classes.iter().map(|s| s.code().to_string()).collect();
        let mut folds: BTreeMap<u32, Vec<&RunRecord>> = BTreeMap::new();
        for r in recs {
            folds.entry(r.fold.test_domain).or_default().push(r);
        }
        for (domain, rs) in folds {
            if let Some(m) = sum_confusions(rs.iter().map(|r| &r.result.confusion_at_best)) {
                let r = render_confusion(&m, &labels, &conf_dir, &format!("{id}_{domain}"))?;
                written.extend([r.svg, r.csv]);
            }
        }
    }

    Ok(ReportOutcome {
        configs: aggregates.len(),
        runs,
        written,
        failures,
    })
}
