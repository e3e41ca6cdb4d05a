use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, MANIFEST_FILE};
use crate::baselines::meets_threshold;
use crate::discorl::csv_err;
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const REFERENCES_FILE: &str = "references.csv";

/// One evaluated (method, task) pair written by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub task: String,
    pub eval_return: f64,
    pub reference: Option<f64>,
    pub explained_variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub task: String,
    pub reference: f64,
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_references(path: &Path, rows: &[ReferenceRow]) -> Result<()> {
    write_rows(path, rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Pass,
    Fail,
    NoRef,
}

impl CellStatus {
    fn symbol(self) -> &'static str {
        match self {
            CellStatus::Pass => "✓",
            CellStatus::Fail => "✗",
            CellStatus::NoRef => "no-ref",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub status: CellStatus,
    pub eval_return: f64,
    pub reference: Option<f64>,
    /// Run directory the cell was read from.
    pub run: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub cells: Vec<Option<Cell>>,
    pub explained_variance: Option<f64>,
}

/// Methods by tasks, in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub tasks: Vec<String>,
    pub rows: Vec<MethodRow>,
    /// `(run directory, results.csv hash)` of every contributing run.
    pub sources: Vec<(String, String)>,
}

fn position(list: &mut Vec<String>, key: &str) -> usize {
    list.iter().position(|k| k == key).unwrap_or_else(|| {
        list.push(key.to_string());
        list.len() - 1
    })
}

/// Aggregates the results of `runs`. Every directory needs a manifest;
/// references come from the row itself or any run's references file, and a
/// cell without one is marked `no-ref`.
pub fn build_table(runs: &[PathBuf]) -> Result<SuccessTable> {
    let mut references: BTreeMap<String, f64> = BTreeMap::new();
    let mut per_run = Vec::new();
    for dir in runs {
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(Error::Config(format!("{} has no {MANIFEST_FILE}", dir.display())));
        }
        let manifest = Manifest::read(dir)?;
        let refs = dir.join(REFERENCES_FILE);
        if refs.is_file() {
            for r in read_rows::<ReferenceRow>(&refs)? {
                references.entry(r.task).or_insert(r.reference);
            }
        }
        let results = dir.join(RESULTS_FILE);
        if results.is_file() {
            let hash = manifest.files.get(RESULTS_FILE).cloned().ok_or_else(|| {
                Error::Integrity(format!("{} is not listed in the manifest of {}", RESULTS_FILE, dir.display()))
            })?;
            per_run.push((dir.display().to_string(), hash, read_rows::<ResultRow>(&results)?));
        }
    }
    let refs: Vec<ReferenceRow> = references.into_iter().map(|(task, reference)| ReferenceRow { task, reference }).collect();
    Ok(table_from_rows(per_run, &refs))
}

/// Table over `(run, results hash, rows)` triples, filling missing row
/// references from `references` (first entry per task wins).
pub fn table_from_rows(per_run: Vec<(String, String, Vec<ResultRow>)>, references: &[ReferenceRow]) -> SuccessTable {
    let mut lookup: BTreeMap<&str, f64> = BTreeMap::new();
    for r in references {
        lookup.entry(r.task.as_str()).or_insert(r.reference);
    }
    let mut table = SuccessTable::default();
    let mut methods: Vec<String> = Vec::new();
    for (run, hash, rows) in per_run {
        table.sources.push((run.clone(), hash));
        for r in rows {
            let ti = position(&mut table.tasks, &r.task);
            let mi = position(&mut methods, &r.method);
            if mi == table.rows.len() {
                table.rows.push(MethodRow { method: r.method.clone(), cells: Vec::new(), explained_variance: None });
            }
            let row = &mut table.rows[mi];
            if row.cells.len() <= ti {
                row.cells.resize(ti + 1, None);
            }
            let reference = r.reference.or_else(|| lookup.get(r.task.as_str()).copied());
            let status = match reference {
                Some(rf) if meets_threshold(r.eval_return, rf) => CellStatus::Pass,
                Some(_) => CellStatus::Fail,
                None => CellStatus::NoRef,
            };
            row.cells[ti] = Some(Cell { status, eval_return: r.eval_return, reference, run: run.clone() });
            if r.explained_variance.is_some() {
                row.explained_variance = r.explained_variance;
            }
        }
    }
    let width = table.tasks.len();
    for row in &mut table.rows {
        row.cells.resize(width, None);
    }
    table
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `method,task,status,eval_return,reference,run`.
pub fn write_success_table(path: &Path, table: &SuccessTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["method", "task", "status", "eval_return", "reference", "run"]).map_err(csv_err)?;
    for row in &table.rows {
        for (task, cell) in table.tasks.iter().zip(&row.cells) {
            if let Some(c) = cell {
                let status = serde_json::to_value(c.status).expect("serialisable");
                w.write_record([
                    row.method.as_str(),
                    task,
                    status.as_str().expect("string"),
                    &c.eval_return.to_string(),
                    &num(c.reference),
                    &c.run,
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Markdown rendering: a pass/fail matrix, the explained-variance column
/// and the returns behind every cell.
pub fn render_markdown(table: &SuccessTable) -> String {
    let mut s = String::from("# Success table\n\n");
    if table.rows.is_empty() {
        s.push_str("No results.\n");
        return s;
    }
    let _ = write!(s, "| method |");
    for t in &table.tasks {
        let _ = write!(s, " {t} |");
    }
    s.push_str(" explained variance |\n|---|");
    for _ in &table.tasks {
        s.push_str("---|");
    }
    s.push_str("---|\n");
    for row in &table.rows {
        let _ = write!(s, "| {} |", row.method);
        for c in &row.cells {
            let _ = write!(s, " {} |", c.as_ref().map_or("", |c| c.status.symbol()));
        }
        let ev = row.explained_variance.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let _ = writeln!(s, " {ev} |");
    }
    s.push_str("\nA cell passes when the evaluation return is at least the reference minus 10% of its magnitude.\n");
    s.push_str("\n## Returns\n\n| method | task | eval return | reference | run |\n|---|---|---|---|---|\n");
    for row in &table.rows {
        for (task, cell) in table.tasks.iter().zip(&row.cells) {
            if let Some(c) = cell {
                let rf = c.reference.map_or_else(|| "no-ref".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(s, "| {} | {task} | {:.4} | {rf} | {} |", row.method, c.eval_return, c.run);
            }
        }
    }
    s.push_str("\n## Sources\n\n");
    for (run, hash) in &table.sources {
        let _ = writeln!(s, "- `{run}/{RESULTS_FILE}` blob {hash}");
    }
    s
}
