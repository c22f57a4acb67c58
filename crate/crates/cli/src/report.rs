//! CSV report rows, the summary table, and the side-by-side join of two runs.
//!
//! `report.csv` columns, in order: `model, attack, epsilon, examples, accuracy`.
//! The first row is the natural accuracy (`attack = natural`, `epsilon = 0`), then one
//! row per configured attack in suite order, then `worst_case` holding the
//! per-example robust accuracy over the whole suite. Reals use six decimals.

use std::path::Path;

use adt_core::attacks::ConfiguredAttack;
use adt_core::eval::EvalReport;

use crate::error::CliError;

pub const REPORT_COLUMNS: [&str; 5] = ["model", "attack", "epsilon", "examples", "accuracy"];

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub attack: String,
    pub epsilon: String,
    pub examples: String,
    pub accuracy: String,
}

impl EvalRow {
    pub fn from_report(
        model: &str,
        report: &EvalReport,
        suite: &[ConfiguredAttack],
    ) -> Vec<EvalRow> {
        let n = report.worst_case.len().to_string();
        let row = |attack: &str, eps: f64, acc: f64| EvalRow {
            model: model.to_string(),
            attack: attack.to_string(),
            epsilon: fmt6(eps),
            examples: n.clone(),
            accuracy: fmt6(acc),
        };
        let mut rows = vec![row("natural", 0.0, report.natural_accuracy)];
        for (o, a) in report.attacks.iter().zip(suite) {
            rows.push(row(&o.attack, a.threat.epsilon, o.accuracy));
        }
        let worst_eps = suite.iter().map(|a| a.threat.epsilon).fold(0.0, f64::max);
        rows.push(row("worst_case", worst_eps, report.robust_accuracy));
        rows
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            self.attack.clone(),
            self.epsilon.clone(),
            self.examples.clone(),
            self.accuracy.clone(),
        ]
    }

    pub fn to_csv(rows: &[EvalRow]) -> Result<Vec<u8>, CliError> {
        write_csv(
            &REPORT_COLUMNS,
            &rows.iter().map(EvalRow::fields).collect::<Vec<_>>(),
        )
    }

    /// Reads a `report.csv`, checking the header.
    pub fn read(path: &Path) -> Result<Vec<EvalRow>, CliError> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != REPORT_COLUMNS {
            return Err(CliError::Io(format!(
                "{}: unexpected columns {header:?}",
                path.display()
            )));
        }
        r.records()
            .map(|rec| {
                let rec = rec?;
                Ok(EvalRow {
                    model: rec[0].to_string(),
                    attack: rec[1].to_string(),
                    epsilon: rec[2].to_string(),
                    examples: rec[3].to_string(),
                    accuracy: rec[4].to_string(),
                })
            })
            .collect()
    }
}

/// Fixed-width text table of one run's report rows.
pub struct SummaryTable {
    title: String,
    rows: Vec<[String; 3]>,
    notes: Vec<String>,
}

impl SummaryTable {
    pub fn new(model: &str, rows: &[EvalRow], examples: usize) -> Self {
        Self {
            title: format!("model {model} on {examples} test examples"),
            rows: rows
                .iter()
                .map(|r| [r.attack.clone(), r.epsilon.clone(), r.accuracy.clone()])
                .collect(),
            notes: Vec::new(),
        }
    }

    pub fn note(&mut self, line: String) {
        self.notes.push(line);
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}\n", self.title);
        out.push_str(&table(&["attack", "epsilon", "accuracy"], &self.rows));
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}

fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// One attack row of the two-run comparison; `None` where a run lacks the attack.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinedRow {
    pub attack: String,
    pub a: Option<EvalRow>,
    pub b: Option<EvalRow>,
}

/// Joins two reports on the attack name, keeping the first run's order and appending
/// attacks only the second run has.
pub fn join(a: &[EvalRow], b: &[EvalRow]) -> Vec<JoinedRow> {
    let mut out: Vec<JoinedRow> = a
        .iter()
        .map(|r| JoinedRow {
            attack: r.attack.clone(),
            a: Some(r.clone()),
            b: b.iter().find(|s| s.attack == r.attack).cloned(),
        })
        .collect();
    for r in b {
        if !a.iter().any(|s| s.attack == r.attack) {
            out.push(JoinedRow {
                attack: r.attack.clone(),
                a: None,
                b: Some(r.clone()),
            });
        }
    }
    out
}

pub const COMPARISON_COLUMNS: [&str; 6] = [
    "attack",
    "epsilon",
    "a_model",
    "a_accuracy",
    "b_model",
    "b_accuracy",
];

fn cells(j: &JoinedRow) -> [String; 6] {
    let pick = |r: &Option<EvalRow>, f: fn(&EvalRow) -> &String| {
        r.as_ref().map(|r| f(r).clone()).unwrap_or_default()
    };
    let eps =
        j.a.as_ref()
            .or(j.b.as_ref())
            .map(|r| r.epsilon.clone())
            .unwrap_or_default();
    [
        j.attack.clone(),
        eps,
        pick(&j.a, |r| &r.model),
        pick(&j.a, |r| &r.accuracy),
        pick(&j.b, |r| &r.model),
        pick(&j.b, |r| &r.accuracy),
    ]
}

pub fn comparison_csv(rows: &[JoinedRow]) -> Result<Vec<u8>, CliError> {
    write_csv(
        &COMPARISON_COLUMNS,
        &rows.iter().map(|j| cells(j).to_vec()).collect::<Vec<_>>(),
    )
}

pub fn comparison_table(label_a: &str, label_b: &str, rows: &[JoinedRow]) -> String {
    let body: Vec<[String; 6]> = rows.iter().map(cells).collect();
    format!(
        "a = {label_a}\nb = {label_b}\n{}",
        table(&COMPARISON_COLUMNS, &body)
    )
}

/// Reads `report.csv` from two run directories and joins them.
pub fn compare_runs(run_a: &Path, run_b: &Path) -> Result<Vec<JoinedRow>, CliError> {
    let a = EvalRow::read(&run_a.join("report.csv"))?;
    let b = EvalRow::read(&run_b.join("report.csv"))?;
    Ok(join(&a, &b))
}
