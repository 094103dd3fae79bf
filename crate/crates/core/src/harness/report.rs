use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biasgen::Scenario;
use crate::cobum::CoBumScores;
use crate::eval::EvalReport;

use super::Result;

/// Role of a table row. Only unlearning methods compete for bold marks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Baseline,
    Gold,
    Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: Scenario,
    pub method: String,
    pub kind: RowKind,
    /// `None` when the method failed.
    pub report: Option<EvalReport>,
    /// Seconds shown in the Time column.
    pub time_seconds: f64,
    pub cobum: Option<CoBumScores>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Markdown => "md",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Better {
    Lower,
    Higher,
}

struct Column {
    name: &'static str,
    header: &'static str,
    better: Better,
    decimals: usize,
}

const COLUMNS: [Column; 8] = [
    Column { name: "FA", header: "FA (↓)", better: Better::Lower, decimals: 2 },
    Column { name: "RA", header: "RA (↑)", better: Better::Higher, decimals: 2 },
    Column { name: "TA", header: "TA (↑)", better: Better::Higher, decimals: 2 },
    Column { name: "DP%", header: "DP% (↑)", better: Better::Higher, decimals: 2 },
    Column { name: "EO%", header: "EO% (↑)", better: Better::Higher, decimals: 2 },
    Column { name: "MIA", header: "MIA (↓)", better: Better::Lower, decimals: 4 },
    Column { name: "Time", header: "Time (s) (↓)", better: Better::Lower, decimals: 3 },
    Column { name: "Co-BUM", header: "Co-BUM (↑)", better: Better::Higher, decimals: 4 },
];

/// One rendered table cell.
#[derive(Clone, Debug, PartialEq)]
enum Cell {
    Value(f64),
    /// Not applicable (the baseline and gold rows carry no Co-BUM).
    Dash,
    Failed,
}

fn round_to(v: f64, decimals: usize) -> f64 {
    format!("{v:.decimals$}").parse().unwrap_or(v)
}

fn cells(row: &ReportRow) -> Vec<Cell> {
    let Some(r) = &row.report else {
        return vec![Cell::Failed; COLUMNS.len()];
    };
    let pct = |p: Option<f64>| match p {
        Some(v) => Cell::Value(v),
        None => Cell::Dash,
    };
    let raw = [
        Cell::Value(100.0 * r.fa),
        Cell::Value(100.0 * r.ra),
        Cell::Value(100.0 * r.ta),
        pct(r.dp_drop_pct),
        pct(r.eo_drop_pct),
        Cell::Value(r.mia_auc),
        Cell::Value(row.time_seconds),
        match (&row.cobum, row.kind) {
            (Some(c), RowKind::Method) => Cell::Value(c.composite),
            _ => Cell::Dash,
        },
    ];
    raw.into_iter()
        .zip(&COLUMNS)
        .map(|(c, col)| match c {
            Cell::Value(v) => Cell::Value(round_to(v, col.decimals)),
            other => other,
        })
        .collect()
}

fn render(cell: &Cell, decimals: usize) -> String {
    match cell {
        Cell::Value(v) => format!("{v:.decimals$}"),
        Cell::Dash => "--".into(),
        Cell::Failed => "failed".into(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("scenario,method");
    for c in &COLUMNS {
        out.push(',');
        out.push_str(c.header);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&csv_field(&row.scenario.to_string()));
        out.push(',');
        out.push_str(&csv_field(&row.method));
        for (cell, col) in cells(row).iter().zip(&COLUMNS) {
            out.push(',');
            out.push_str(&render(cell, col.decimals));
        }
        out.push('\n');
    }
    out
}

fn to_json(rows: &[ReportRow]) -> Result<String> {
    let columns: Vec<serde_json::Value> = COLUMNS
        .iter()
        .map(|c| {
            serde_json::json!({
                "name": c.name,
                "header": c.header,
                "better": match c.better { Better::Lower => "lower", Better::Higher => "higher" },
            })
        })
        .collect();
    let data: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            let mut values = serde_json::Map::new();
            for (cell, col) in cells(row).iter().zip(&COLUMNS) {
                let v = match cell {
                    Cell::Value(v) => serde_json::json!(v),
                    Cell::Dash => serde_json::Value::Null,
                    Cell::Failed => serde_json::json!("failed"),
                };
                values.insert(col.name.to_string(), v);
            }
            serde_json::json!({
                "scenario": row.scenario,
                "method": row.method,
                "kind": row.kind,
                "values": values,
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "columns": columns, "rows": data }))?;
    s.push('\n');
    Ok(s)
}

/// Index sets of the best rows per column among finished unlearning
/// methods; ties are all marked.
fn best_rows(table: &[Vec<Cell>], rows: &[ReportRow]) -> Vec<Vec<usize>> {
    COLUMNS
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let candidates: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.kind == RowKind::Method)
                .filter_map(|(i, _)| match table[i][j] {
                    Cell::Value(v) if v.is_finite() => Some((i, v)),
                    _ => None,
                })
                .collect();
            let best = candidates.iter().map(|&(_, v)| v).reduce(|a, b| match col.better {
                Better::Lower => a.min(b),
                Better::Higher => a.max(b),
            });
            match best {
                Some(b) => candidates.iter().filter(|&&(_, v)| v == b).map(|&(i, _)| i).collect(),
                None => Vec::new(),
            }
        })
        .collect()
}

fn to_markdown(rows: &[ReportRow]) -> String {
    let table: Vec<Vec<Cell>> = rows.iter().map(cells).collect();
    let best = best_rows(&table, rows);
    let mut out = String::from("| Scenario | Method |");
    for c in &COLUMNS {
        let _ = write!(out, " {} |", c.header);
    }
    out.push_str("\n|---|---|");
    for _ in &COLUMNS {
        out.push_str("---:|");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "| {} | {} |", row.scenario, row.method);
        for (j, col) in COLUMNS.iter().enumerate() {
            let text = render(&table[i][j], col.decimals);
            if best[j].contains(&i) {
                let _ = write!(out, " **{text}** |");
            } else {
                let _ = write!(out, " {text} |");
            }
        }
        out.push('\n');
    }
    out
}

/// Renders the report table. Column order is FA, RA, TA, DP%, EO%, MIA,
/// Time, Co-BUM; accuracies are percentages, DP% and EO% are drops
/// relative to the baseline.
pub fn render_table(rows: &[ReportRow], format: Format) -> Result<String> {
    match format {
        Format::Csv => Ok(to_csv(rows)),
        Format::Json => to_json(rows),
        Format::Markdown => Ok(to_markdown(rows)),
    }
}

pub fn emit_table(rows: &[ReportRow], format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render_table(rows, format)?)?;
    Ok(())
}
