//! Result tables: one row per (attack, source, target, defense) cell with the
//! success rate, imperceptibility aggregates, and the denominator. Files are
//! written with fixed 4-decimal formatting so identical runs are identical
//! bytes; undefined rates (empty denominators) print as `nan` in CSV and
//! `null` in JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializes NaN/inf as JSON null and reads null back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack: String,
    pub source: String,
    pub target: String,
    pub defense: String,
    pub epsilon: f64,
    #[serde(with = "nan_as_null")]
    pub asr: f64,
    #[serde(with = "nan_as_null")]
    pub chamfer: f64,
    #[serde(with = "nan_as_null")]
    pub hausdorff: f64,
    #[serde(with = "nan_as_null")]
    pub knn_mean: f64,
    /// Clean-correct count on the source model (the ASR denominator).
    pub n_eval: usize,
}

/// The full evaluation matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub rows: Vec<ReportRow>,
}

impl ResultsRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const CSV_HEADER: &str =
    "attack,source,target,defense,epsilon,asr,chamfer,hausdorff,knn_mean,n_eval";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rounds to 4 decimals (NaN passes through), matching the printed precision.
pub fn round4(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e4).round() / 1e4
    } else {
        x
    }
}

fn fmt4(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "nan".into()
    }
}

fn check_row(row: &ReportRow) -> Result<()> {
    for (name, field) in [
        ("attack", &row.attack),
        ("source", &row.source),
        ("target", &row.target),
        ("defense", &row.defense),
    ] {
        if field.is_empty() || field.contains(',') || field.contains('\n') {
            return Err(Error::InvalidArgument(format!(
                "report: {name} column value {field:?} not CSV-safe"
            )));
        }
    }
    if row.asr.is_finite() && !(0.0..=100.0).contains(&row.asr) {
        return Err(Error::InvalidArgument(format!(
            "report: asr {} outside [0, 100]",
            row.asr
        )));
    }
    Ok(())
}

pub fn report_csv_string(record: &ResultsRecord) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &record.rows {
        check_row(row)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.attack,
            row.source,
            row.target,
            row.defense,
            fmt4(row.epsilon),
            fmt4(row.asr),
            fmt4(row.chamfer),
            fmt4(row.hausdorff),
            fmt4(row.knn_mean),
            row.n_eval
        ));
    }
    Ok(out)
}

/// JSON mirror of the record with every float at the CSV's 4-decimal
/// precision.
pub fn report_json_string(record: &ResultsRecord) -> Result<String> {
    let mut rounded = record.clone();
    for row in &mut rounded.rows {
        check_row(row)?;
        row.epsilon = round4(row.epsilon);
        row.asr = round4(row.asr);
        row.chamfer = round4(row.chamfer);
        row.hausdorff = round4(row.hausdorff);
        row.knn_mean = round4(row.knn_mean);
    }
    Ok(serde_json::to_string_pretty(&rounded)? + "\n")
}

pub fn write_report_csv(record: &ResultsRecord, path: &Path) -> Result<()> {
    write_text(path, &report_csv_string(record)?)
}

pub fn write_report_json(record: &ResultsRecord, path: &Path) -> Result<()> {
    write_text(path, &report_json_string(record)?)
}

fn parse_f64(cell: &str, line: usize) -> Result<f64> {
    if cell == "nan" {
        return Ok(f64::NAN);
    }
    cell.parse().map_err(|_| {
        Error::InvalidArgument(format!("report csv line {line}: bad float {cell:?}"))
    })
}

pub fn parse_report_csv_str(text: &str) -> Result<ResultsRecord> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "report csv: bad header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "report csv line {}: {} columns, expected 10",
                i + 2,
                cells.len()
            )));
        }
        rows.push(ReportRow {
            attack: cells[0].into(),
            source: cells[1].into(),
            target: cells[2].into(),
            defense: cells[3].into(),
            epsilon: parse_f64(cells[4], i + 2)?,
            asr: parse_f64(cells[5], i + 2)?,
            chamfer: parse_f64(cells[6], i + 2)?,
            hausdorff: parse_f64(cells[7], i + 2)?,
            knn_mean: parse_f64(cells[8], i + 2)?,
            n_eval: cells[9].parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "report csv line {}: bad count {:?}",
                    i + 2,
                    cells[9]
                ))
            })?,
        });
    }
    Ok(ResultsRecord { rows })
}

pub fn parse_report_csv(path: &Path) -> Result<ResultsRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report_csv_str(&text)
}

/// One dropout-sweep table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub rho: f64,
    #[serde(with = "nan_as_null")]
    pub white_box_asr: f64,
    #[serde(with = "nan_as_null")]
    pub transfer_asr: f64,
    pub n_eval: usize,
}

pub fn rho_csv_string(rows: &[RhoRow]) -> String {
    let mut out = String::from("rho,white_box_asr,transfer_asr,n_eval\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt4(r.rho),
            fmt4(r.white_box_asr),
            fmt4(r.transfer_asr),
            r.n_eval
        ));
    }
    out
}

pub fn write_rho_table(rows: &[RhoRow], csv_path: &Path, json_path: &Path) -> Result<()> {
    write_text(csv_path, &rho_csv_string(rows))?;
    let rounded: Vec<RhoRow> = rows
        .iter()
        .map(|r| RhoRow {
            rho: round4(r.rho),
            white_box_asr: round4(r.white_box_asr),
            transfer_asr: round4(r.transfer_asr),
            n_eval: r.n_eval,
        })
        .collect();
    write_text(json_path, &(serde_json::to_string_pretty(&rounded)? + "\n"))
}

/// Component-ablation table row, flattened from the attack module's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReportRow {
    pub components: String,
    #[serde(with = "nan_as_null")]
    pub white_box_asr: f64,
    #[serde(with = "nan_as_null")]
    pub transfer_asr: f64,
    pub n_eval: usize,
}

pub fn ablation_csv_string(rows: &[AblationReportRow]) -> String {
    let mut out = String::from("components,white_box_asr,transfer_asr,n_eval\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.components,
            fmt4(r.white_box_asr),
            fmt4(r.transfer_asr),
            r.n_eval
        ));
    }
    out
}

pub fn write_ablation_table(
    rows: &[AblationReportRow],
    csv_path: &Path,
    json_path: &Path,
) -> Result<()> {
    write_text(csv_path, &ablation_csv_string(rows))?;
    let rounded: Vec<AblationReportRow> = rows
        .iter()
        .map(|r| AblationReportRow {
            components: r.components.clone(),
            white_box_asr: round4(r.white_box_asr),
            transfer_asr: round4(r.transfer_asr),
            n_eval: r.n_eval,
        })
        .collect();
    write_text(json_path, &(serde_json::to_string_pretty(&rounded)? + "\n"))
}
