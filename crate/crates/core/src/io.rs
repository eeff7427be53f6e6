//! Telemetry CSV ingestion and the CSV writers used by the CLI.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::RollingEntry;
use crate::preprocess::TelemetryRecord;

pub const TELEMETRY_COLUMNS: [&str; 5] = ["timestamp", "g_poa", "t_module", "v_dc", "i_dc"];
pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "window_start",
    "window_end",
    "i_ph_ref",
    "i_0_ref",
    "r_s",
    "r_sh_ref",
    "n_diode",
    "final_loss",
    "iterations",
    "converged",
    "n_points",
];
pub const FORECAST_COLUMNS: [&str; 4] = ["timestamp", "model", "p_pred_w", "p_meas_w"];

/// Rows that fail to parse may make up less than this fraction of a file.
pub const MAX_BAD_ROW_FRACTION: f64 = 0.01;

/// Translates foreign column headers onto the native telemetry schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    /// Native column name to source header.
    pub columns: BTreeMap<String, String>,
    /// Optional multiplier per native column, applied after parsing.
    #[serde(default)]
    pub scale: BTreeMap<String, f64>,
    /// chrono format for naive timestamps, read as UTC.
    #[serde(default)]
    pub timestamp_format: Option<String>,
}

impl ColumnMapping {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let m: ColumnMapping =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("mapping {}: {e}", path.display())))?;
        for native in m.columns.keys().chain(m.scale.keys()) {
            if !TELEMETRY_COLUMNS.contains(&native.as_str()) {
                return Err(Error::Config(format!("mapping names unknown column '{native}'")));
            }
        }
        Ok(m)
    }

    fn source<'a>(&'a self, native: &'a str) -> &'a str {
        self.columns.get(native).map_or(native, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based line in the input file.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub records: Vec<TelemetryRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub rows_read: usize,
}

pub fn parse_timestamp(s: &str, format: Option<&str>) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Some(fmt) = format {
        return NaiveDateTime::parse_from_str(s, fmt).map(|t| t.and_utc()).map_err(|e| format!("timestamp '{s}': {e}"));
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unparseable timestamp '{s}'"))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_telemetry(path: &Path, mapping: Option<&ColumnMapping>) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_telemetry_from(file, mapping)
}

/// Parses telemetry CSV. Bad rows are reported with their line number and
/// skipped as long as they stay under [`MAX_BAD_ROW_FRACTION`] of all rows.
/// Records come back sorted by timestamp; repeated timestamps keep the first row.
pub fn read_telemetry_from<R: Read>(input: R, mapping: Option<&ColumnMapping>) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Data(format!("header: {e}")))?.clone();
    let mut idx = [0usize; 5];
    for (k, native) in TELEMETRY_COLUMNS.iter().enumerate() {
        let wanted = mapping.map_or(*native, |m| m.source(native));
        idx[k] = headers
            .iter()
            .position(|h| h == wanted)
            .ok_or_else(|| Error::Data(format!("missing column '{wanted}'")))?;
    }
    let scale = |k: usize| mapping.and_then(|m| m.scale.get(TELEMETRY_COLUMNS[k]).copied()).unwrap_or(1.0);
    let ts_format = mapping.and_then(|m| m.timestamp_format.as_deref());

    let mut rows: Vec<(u64, TelemetryRecord)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut rows_read = 0usize;
    for (n, row) in rdr.records().enumerate() {
        rows_read += 1;
        // Header is line 1.
        let fallback_line = n as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(fallback_line, |p| p.line());
                diagnostics.push(Diagnostic { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(fallback_line, |p| p.line());
        let parsed = (|| -> std::result::Result<TelemetryRecord, String> {
            let field = |k: usize| row.get(idx[k]).ok_or_else(|| format!("missing field {}", TELEMETRY_COLUMNS[k]));
            let num = |k: usize| -> std::result::Result<f64, String> {
                let s = field(k)?;
                s.parse::<f64>().map(|v| v * scale(k)).map_err(|_| format!("{}: cannot parse '{s}'", TELEMETRY_COLUMNS[k]))
            };
            let rec = TelemetryRecord {
                timestamp: parse_timestamp(field(0)?, ts_format)?,
                g_poa: num(1)?,
                t_module: num(2)?,
                v_dc: num(3)?,
                i_dc: num(4)?,
            };
            rec.validate()?;
            Ok(rec)
        })();
        match parsed {
            Ok(r) => rows.push((line, r)),
            Err(message) => diagnostics.push(Diagnostic { line, message }),
        }
    }
    rows.sort_by_key(|(_, r)| r.timestamp);
    let mut records: Vec<TelemetryRecord> = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if records.last().is_some_and(|p| p.timestamp == r.timestamp) {
            diagnostics.push(Diagnostic { line, message: format!("duplicate timestamp {}", format_timestamp(&r.timestamp)) });
            continue;
        }
        records.push(r);
    }
    diagnostics.sort_by_key(|d| d.line);
    if rows_read == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    if diagnostics.len() as f64 >= MAX_BAD_ROW_FRACTION * rows_read as f64 {
        let first: Vec<String> = diagnostics.iter().take(5).map(|d| format!("line {}: {}", d.line, d.message)).collect();
        return Err(Error::Data(format!(
            "{} of {rows_read} rows rejected (limit {:.0}%): {}",
            diagnostics.len(),
            MAX_BAD_ROW_FRACTION * 100.0,
            first.join("; ")
        )));
    }
    Ok(IngestReport { records, diagnostics, rows_read })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_telemetry<W: Write>(out: W, records: &[TelemetryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TELEMETRY_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            format_timestamp(&r.timestamp),
            format_float(r.g_poa),
            format_float(r.t_module),
            format_float(r.v_dc),
            format_float(r.i_dc),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Successful windows only; failed windows are reported elsewhere.
pub fn write_trajectory<W: Write>(out: W, entries: &[RollingEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS).map_err(csv_err)?;
    for e in entries {
        let Ok(r) = &e.outcome else { continue };
        let p = r.params;
        w.write_record([
            format_timestamp(&e.window_start),
            format_timestamp(&e.window_end),
            format_float(p.i_ph_ref),
            format_float(p.i_0_ref),
            format_float(p.r_s),
            format_float(p.r_sh_ref),
            format_float(p.n_diode),
            format_float(r.final_loss),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.n_points.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub timestamp: DateTime<Utc>,
    pub model: String,
    pub p_pred_w: f64,
    pub p_meas_w: f64,
}

pub fn write_forecasts<W: Write>(out: W, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORECAST_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([format_timestamp(&r.timestamp), r.model.clone(), format_float(r.p_pred_w), format_float(r.p_meas_w)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
