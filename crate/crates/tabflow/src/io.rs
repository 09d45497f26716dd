//! CSV tables, schema files and small output helpers.

use std::fs;
use std::path::Path;

use serde::Serialize;
use tabflow_core::data::{RawTable, SchemaDecl};

use crate::error::{CliError, Result};

/// Reads a comma-separated file with a header row. Every row must have as
/// many fields as the header.
pub fn read_csv(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_path(path)
        .map_err(|e| CliError::input(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, format!("row {r}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::input(
                path,
                format!(
                    "row {r} (line {}) has {} fields, expected {}",
                    record.position().map_or(0, |p| p.line()),
                    record.len(),
                    header.len()
                ),
            ));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    RawTable::new(header, rows).map_err(|e| CliError::input(path, e))
}

/// Reads a CSV and checks it carries every declared column.
pub fn load_csv(path: &Path, decl: &SchemaDecl) -> Result<RawTable> {
    let table = read_csv(path)?;
    table.check_against(decl).map_err(|e| CliError::input(path, e))?;
    Ok(table)
}

/// Reads a `column: role` schema declaration.
pub fn load_schema(path: &Path) -> Result<SchemaDecl> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    SchemaDecl::parse(&text).map_err(|e| CliError::input(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Writes `rows` under `header` as CSV.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut out = csv::Writer::from_writer(Vec::new());
    let failed = |e: csv::Error| CliError::output(path, std::io::Error::other(e));
    out.write_record(header).map_err(failed)?;
    for row in rows {
        out.write_record(row.into_iter().collect::<Vec<_>>()).map_err(failed)?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| CliError::output(path, std::io::Error::other(e.to_string())))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}
