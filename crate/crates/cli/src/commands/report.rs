use std::io::Write;
use std::path::Path;

use fusenet::metrics::CSV_HEADER;
use fusenet::{Error, Result};

use super::{csv_error, say, write_file};
use crate::args::ReportArgs;

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const RADAR_CSV: &str = "radar.csv";

/// One model's row, cells kept exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub model: String,
    pub cells: Vec<String>,
}

/// Reads rows from a metrics CSV whose header must equal the report header.
pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Usage(format!(
            "{}: header `{}` does not match `{}`",
            path.display(),
            header.join(","),
            CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Usage(format!("{} row {}: {e}", path.display(), i + 1)))?;
        let cells: Vec<String> = record.iter().skip(1).map(str::to_string).collect();
        for (cell, column) in cells.iter().zip(&CSV_HEADER[1..]) {
            if !cell.is_empty() && cell.parse::<f64>().is_err() {
                return Err(Error::Usage(format!(
                    "{} row {}: {column} value {cell:?} is not a number",
                    path.display(),
                    i + 1
                )));
            }
        }
        rows.push(Row {
            model: record[0].to_string(),
            cells,
        });
    }
    Ok(rows)
}

/// File-name fragment for a metric column, e.g. `F-measure` to `f-measure`.
pub fn metric_slug(column: &str) -> String {
    column.to_ascii_lowercase()
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Data(format!("csv output: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv output: {e}")))
}

pub fn run(args: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        rows.extend(read_rows(path)?);
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| std::iter::once(r.model.clone()).chain(r.cells.iter().cloned()).collect())
        .collect();
    write_file(&args.out.join(COMPARISON_CSV), to_csv(&CSV_HEADER, &table)?)?;

    // Empty cells (metrics a source did not report) are left out of chart data.
    let mut radar = Vec::new();
    for r in &rows {
        for (column, cell) in CSV_HEADER[1..].iter().zip(&r.cells) {
            if !cell.is_empty() {
                radar.push(vec![r.model.clone(), column.to_string(), cell.clone()]);
            }
        }
    }
    write_file(&args.out.join(RADAR_CSV), to_csv(&["series", "axis", "value"], &radar)?)?;

    for (k, column) in CSV_HEADER[1..].iter().enumerate() {
        let bars: Vec<Vec<String>> = rows
            .iter()
            .filter(|r| !r.cells[k].is_empty())
            .map(|r| vec![r.model.clone(), r.cells[k].clone()])
            .collect();
        let path = args.out.join(format!("bar_{}.csv", metric_slug(column)));
        write_file(&path, to_csv(&["model", "value"], &bars)?)?;
    }
    say(stdout, &format!("{} rows merged into {}", rows.len(), args.out.display()))
}
