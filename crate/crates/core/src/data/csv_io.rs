//! CSV tables: a header of component names followed by `Tg`, one
//! composition per row, fractions as decimals and Tg in °C. An empty Tg cell
//! means the label is missing. Candidate tables carry the component columns
//! only.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{ComponentSchema, Composition, RawSample, TG_COLUMN};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn header(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    let h = reader.headers().map_err(|e| Error::Parse {
        path: path.into(),
        row: 0,
        msg: e.to_string(),
    })?;
    Ok(h.iter().map(str::to_owned).collect())
}

fn parse_cell(cell: &str, path: &Path, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        path: path.into(),
        row,
        msg: format!("column `{column}`: `{cell}` is not a number"),
    })
}

/// Reads a data table, checking its header against `schema`.
pub fn load_dataset(path: &Path, schema: &ComponentSchema) -> Result<Vec<RawSample>> {
    let (found, samples) = load_table(path)?;
    if &found != schema {
        return Err(Error::Data(format!(
            "{}: columns {:?} do not match the expected components {:?}",
            path.display(),
            found.names(),
            schema.names()
        )));
    }
    Ok(samples)
}

/// Reads a data table, taking the schema from its header.
pub fn load_table(path: &Path) -> Result<(ComponentSchema, Vec<RawSample>)> {
    let mut reader = open(path)?;
    let names = header(&mut reader, path)?;
    if names.last().map(String::as_str) != Some(TG_COLUMN) {
        return Err(Error::Parse {
            path: path.into(),
            row: 0,
            msg: format!("last header column must be `{TG_COLUMN}`"),
        });
    }
    let schema = ComponentSchema::new(names[..names.len() - 1].iter().cloned())?;
    let n = schema.n();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            row,
            msg: e.to_string(),
        })?;
        if record.len() != n + 1 {
            return Err(Error::Parse {
                path: path.into(),
                row,
                msg: format!("expected {} columns, found {}", n + 1, record.len()),
            });
        }
        let fractions = (0..n)
            .map(|c| parse_cell(&record[c], path, row, &schema.names()[c]))
            .collect::<Result<Vec<_>>>()?;
        let tg = match &record[n] {
            "" => None,
            cell => Some(parse_cell(cell, path, row, TG_COLUMN)?),
        };
        out.push(RawSample { fractions, tg });
    }
    Ok((schema, out))
}

/// Reads a candidate table. The header must list the schema's components,
/// optionally followed by a `Tg` column, which is ignored.
pub fn load_compositions(path: &Path, schema: &ComponentSchema) -> Result<Vec<Composition>> {
    let mut reader = open(path)?;
    let names = header(&mut reader, path)?;
    let n = schema.n();
    let cols = match names.last().map(String::as_str) {
        Some(TG_COLUMN) => names.len() - 1,
        _ => names.len(),
    };
    if names[..cols] != *schema.names() {
        return Err(Error::Data(format!(
            "{}: columns {:?} do not match the model's components {:?}",
            path.display(),
            &names[..cols],
            schema.names()
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            row,
            msg: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                path: path.into(),
                row,
                msg: format!("expected {} columns, found {}", names.len(), record.len()),
            });
        }
        out.push(
            (0..n)
                .map(|c| parse_cell(&record[c], path, row, &schema.names()[c]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_dataset(path: &Path, schema: &ComponentSchema, samples: &[RawSample]) -> Result<()> {
    write_atomic(path, |w: &mut dyn Write| {
        let mut wr = csv::Writer::from_writer(w);
        let mut head: Vec<&str> = schema.names().iter().map(String::as_str).collect();
        head.push(TG_COLUMN);
        wr.write_record(&head).map_err(|e| csv_err(path, e))?;
        for s in samples {
            let mut rec: Vec<String> = s.fractions.iter().map(f64::to_string).collect();
            rec.push(s.tg.map(|t| t.to_string()).unwrap_or_default());
            wr.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        wr.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn write_compositions(path: &Path, schema: &ComponentSchema, rows: &[Composition]) -> Result<()> {
    write_atomic(path, |w: &mut dyn Write| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(schema.names()).map_err(|e| csv_err(path, e))?;
        for r in rows {
            wr.write_record(r.iter().map(f64::to_string))
                .map_err(|e| csv_err(path, e))?;
        }
        wr.flush().map_err(|e| Error::io(path, e))
    })
}
