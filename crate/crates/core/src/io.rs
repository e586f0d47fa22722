//! Dataset CSV files: header `x1,...,xm,label`, one sample per row.
//!
//! Floats are written with 17 significant digits so a write/read cycle is
//! bit-exact.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::datagen::{Label, LabeledDataset};
use crate::{Error, Result};

/// Round-trip decimal form of an `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => Error::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

pub fn write_dataset<W: Write>(out: W, data: &LabeledDataset) -> std::result::Result<(), csv::Error> {
    let m = data.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(m + 1);
    for (row, label) in data.samples.rows().into_iter().zip(&data.labels) {
        rec.clear();
        rec.extend(row.iter().map(|&v| format_f64(v)));
        rec.push(label.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset(file, data).map_err(|e| csv_err(path, e))
}

/// Parses a dataset. `source` names the input in error messages.
pub fn read_dataset<R: Read>(input: R, source: &Path) -> Result<LabeledDataset> {
    let parse = |line: u64, msg: String| Error::Parse {
        path: source.display().to_string(),
        line,
        msg,
    };
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| csv_err(source, e))?.clone();
    let cols = header.len();
    if cols < 1 || &header[cols - 1] != "label" {
        return Err(parse(1, "last column must be `label`".into()));
    }
    let m = cols - 1;
    for (i, name) in header.iter().take(m).enumerate() {
        if name != format!("x{}", i + 1) {
            return Err(parse(1, format!("expected column `x{}`, found `{name}`", i + 1)));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (i, field) in rec.iter().take(m).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse(line, format!("column x{}: `{field}` is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(parse(line, format!("column x{}: non-finite value", i + 1)));
            }
            values.push(v);
        }
        labels.push(rec[m].trim().parse::<Label>().map_err(|msg| parse(line, msg))?);
    }
    let n = labels.len();
    let samples = Array2::from_shape_vec((n, m), values).expect("row lengths checked by csv reader");
    LabeledDataset::new(samples, labels)
}

pub fn read_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset(file, path)
}
