//! CSV artifacts. Floats are written in shortest round-trip form.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Writes a header and numeric rows.
pub fn write_csv<W: Write, R: AsRef<[f64]>>(out: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        let row = row.as_ref();
        if row.len() != header.len() {
            return Err(Error::Format(format!("row of {} fields under a {}-column header", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(x, value)` pairs from a two-column CSV with a header row.
pub fn read_xy_csv(input: impl Read) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if record.len() != 2 {
            return Err(Error::Parse(format!("row {}: expected 2 fields, got {}", line + 2, record.len())));
        }
        let field = |i: usize| {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: bad number {:?}", line + 2, &record[i])))
        };
        out.push((field(0)?, field(1)?));
    }
    Ok(out)
}
