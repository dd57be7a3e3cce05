//! CSV ingestion and emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mrl_gp::TimeSeries;

use crate::error::CliError;

/// Reads a series with a header naming at least the columns `t` and `y`.
/// Lines starting with `#` are skipped; rows must be strictly increasing in `t`.
pub fn read_series(path: &Path) -> Result<TimeSeries, CliError> {
    let name = path.display();
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {name}: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{name}: {e}")))?
        .clone();
    let column = |c: &str| {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| CliError::Input(format!("{name}: header has no '{c}' column")))
    };
    let (ti, yi) = (column("t")?, column("y")?);
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, c: &str| -> Result<f64, CliError> {
            let raw = record.get(i).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Input(format!("{name}:{line}: cannot parse {c} value '{raw}'"))),
            }
        };
        let (tv, yv) = (field(ti, "t")?, field(yi, "y")?);
        if let Some(&prev) = t.last() {
            if tv <= prev {
                return Err(CliError::Input(format!(
                    "{name}:{line}: t = {tv} does not increase on the previous row (t = {prev}); rows must be sorted by t"
                )));
            }
        }
        t.push(tv);
        y.push(yv);
    }
    if t.is_empty() {
        return Err(CliError::Input(format!("{name}: no data rows")));
    }
    Ok(TimeSeries::new(t, y)?)
}

/// Writes `# mrl-gp v1 <command>`, a header row, then one row per index.
pub fn write_table(path: &Path, command: &str, header: &[&str], columns: &[&[f64]]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# mrl-gp v1 {command}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`write_table`] with string cells.
pub fn write_rows(path: &Path, command: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# mrl-gp v1 {command}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
