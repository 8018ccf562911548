use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Axis, DatasetError, SensorRecording};
use crate::scalar::Scalar;

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a recording CSV: a header naming the axes, then one row per sample.
///
/// A column may end early (trailing empty or missing fields); the resulting
/// unequal lengths surface as [`DatasetError::AxisLengthMismatch`].
pub fn read_recording_csv<T: Scalar>(path: &Path) -> Result<Vec<(Axis, Vec<T>)>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let mut axes: Vec<Axis> = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let axis: Axis = h.parse().map_err(|_| parse_err(path, 1, format!("unknown column {h:?}")))?;
        if axes.contains(&axis) {
            return Err(parse_err(path, 1, format!("duplicate column {h:?}")));
        }
        axes.push(axis);
    }
    if axes.is_empty() {
        return Err(parse_err(path, 1, "no axis columns"));
    }
    let mut cols: Vec<Vec<T>> = vec![Vec::new(); axes.len()];
    let mut ended = vec![false; axes.len()];
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_err(path, line, e.to_string()));
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() > axes.len() {
            return Err(parse_err(path, line, format!("{} fields, header has {}", record.len(), axes.len())));
        }
        for c in 0..axes.len() {
            let field = record.get(c).unwrap_or("");
            if field.is_empty() {
                ended[c] = true;
                continue;
            }
            if ended[c] {
                return Err(parse_err(path, line, format!("value in column {} after it ended", axes[c])));
            }
            let v: T = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number {field:?}")))?;
            cols[c].push(v);
        }
    }
    if cols.iter().all(|c| c.is_empty()) {
        return Err(DatasetError::EmptyRecording(path.to_path_buf()));
    }
    let out: Vec<(Axis, Vec<T>)> = axes.into_iter().zip(cols).collect();
    if out.iter().any(|(_, v)| v.len() != out[0].1.len()) {
        return Err(DatasetError::AxisLengthMismatch(
            out.iter().map(|(a, v)| (*a, v.len())).collect(),
        ));
    }
    Ok(out)
}

/// Writes a recording in the format [`read_recording_csv`] reads. Values use
/// the shortest decimal form that parses back to the same bits.
pub fn write_recording_csv<T: Scalar>(path: &Path, rec: &SensorRecording<T>) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let names: Vec<&str> = rec.axes().iter().map(|(a, _)| a.name()).collect();
    let mut text = names.join(",");
    text.push('\n');
    for i in 0..rec.len() {
        for (c, (_, v)) in rec.axes().iter().enumerate() {
            if c > 0 {
                text.push(',');
            }
            text.push_str(&v[i].to_string());
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(|e| DatasetError::io(path, e))?;
    w.flush().map_err(|e| DatasetError::io(path, e))
}
