//! CSV panels and output files.
//!
//! Input panels have a header row, optionally a leading ISO-8601 date column
//! (header `date`, or values that parse as dates), and one numeric column per
//! variable. Lines starting with `#` are ignored. Every file written here
//! starts with a `#` metadata line: crate version, command line, seed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub use chrono::NaiveDate as Date;
use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CpcaError, Result};
use crate::matrix::DataMatrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What produced an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
}

impl Metadata {
    pub fn new(command: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            version: VERSION.to_string(),
            command: command.into(),
            seed,
        }
    }

    /// `# cpca <version> | command: <command> | seed: <seed>`
    pub fn header_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        let command = self.command.replace(['\n', '\r'], " ");
        format!("# cpca {} | command: {} | seed: {}", self.version, command, seed)
    }
}

/// A parsed input panel.
#[derive(Debug, Clone)]
pub struct Panel {
    pub data: DataMatrix,
    pub dates: Option<Vec<NaiveDate>>,
}

impl Panel {
    /// Reject dates that are not strictly increasing.
    pub fn check_date_order(&self) -> Result<()> {
        if let Some(dates) = &self.dates {
            for (i, w) in dates.windows(2).enumerate() {
                if w[1] <= w[0] {
                    return Err(CpcaError::InvalidArgument(format!(
                        "dates not in increasing order: {} on data row {} follows {}",
                        w[1],
                        i + 2,
                        w[0]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn read_panel_file(path: impl AsRef<Path>) -> Result<Panel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        CpcaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    read_panel(file)
}

pub fn read_panel<R: Read>(input: R) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let header_line = reader.position().line();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(CpcaError::Parse {
            line: header_line.max(1),
            message: "missing header row".into(),
        });
    }

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(CpcaError::Parse {
            line: header_line.max(1),
            message: "no data rows".into(),
        });
    }

    let first = header.get(0).unwrap_or("");
    let has_dates = first.eq_ignore_ascii_case("date") || records[0].1.get(0).and_then(parse_date).is_some();
    let skip = usize::from(has_dates);
    let ids: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    if ids.is_empty() {
        return Err(CpcaError::Parse {
            line: header_line.max(1),
            message: "no variable columns".into(),
        });
    }

    let p = ids.len();
    let mut values = Array2::<f64>::zeros((records.len(), p));
    let mut dates = Vec::with_capacity(if has_dates { records.len() } else { 0 });
    for (i, (line, rec)) in records.iter().enumerate() {
        if rec.len() != p + skip {
            return Err(CpcaError::Parse {
                line: *line,
                message: format!("expected {} fields, found {}", p + skip, rec.len()),
            });
        }
        if has_dates {
            let raw = rec.get(0).unwrap_or("");
            let d = parse_date(raw).ok_or_else(|| CpcaError::Parse {
                line: *line,
                message: format!("`{raw}` is not an ISO-8601 date"),
            })?;
            dates.push(d);
        }
        for (j, field) in rec.iter().skip(skip).enumerate() {
            let v: f64 = field.parse().map_err(|_| CpcaError::Parse {
                line: *line,
                message: format!("column `{}`: `{field}` is not a number", ids[j]),
            })?;
            if !v.is_finite() {
                return Err(CpcaError::Parse {
                    line: *line,
                    message: format!("column `{}`: non-finite value `{field}`", ids[j]),
                });
            }
            values[[i, j]] = v;
        }
    }
    Ok(Panel {
        data: DataMatrix::new(values, ids)?,
        dates: has_dates.then_some(dates),
    })
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| {
        CpcaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufWriter::new(file))
}

/// Write the metadata line followed by CSV produced by `body`.
pub fn write_with_metadata<W: Write>(
    mut out: W,
    meta: &Metadata,
    body: impl FnOnce(&mut csv::Writer<&mut W>) -> Result<()>,
) -> Result<()> {
    writeln!(out, "{}", meta.header_line())?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        body(&mut w)?;
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// A panel in the input schema (optionally with a date column).
pub fn write_panel<W: Write>(out: W, meta: &Metadata, data: &DataMatrix, dates: Option<&[NaiveDate]>) -> Result<()> {
    if let Some(d) = dates {
        if d.len() != data.n_rows() {
            return Err(CpcaError::Shape(format!("{} dates for {} rows", d.len(), data.n_rows())));
        }
    }
    write_with_metadata(out, meta, |w| {
        let mut header: Vec<String> = Vec::new();
        if dates.is_some() {
            header.push("date".into());
        }
        header.extend(data.column_ids().iter().cloned());
        w.write_record(&header)?;
        for (i, row) in data.values().rows().into_iter().enumerate() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(d) = dates {
                rec.push(d[i].format("%Y-%m-%d").to_string());
            }
            rec.extend(row.iter().map(|&v| fmt_value(v)));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn write_panel_file(path: impl AsRef<Path>, meta: &Metadata, data: &DataMatrix, dates: Option<&[NaiveDate]>) -> Result<()> {
    write_panel(create(path)?, meta, data, dates)
}

/// A `p × p` matrix with the variable names as header.
pub fn write_square<W: Write>(out: W, meta: &Metadata, ids: &[String], m: ArrayView2<'_, f64>) -> Result<()> {
    if m.nrows() != ids.len() || m.ncols() != ids.len() {
        return Err(CpcaError::Shape(format!("{:?} matrix for {} names", m.dim(), ids.len())));
    }
    write_with_metadata(out, meta, |w| {
        w.write_record(ids)?;
        for row in m.rows() {
            w.write_record(row.iter().map(|&v| fmt_value(v)))?;
        }
        Ok(())
    })
}

pub fn write_square_file(path: impl AsRef<Path>, meta: &Metadata, ids: &[String], m: ArrayView2<'_, f64>) -> Result<()> {
    write_square(create(path)?, meta, ids, m)
}

/// A JSON document wrapped as `{"metadata": …, <fields of value>}`.
pub fn write_json_file<T: Serialize>(path: impl AsRef<Path>, meta: &Metadata, value: &T) -> Result<()> {
    let mut doc = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut doc {
        map.insert("metadata".into(), serde_json::to_value(meta)?);
    }
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Consecutive weekdays starting at `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}
