use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use super::{DataError, Dataset, Observation};

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// `left,right`; `right` may be `inf` or empty for right censoring.
    Csv,
    /// `time,status` with status 1 for an event and 0 for right censoring.
    SurvivalCsv,
}

impl FromStr for InputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "survival-csv" => Ok(Self::SurvivalCsv),
            other => Err(format!("unknown format `{other}` (expected csv or survival-csv)")),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: InputFormat) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    parse_dataset(file, format)
}

/// Parses either layout from a reader. A header line is optional.
pub fn parse_dataset<R: Read>(reader: R, format: InputFormat) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut observations = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if idx == 0 && is_header(&record, format) {
            continue;
        }
        if record.len() != 2 {
            return Err(DataError::MalformedRow {
                row,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let obs = match format {
            InputFormat::Csv => {
                let left = parse_number(&record[0], row)?;
                let right = if record[1].is_empty() || record[1].eq_ignore_ascii_case("inf") {
                    f64::INFINITY
                } else {
                    parse_number(&record[1], row)?
                };
                Observation::new(left, right).map_err(|e| e.at_row(row))?
            }
            InputFormat::SurvivalCsv => {
                let time = parse_number(&record[0], row)?;
                match record[1].trim() {
                    "1" => Observation::exact(time),
                    "0" => Observation::right_censored(time),
                    other => {
                        return Err(DataError::MalformedRow {
                            row,
                            reason: format!("status must be 0 or 1, found `{other}`"),
                        })
                    }
                }
                .map_err(|e| e.at_row(row))?
            }
        };
        observations.push(obs);
    }
    Dataset::new(observations)
}

fn is_header(record: &csv::StringRecord, format: InputFormat) -> bool {
    let expected: [&str; 2] = match format {
        InputFormat::Csv => ["left", "right"],
        InputFormat::SurvivalCsv => ["time", "status"],
    };
    record.len() == 2
        && record
            .iter()
            .zip(expected)
            .all(|(got, want)| got.eq_ignore_ascii_case(want))
}

fn parse_number(field: &str, row: usize) -> Result<f64, DataError> {
    let v: f64 = field.parse().map_err(|_| DataError::MalformedRow {
        row,
        reason: format!("`{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFiniteLeft { row });
    }
    Ok(v)
}
