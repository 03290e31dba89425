//! Daily time-series model, CSV ingestion and windowing.
//!
//! Dates are carried as proleptic Gregorian ordinals (`0001-01-01` is day 1)
//! so that day arithmetic is exact; ISO-8601 strings only appear at the I/O
//! boundary.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Calendar day as a proleptic Gregorian ordinal.
pub type Ordinal = i64;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("invalid date {0:?}")]
    Date(String),
    #[error("data error at line {line}: {msg}")]
    Data { line: u64, msg: String },
    #[error("gap of {missing} day(s) between {after} and {before}")]
    Gap {
        after: String,
        before: String,
        missing: i64,
    },
    #[error("window of length {length} ending at index {end_index} does not fit a series of {len} points")]
    Range {
        end_index: usize,
        length: usize,
        len: usize,
    },
    #[error("series is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How missing days are handled on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Any missing day is an error.
    #[default]
    Reject,
    /// Missing days repeat the last observed value.
    ForwardFill,
    /// Missing days are linearly interpolated between the neighbours.
    LinearInterp,
}

impl FromStr for GapPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(Self::Reject),
            "forward_fill" | "forward-fill" => Ok(Self::ForwardFill),
            "linear_interp" | "linear-interp" => Ok(Self::LinearInterp),
            other => Err(format!(
                "unknown gap policy {other:?} (expected reject, forward_fill or linear_interp)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub date: Ordinal,
    pub value: f64,
}

/// Uniform daily series: dates strictly consecutive, values finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    points: Vec<SamplePoint>,
}

impl TimeSeries {
    pub fn new(points: Vec<SamplePoint>) -> Result<Self, SeriesError> {
        for (i, p) in points.iter().enumerate() {
            check_value(p.value, i as u64 + 1)?;
            if i > 0 && p.date != points[i - 1].date + 1 {
                return Err(SeriesError::Data {
                    line: i as u64 + 1,
                    msg: format!(
                        "dates {} and {} are not consecutive days",
                        from_ordinal(points[i - 1].date),
                        from_ordinal(p.date)
                    ),
                });
            }
        }
        Ok(Self { points })
    }

    /// Builds a series of consecutive days starting at `start`.
    pub fn from_values(start: Ordinal, values: &[f64]) -> Result<Self, SeriesError> {
        Self::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &value)| SamplePoint {
                    date: start + i as i64,
                    value,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn dates(&self) -> Vec<Ordinal> {
        self.points.iter().map(|p| p.date).collect()
    }

    pub fn first_date(&self) -> Option<Ordinal> {
        self.points.first().map(|p| p.date)
    }

    /// Index of `date`, if the series covers it.
    pub fn index_of(&self, date: Ordinal) -> Option<usize> {
        let first = self.first_date()?;
        let idx = usize::try_from(date - first).ok()?;
        (idx < self.points.len()).then_some(idx)
    }

    /// The `length` points ending at (and including) `end_index`.
    pub fn window(&self, end_index: usize, length: usize) -> Result<TimeSeries, SeriesError> {
        Ok(TimeSeries {
            points: self.window_slice(end_index, length)?.to_vec(),
        })
    }

    pub fn window_slice(&self, end_index: usize, length: usize) -> Result<&[SamplePoint], SeriesError> {
        if length == 0 || end_index >= self.points.len() || length > end_index + 1 {
            return Err(SeriesError::Range {
                end_index,
                length,
                len: self.points.len(),
            });
        }
        Ok(&self.points[end_index + 1 - length..=end_index])
    }

    /// Series truncated to its first `len` points.
    pub fn prefix(&self, len: usize) -> TimeSeries {
        TimeSeries {
            points: self.points[..len.min(self.points.len())].to_vec(),
        }
    }
}

fn check_value(value: f64, line: u64) -> Result<(), SeriesError> {
    if !value.is_finite() {
        return Err(SeriesError::Data {
            line,
            msg: format!("value {value} is not finite"),
        });
    }
    if value <= 0.0 {
        return Err(SeriesError::Data {
            line,
            msg: format!("value {value} is not positive"),
        });
    }
    Ok(())
}

/// Proleptic Gregorian ordinal of an ISO `YYYY-MM-DD` date.
pub fn to_ordinal(date: &str) -> Result<Ordinal, SeriesError> {
    let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
        .map_err(|_| SeriesError::Date(date.to_string()))?;
    Ok(d.num_days_from_ce() as Ordinal)
}

/// ISO `YYYY-MM-DD` string of an ordinal day.
pub fn from_ordinal(ordinal: Ordinal) -> String {
    i32::try_from(ordinal)
        .ok()
        .and_then(NaiveDate::from_num_days_from_ce_opt)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| format!("ordinal:{ordinal}"))
}

/// Serde adapter storing an [`Ordinal`] as an ISO `YYYY-MM-DD` string.
pub mod iso_date {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::{from_ordinal, to_ordinal, Ordinal};

    pub fn serialize<S: Serializer>(date: &Ordinal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&from_ordinal(*date))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ordinal, D::Error> {
        let text = String::deserialize(d)?;
        to_ordinal(&text).map_err(D::Error::custom)
    }

    /// Same, for optional dates (empty string or null means absent).
    pub mod option {
        use serde::{de::Error, Deserialize, Deserializer, Serializer};

        use super::super::{from_ordinal, to_ordinal, Ordinal};

        pub fn serialize<S: Serializer>(date: &Option<Ordinal>, s: S) -> Result<S::Ok, S::Error> {
            match date {
                Some(d) => s.serialize_str(&from_ordinal(*d)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ordinal>, D::Error> {
            match Option::<String>::deserialize(d)? {
                Some(t) if !t.trim().is_empty() => to_ordinal(&t).map(Some).map_err(D::Error::custom),
                _ => Ok(None),
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    value: String,
}

pub fn load_series(path: impl AsRef<Path>, gap_policy: GapPolicy) -> Result<TimeSeries, SeriesError> {
    read_series(File::open(path)?, gap_policy)
}

pub fn read_series<R: Read>(reader: R, gap_policy: GapPolicy) -> Result<TimeSeries, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "value" {
        return Err(SeriesError::Parse {
            line: 1,
            msg: format!("expected header `date,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut raw: Vec<(u64, SamplePoint)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| SeriesError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record.deserialize(Some(&headers)).map_err(|e| SeriesError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let date = to_ordinal(&row.date).map_err(|_| SeriesError::Parse {
            line,
            msg: format!("invalid date {:?}", row.date),
        })?;
        let value: f64 = row.value.parse().map_err(|_| SeriesError::Parse {
            line,
            msg: format!("invalid number {:?}", row.value),
        })?;
        check_value(value, line)?;
        if let Some((_, prev)) = raw.last() {
            if date <= prev.date {
                return Err(SeriesError::Parse {
                    line,
                    msg: format!(
                        "date {} does not follow {}",
                        from_ordinal(date),
                        from_ordinal(prev.date)
                    ),
                });
            }
        }
        raw.push((line, SamplePoint { date, value }));
    }
    if raw.is_empty() {
        return Err(SeriesError::Empty);
    }

    let mut points: Vec<SamplePoint> = Vec::with_capacity(raw.len());
    for (_, p) in raw {
        if let Some(prev) = points.last().copied() {
            let missing = p.date - prev.date - 1;
            if missing > 0 {
                match gap_policy {
                    GapPolicy::Reject => {
                        return Err(SeriesError::Gap {
                            after: from_ordinal(prev.date),
                            before: from_ordinal(p.date),
                            missing,
                        })
                    }
                    GapPolicy::ForwardFill => points.extend((1..=missing).map(|k| SamplePoint {
                        date: prev.date + k,
                        value: prev.value,
                    })),
                    GapPolicy::LinearInterp => {
                        let span = (missing + 1) as f64;
                        points.extend((1..=missing).map(|k| SamplePoint {
                            date: prev.date + k,
                            value: prev.value + (p.value - prev.value) * k as f64 / span,
                        }))
                    }
                }
            }
        }
        points.push(p);
    }
    TimeSeries::new(points)
}

pub fn save_series(series: &TimeSeries, path: impl AsRef<Path>) -> Result<(), SeriesError> {
    write_series(series, File::create(path)?)
}

/// Writes `date,value` CSV. Values use the shortest round-trip representation.
pub fn write_series<W: Write>(series: &TimeSeries, writer: W) -> Result<(), SeriesError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["date", "value"])?;
    for p in series.points() {
        wtr.write_record([from_ordinal(p.date), p.value.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
