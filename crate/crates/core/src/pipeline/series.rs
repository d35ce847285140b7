use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// A gap-free daily series of nonnegative observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    series_id: String,
    start: NaiveDate,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(series_id: impl Into<String>, start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        let series_id = series_id.into();
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::data(format!(
                "series {series_id}: value {v} on {} is not a finite nonnegative number",
                start + chrono::Days::new(i as u64)
            )));
        }
        Ok(Self {
            series_id,
            start,
            values,
        })
    }

    /// Builds a series from dated points, which must be strictly increasing
    /// and consecutive days.
    pub fn from_points(series_id: impl Into<String>, points: &[(NaiveDate, f64)]) -> Result<Self> {
        let series_id = series_id.into();
        let Some(&(start, _)) = points.first() else {
            return Self::new(series_id, NaiveDate::MIN, Vec::new());
        };
        for pair in points.windows(2) {
            let (prev, next) = (pair[0].0, pair[1].0);
            if next <= prev {
                return Err(Error::data(format!(
                    "series {series_id}: date {next} is duplicated or out of order"
                )));
            }
            if next != prev.succ_opt().expect("date in range") {
                return Err(Error::data(format!(
                    "series {series_id}: gap after {prev}, next observation is {next}"
                )));
            }
        }
        Self::new(series_id, start, points.iter().map(|p| p.1).collect())
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start + chrono::Days::new(index as u64)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        (!self.is_empty()).then(|| self.date_at(self.len() - 1))
    }

    pub fn points(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.date_at(i), v))
    }

    /// Index of `date` within the series, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }
}

/// Reads `series_id,date,value` rows (ISO dates) into validated series,
/// ordered by first appearance of each id.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, path)
}

pub fn parse_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<TimeSeries>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["series_id", "date", "value"] {
        return Err(parse_err(
            1,
            format!(
                "expected header `series_id,date,value`, found `{}`",
                names.join(",")
            ),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<(NaiveDate, f64)>> = Default::default();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        let date = NaiveDate::parse_from_str(record[1].trim(), "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", &record[1])))?;
        let value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("bad value `{}`: {e}", &record[2])))?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((date, value));
    }

    order
        .into_iter()
        .map(|id| {
            let mut points = rows.remove(&id).expect("collected");
            points.sort_by_key(|p| p.0);
            TimeSeries::from_points(id, &points)
        })
        .collect()
}
