use chrono::NaiveDate;

use super::series::TimeSeries;
use super::window::WindowSample;
use crate::error::{Error, Result};

/// Chronological split points. A window belongs to the partition containing
/// its target dates: training if before `train_end`, validation if before
/// `validation_end`, test otherwise. A target landing exactly on a boundary
/// goes to the later partition. Multi-step windows whose targets straddle a
/// boundary are not usable and are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub validation_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitions<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    /// Windows dropped because their targets crossed a boundary.
    pub straddling: usize,
}

impl<T> Default for Partitions<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            straddling: 0,
        }
    }
}

impl<T> Partitions<T> {
    /// Number of usable (assigned) windows.
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend(&mut self, other: Partitions<T>) {
        self.train.extend(other.train);
        self.validation.extend(other.validation);
        self.test.extend(other.test);
        self.straddling += other.straddling;
    }
}

impl SplitSpec {
    /// 36 : 4 : 8 split of the covered date range (three years, four months
    /// and eight months of a four-year series).
    pub fn from_ratios(first: NaiveDate, last: NaiveDate) -> Self {
        let span = (last - first).num_days() as f64 + 1.0;
        let at = |frac: f64| first + chrono::Days::new((span * frac).round() as u64);
        Self {
            train_end: at(36.0 / 48.0),
            validation_end: at(40.0 / 48.0),
        }
    }

    pub fn validate(&self, first: NaiveDate, last: NaiveDate) -> Result<()> {
        if !(first < self.train_end
            && self.train_end < self.validation_end
            && self.validation_end <= last)
        {
            return Err(Error::parameter(format!(
                "split requires {first} < train_end ({}) < validation_end ({}) <= {last}",
                self.train_end, self.validation_end
            )));
        }
        Ok(())
    }
}

/// Partitions windows of `series` chronologically by target date.
pub fn chronological_split(
    series: &TimeSeries,
    windows: Vec<WindowSample>,
    spec: &SplitSpec,
) -> Result<Partitions<WindowSample>> {
    let (Some(last), first) = (series.last_date(), series.start()) else {
        return Err(Error::data(format!(
            "series {} is empty",
            series.series_id()
        )));
    };
    spec.validate(first, last)?;
    let partition = |d: NaiveDate| {
        if d < spec.train_end {
            0
        } else if d < spec.validation_end {
            1
        } else {
            2
        }
    };
    let mut parts = Partitions::default();
    for w in windows {
        let first = partition(w.first_target_date());
        if first != partition(w.last_target_date()) {
            parts.straddling += 1;
            continue;
        }
        match first {
            0 => parts.train.push(w),
            1 => parts.validation.push(w),
            _ => parts.test.push(w),
        }
    }
    Ok(parts)
}
