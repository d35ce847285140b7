use chrono::{Datelike, NaiveDate};

use super::calendar::{calendar_features, HolidayCalendar};
use super::series::TimeSeries;
use super::transform::{transform, transform_value, TransformMode};
use crate::error::{Error, Result};

/// One transformed training/inference unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub series_id: String,
    /// Detrended log inputs; `inputs[0] == 0`.
    pub inputs: Vec<f64>,
    /// Detrended log targets, one per forecast step.
    pub targets: Vec<f64>,
    /// Log of the first input value, subtracted from everything.
    pub offset: f64,
    /// Calendar features of the first target day.
    pub external: Vec<f64>,
    /// Date of the last input day.
    pub end_date: NaiveDate,
}

impl WindowSample {
    pub fn first_target_date(&self) -> NaiveDate {
        self.end_date + chrono::Days::new(1)
    }

    pub fn last_target_date(&self) -> NaiveDate {
        self.end_date + chrono::Days::new(self.targets.len().max(1) as u64)
    }

    /// Day of week of the last input day, Monday = 0.
    pub fn end_weekday(&self) -> u32 {
        self.end_date.weekday().num_days_from_monday()
    }
}

/// Window geometry: `length` input days, `horizon` prediction steps and
/// `decoder_horizon` reconstruction steps for pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub length: usize,
    pub horizon: usize,
    pub decoder_horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length: 28,
            horizon: 1,
            decoder_horizon: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPurpose {
    /// Targets are the next `horizon` days.
    Prediction,
    /// Targets are the next `decoder_horizon` days.
    Pretraining,
}

impl WindowSpec {
    pub fn steps(&self, purpose: WindowPurpose) -> usize {
        match purpose {
            WindowPurpose::Prediction => self.horizon,
            WindowPurpose::Pretraining => self.decoder_horizon,
        }
    }

    /// Number of step-1 windows a series of `len` days yields.
    pub fn count(&self, len: usize, purpose: WindowPurpose) -> usize {
        (len + 1).saturating_sub(self.length + self.steps(purpose))
    }
}

/// Step-1 sliding windows over `series`.
///
/// A series shorter than one input window is a data error. A series that
/// fits the inputs but leaves no target day simply yields no windows.
pub fn make_windows(
    series: &TimeSeries,
    spec: WindowSpec,
    purpose: WindowPurpose,
    calendar: &HolidayCalendar,
    mode: TransformMode,
) -> Result<Vec<WindowSample>> {
    let steps = spec.steps(purpose);
    if spec.length < 2 || steps == 0 {
        return Err(Error::parameter(format!(
            "window length must be >= 2 and horizon >= 1 (got {} and {steps})",
            spec.length
        )));
    }
    if series.len() < spec.length {
        return Err(Error::data(format!(
            "series {} has {} days, fewer than the {}-day input window",
            series.series_id(),
            series.len(),
            spec.length
        )));
    }
    let values = series.values();
    (0..spec.count(series.len(), purpose))
        .map(|start| {
            let end = start + spec.length;
            let (inputs, offset) = transform(&values[start..end], mode)?;
            let targets = values[end..end + steps]
                .iter()
                .map(|&v| transform_value(v, mode).map(|l| l - offset))
                .collect::<Result<Vec<_>>>()?;
            Ok(WindowSample {
                series_id: series.series_id().to_string(),
                inputs,
                targets,
                offset,
                external: calendar_features(series.date_at(end), calendar),
                end_date: series.date_at(end - 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize) -> TimeSeries {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        TimeSeries::new("s", start, (0..len).map(|i| 10.0 + i as f64).collect()).unwrap()
    }

    fn spec(length: usize, horizon: usize) -> WindowSpec {
        WindowSpec {
            length,
            horizon,
            decoder_horizon: 7,
        }
    }

    #[test]
    fn thirty_days_two_windows() {
        let w = make_windows(
            &series(30),
            spec(28, 1),
            WindowPurpose::Prediction,
            &HolidayCalendar::new(),
            TransformMode::Log,
        )
        .unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].end_date, NaiveDate::from_ymd_opt(2019, 1, 28).unwrap());
        assert_eq!(
            w[1].first_target_date(),
            NaiveDate::from_ymd_opt(2019, 1, 30).unwrap()
        );
    }

    #[test]
    fn exact_window_has_no_target() {
        let w = make_windows(
            &series(28),
            spec(28, 1),
            WindowPurpose::Prediction,
            &HolidayCalendar::new(),
            TransformMode::Log,
        )
        .unwrap();
        assert!(w.is_empty());
        assert!(matches!(
            make_windows(
                &series(20),
                spec(28, 1),
                WindowPurpose::Prediction,
                &HolidayCalendar::new(),
                TransformMode::Log
            ),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn consecutive_windows_overlap() {
        let s = series(40);
        let w = make_windows(
            &s,
            spec(28, 1),
            WindowPurpose::Prediction,
            &HolidayCalendar::new(),
            TransformMode::Log,
        )
        .unwrap();
        // Re-add offsets to compare raw log values.
        let raw = |ws: &WindowSample| ws.inputs.iter().map(|v| v + ws.offset).collect::<Vec<_>>();
        for pair in w.windows(2) {
            let (a, b) = (raw(&pair[0]), raw(&pair[1]));
            for k in 0..27 {
                assert!((a[k + 1] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pretraining_windows_carry_decoder_targets() {
        let w = make_windows(
            &series(40),
            spec(28, 1),
            WindowPurpose::Pretraining,
            &HolidayCalendar::new(),
            TransformMode::Log,
        )
        .unwrap();
        assert_eq!(w.len(), 40 - 28 - 7 + 1);
        assert!(w.iter().all(|s| s.targets.len() == 7 && s.inputs[0] == 0.0));
        let expected = ((10.0 + 28.0f64).ln() - 10.0f64.ln()).abs();
        assert!((w[0].targets[0] - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 2usize..120, t in 2usize..40, h in 1usize..8) {
            prop_assume!(len >= t);
            let s = series(len);
            let w = make_windows(&s, spec(t, h), WindowPurpose::Prediction, &HolidayCalendar::new(), TransformMode::Log).unwrap();
            let expected = (len as i64 - t as i64 - h as i64 + 1).max(0) as usize;
            prop_assert_eq!(w.len(), expected);
            for s in &w {
                prop_assert_eq!(s.inputs[0], 0.0);
                prop_assert_eq!(s.inputs.len(), t);
                prop_assert_eq!(s.targets.len(), h);
            }
        }
    }
}
