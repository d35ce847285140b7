use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};

use crate::error::{Error, Result};

/// Day-of-week one-hot (Monday first) plus a holiday flag.
pub const EXTERNAL_WIDTH: usize = 8;

/// A set of holiday dates with optional labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HolidayCalendar {
    days: BTreeMap<NaiveDate, String>,
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).expect("valid nth weekday")
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, 5)
        .unwrap_or_else(|| nth_weekday(year, month, weekday, 4))
}

impl HolidayCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Six U.S. holidays per year: Memorial Day, Independence Day, Labor
    /// Day, Thanksgiving, Christmas Day and New Year's Eve.
    pub fn us_default(first_year: i32, last_year: i32) -> Self {
        let mut cal = Self::new();
        for y in first_year..=last_year {
            cal.insert(last_weekday(y, 5, Weekday::Mon), "Memorial Day");
            cal.insert(
                NaiveDate::from_ymd_opt(y, 7, 4).expect("date"),
                "Independence Day",
            );
            cal.insert(nth_weekday(y, 9, Weekday::Mon, 1), "Labor Day");
            cal.insert(nth_weekday(y, 11, Weekday::Thu, 4), "Thanksgiving");
            cal.insert(
                NaiveDate::from_ymd_opt(y, 12, 25).expect("date"),
                "Christmas Day",
            );
            cal.insert(
                NaiveDate::from_ymd_opt(y, 12, 31).expect("date"),
                "New Year's Eve",
            );
        }
        cal
    }

    pub fn insert(&mut self, date: NaiveDate, label: impl Into<String>) {
        self.days.insert(date, label.into());
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.days.contains_key(&date)
    }

    pub fn label(&self, date: NaiveDate) -> Option<&str> {
        self.days.get(&date).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.keys().copied()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// One ISO date per line, optionally followed by `,` and a label. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cal = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (date, label) = match line.split_once(',') {
                Some((d, l)) => (d.trim(), l.trim()),
                None => (line, ""),
            };
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("bad holiday date `{date}`: {e}"),
            })?;
            cal.insert(date, label);
        }
        Ok(cal)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (d, label) in &self.days {
            if label.is_empty() {
                out.push_str(&format!("{d}\n"));
            } else {
                out.push_str(&format!("{d},{label}\n"));
            }
        }
        out
    }
}

pub fn calendar_features(date: NaiveDate, calendar: &HolidayCalendar) -> Vec<f64> {
    let mut v = vec![0.0; EXTERNAL_WIDTH];
    v[date.weekday().num_days_from_monday() as usize] = 1.0;
    if calendar.contains(date) {
        v[7] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn plain_monday() {
        let cal = HolidayCalendar::us_default(2015, 2018);
        assert_eq!(
            calendar_features(d(2017, 3, 6), &cal),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn new_years_eve_is_flagged() {
        let cal = HolidayCalendar::us_default(2016, 2016);
        let f = calendar_features(d(2016, 12, 31), &cal);
        assert_eq!(f[7], 1.0);
        assert_eq!(cal.label(d(2016, 12, 31)), Some("New Year's Eve"));
    }

    #[test]
    fn one_hot_sums_to_one() {
        let cal = HolidayCalendar::us_default(2020, 2020);
        let mut date = d(2020, 1, 1);
        for _ in 0..400 {
            let f = calendar_features(date, &cal);
            assert_eq!(f[..7].iter().sum::<f64>(), 1.0);
            date = date.succ_opt().unwrap();
        }
    }

    #[test]
    fn floating_holidays() {
        let cal = HolidayCalendar::us_default(2017, 2017);
        assert!(cal.contains(d(2017, 5, 29))); // Memorial Day
        assert!(cal.contains(d(2017, 9, 4))); // Labor Day
        assert!(cal.contains(d(2017, 11, 23))); // Thanksgiving
        assert_eq!(cal.len(), 6);
    }

    #[test]
    fn parse_round_trip() {
        let text = "# holidays\n2016-12-31,New Year's Eve\n2017-07-04\n\n";
        let cal = HolidayCalendar::parse(text, Path::new("h.txt")).unwrap();
        assert_eq!(cal.len(), 2);
        let again = HolidayCalendar::parse(&cal.to_text(), Path::new("h.txt")).unwrap();
        assert_eq!(cal, again);
        assert!(matches!(
            HolidayCalendar::parse("2017-13-01\n", Path::new("h.txt")),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
