//! Interval-based anomaly alerts and precision/recall evaluation.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::pipeline::WindowSample;
use crate::uncertainty::{original_target, Forecaster, Interval};

#[derive(Debug, Clone, PartialEq)]
pub struct AlertDecision {
    pub series_id: String,
    pub timestamp: NaiveDate,
    pub observed: f64,
    pub interval: Interval,
    pub is_alert: bool,
}

/// Alerts when `observed` falls outside `interval`; the bounds themselves
/// do not alert.
pub fn detect(
    series_id: &str,
    timestamp: NaiveDate,
    observed: f64,
    interval: Interval,
) -> Result<AlertDecision> {
    if !observed.is_finite() {
        return Err(Error::data(format!(
            "observed value for {series_id} on {timestamp} is not finite"
        )));
    }
    Ok(AlertDecision {
        series_id: series_id.to_string(),
        timestamp,
        observed,
        interval,
        is_alert: !interval.contains(observed),
    })
}

/// Decisions paired with ground-truth anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOutcome {
    decisions: Vec<AlertDecision>,
    labels: Vec<bool>,
}

impl LabeledOutcome {
    pub fn new(decisions: Vec<AlertDecision>, labels: Vec<bool>) -> Result<Self> {
        if decisions.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} decisions but {} labels",
                decisions.len(),
                labels.len()
            )));
        }
        Ok(Self { decisions, labels })
    }

    pub fn decisions(&self) -> &[AlertDecision] {
        &self.decisions
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn from_pairs(alerts: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Counts::default();
        for (alert, label) in alerts {
            match (alert, label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub counts: Counts,
    /// `None` when nothing alerted.
    pub precision: Option<f64>,
    /// `None` when there are no positive labels.
    pub recall: Option<f64>,
    /// Share of unlabelled points that alerted; `None` without any.
    pub false_alarm_rate: Option<f64>,
}

pub fn evaluate_counts(counts: Counts) -> Evaluation {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Evaluation {
        counts,
        precision: ratio(counts.tp, counts.tp + counts.fp),
        recall: ratio(counts.tp, counts.tp + counts.fn_),
        false_alarm_rate: ratio(counts.fp, counts.fp + counts.tn),
    }
}

pub fn evaluate(outcome: &LabeledOutcome) -> Evaluation {
    evaluate_counts(Counts::from_pairs(
        outcome
            .decisions
            .iter()
            .map(|d| d.is_alert)
            .zip(outcome.labels.iter().copied()),
    ))
}

/// Infers each sample's interval and checks its observed first target,
/// preserving input order.
pub fn run_detection(
    samples: &[WindowSample],
    forecaster: &Forecaster<'_>,
) -> Result<Vec<AlertDecision>> {
    samples
        .iter()
        .map(|s| {
            let interval = forecaster
                .infer(s)?
                .interval
                .inverse_transform(s.offset, forecaster.mode)?;
            detect(
                &s.series_id,
                s.first_target_date(),
                original_target(s, forecaster.mode)?,
                interval,
            )
        })
        .collect()
}

pub fn alerts_csv(decisions: &[AlertDecision]) -> String {
    let mut out = String::from("series_id,timestamp,observed,lower,upper,is_alert\n");
    for d in decisions {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.series_id, d.timestamp, d.observed, d.interval.lower, d.interval.upper, d.is_alert
        ));
    }
    out
}

/// Single-row report; an undefined ratio is written as an empty field.
pub fn evaluation_csv(e: &Evaluation) -> String {
    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "tp,fp,fn,precision,recall\n{},{},{},{},{}\n",
        e.counts.tp,
        e.counts.fp,
        e.counts.fn_,
        f(e.precision),
        f(e.recall)
    )
}

/// `series_id,date,anomaly` ground truth with `anomaly` in {0, 1}.
pub fn labels_csv(rows: impl IntoIterator<Item = (String, NaiveDate, bool)>) -> String {
    let mut out = String::from("series_id,date,anomaly\n");
    for (id, date, a) in rows {
        out.push_str(&format!("{id},{date},{}\n", u8::from(a)));
    }
    out
}

pub type Labels = HashMap<(String, NaiveDate), bool>;

pub fn parse_labels<R: Read>(reader: R, path: &Path) -> Result<Labels> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?;
    if headers
        .iter()
        .map(str::trim)
        .ne(["series_id", "date", "anomaly"])
    {
        return Err(err(1, "expected header `series_id,date,anomaly`".into()));
    }
    let mut out = Labels::new();
    for record in rdr.records() {
        let record = record
            .map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(err(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(record[1].trim(), "%Y-%m-%d")
            .map_err(|e| err(line, format!("bad date `{}`: {e}", &record[1])))?;
        let flag = match record[2].trim() {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(err(line, format!("anomaly must be 0 or 1, got `{other}`"))),
        };
        out.insert((record[0].trim().to_string(), date), flag);
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Labels> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(file, path)
}

/// Pairs decisions with their labels; unlabeled points count as normal.
pub fn label_decisions(decisions: Vec<AlertDecision>, labels: &Labels) -> Result<LabeledOutcome> {
    let flags = decisions
        .iter()
        .map(|d| {
            labels
                .get(&(d.series_id.clone(), d.timestamp))
                .copied()
                .unwrap_or(false)
        })
        .collect();
    LabeledOutcome::new(decisions, flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 6, 1).unwrap()
    }

    fn iv(lower: f64, upper: f64) -> Interval {
        Interval { lower, upper }
    }

    #[test]
    fn bounds_are_inclusive() {
        assert!(!detect("a", day(), 1.0, iv(1.0, 2.0)).unwrap().is_alert);
        assert!(!detect("a", day(), 2.0, iv(1.0, 2.0)).unwrap().is_alert);
        assert!(
            detect("a", day(), 2.0 + 1e-12, iv(1.0, 2.0))
                .unwrap()
                .is_alert
        );
        assert!(!detect("a", day(), 3.0, iv(3.0, 3.0)).unwrap().is_alert);
        assert!(matches!(
            detect("a", day(), f64::NAN, iv(0.0, 1.0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn published_counts() {
        let e = evaluate_counts(Counts {
            tp: 17,
            fp: 4,
            fn_: 0,
            tn: 79,
        });
        assert_eq!(format!("{:.2}", 100.0 * e.precision.unwrap()), "80.95");
        assert_eq!(e.precision.unwrap(), 17.0 / 21.0);
        assert_eq!(e.recall, Some(1.0));
    }

    #[test]
    fn perfect_and_silent_detectors() {
        let d = |alert| AlertDecision {
            series_id: "a".into(),
            timestamp: day(),
            observed: 0.0,
            interval: iv(0.0, 0.0),
            is_alert: alert,
        };
        let perfect = LabeledOutcome::new(vec![d(true), d(false)], vec![true, false]).unwrap();
        let e = evaluate(&perfect);
        assert_eq!((e.precision, e.recall), (Some(1.0), Some(1.0)));
        let silent = LabeledOutcome::new(vec![d(false), d(false)], vec![true, false]).unwrap();
        let e = evaluate(&silent);
        assert_eq!((e.precision, e.recall), (None, Some(0.0)));
        assert!(LabeledOutcome::new(vec![d(false)], vec![]).is_err());
    }

    #[test]
    fn widening_never_adds_alerts() {
        for k in 0..100 {
            let x = k as f64 * 0.1 - 5.0;
            let narrow = detect("a", day(), x, iv(-1.0, 1.0)).unwrap().is_alert;
            let wide = detect("a", day(), x, iv(-2.0, 1.5)).unwrap().is_alert;
            assert!(!wide || narrow);
        }
    }

    #[test]
    fn report_layouts() {
        let e = evaluate_counts(Counts {
            tp: 0,
            fp: 0,
            fn_: 2,
            tn: 5,
        });
        assert_eq!(evaluation_csv(&e), "tp,fp,fn,precision,recall\n0,0,2,,0\n");
        let d = detect("s", day(), 5.0, iv(1.0, 2.0)).unwrap();
        assert_eq!(
            alerts_csv(&[d]),
            "series_id,timestamp,observed,lower,upper,is_alert\ns,2017-06-01,5,1,2,true\n"
        );
    }

    #[test]
    fn labels_round_trip() {
        let rows = vec![
            ("a".to_string(), day(), true),
            ("a".to_string(), day().succ_opt().unwrap(), false),
            ("b".to_string(), day(), false),
        ];
        let text = labels_csv(rows.clone());
        let parsed = parse_labels(text.as_bytes(), Path::new("labels.csv")).unwrap();
        assert_eq!(parsed.len(), 3);
        for (id, d, v) in rows {
            assert_eq!(parsed[&(id, d)], v);
        }
        let bad = "series_id,date,anomaly\na,2017-06-01,maybe\n";
        let err = parse_labels(bad.as_bytes(), Path::new("l.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        assert!(detect("s", day(), f64::NAN, iv(1.0, 2.0)).is_err());
        assert!(detect("s", day(), f64::INFINITY, iv(1.0, 2.0)).is_err());
    }
}
