//! Synthetic daily series with multiplicative structure.
//!
//! The log of each observation is the sum of a linear trend, a weekly
//! pattern, a yearly sinusoid, holiday and regime-shift effects, injected
//! spikes and Gaussian noise. Generators return the noiseless log signal and
//! the spike labels next to the series so tests can use them as oracles.

use chrono::{Datelike, NaiveDate};
use rand_distr::{Distribution, Normal};

use super::calendar::HolidayCalendar;
use super::series::TimeSeries;
use crate::error::{Error, Result};
use crate::nn::rng::{streams, SeededRng};

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub index: usize,
    /// Height in units of the noise standard deviation.
    pub sigmas: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeShift {
    pub start_index: usize,
    pub log_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub series_id: String,
    pub start: NaiveDate,
    pub length: usize,
    /// Log level at day zero.
    pub level: f64,
    pub trend_per_year: f64,
    /// Log effect per weekday, Monday first.
    pub weekly: [f64; 7],
    pub yearly_amplitude: f64,
    pub yearly_phase: f64,
    pub noise_sigma: f64,
    pub holiday_effect: f64,
    pub holidays: HolidayCalendar,
    pub spikes: Vec<Spike>,
    pub regime_shift: Option<RegimeShift>,
}

impl SyntheticSpec {
    /// A plain weekly + yearly series without holidays, spikes or shifts.
    pub fn basic(
        series_id: impl Into<String>,
        start: NaiveDate,
        length: usize,
        noise_sigma: f64,
    ) -> Self {
        Self {
            series_id: series_id.into(),
            start,
            length,
            level: 9.0,
            trend_per_year: 0.1,
            weekly: weekly_shape(0.25),
            yearly_amplitude: 0.15,
            yearly_phase: 0.0,
            noise_sigma,
            holiday_effect: 0.0,
            holidays: HolidayCalendar::new(),
            spikes: Vec::new(),
            regime_shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub series: TimeSeries,
    /// Noiseless log signal (everything except the Gaussian noise).
    pub log_signal: Vec<f64>,
    /// `true` on injected spike days.
    pub anomalies: Vec<bool>,
}

/// Zero-mean weekly log pattern with a Friday peak and a Sunday trough,
/// scaled so the peak-to-trough range is about `amplitude`.
pub fn weekly_shape(amplitude: f64) -> [f64; 7] {
    let base = [0.0, 0.05, 0.1, 0.2, 0.55, 0.35, -0.45];
    let mean = base.iter().sum::<f64>() / 7.0;
    base.map(|b| (b - mean) * amplitude)
}

impl SyntheticSpec {
    /// The noiseless log signal at day `i`, excluding spikes.
    fn base_signal(&self, i: usize) -> f64 {
        let date = self.start + chrono::Days::new(i as u64);
        let t = i as f64;
        let mut v = self.level
            + self.trend_per_year * t / DAYS_PER_YEAR
            + self.weekly[date.weekday().num_days_from_monday() as usize]
            + self.yearly_amplitude
                * (2.0 * std::f64::consts::PI * t / DAYS_PER_YEAR + self.yearly_phase).sin();
        if self.holidays.contains(date) {
            v += self.holiday_effect;
        }
        if let Some(shift) = self.regime_shift {
            if i >= shift.start_index {
                v += shift.log_shift;
            }
        }
        v
    }
}

/// Generates one series; identical `(spec, seed)` give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSeries> {
    if spec.noise_sigma < 0.0 || !spec.noise_sigma.is_finite() {
        return Err(Error::parameter(format!(
            "noise sigma must be finite and >= 0, got {}",
            spec.noise_sigma
        )));
    }
    if let Some(s) = spec.spikes.iter().find(|s| s.index >= spec.length) {
        return Err(Error::parameter(format!(
            "spike at day {} lies beyond the series length {}",
            s.index, spec.length
        )));
    }
    let mut rng = SeededRng::new(seed, streams::SYNTHETIC);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut log_signal = Vec::with_capacity(spec.length);
    let mut anomalies = vec![false; spec.length];
    let mut values = Vec::with_capacity(spec.length);
    for (i, anomalous) in anomalies.iter_mut().enumerate() {
        let mut s = spec.base_signal(i);
        for spike in spec.spikes.iter().filter(|sp| sp.index == i) {
            s += spike.sigmas * spec.noise_sigma;
            *anomalous = true;
        }
        let eps = if spec.noise_sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        log_signal.push(s);
        values.push((s + eps).exp());
    }
    let series = TimeSeries::new(spec.series_id.clone(), spec.start, values)?;
    Ok(SyntheticSeries {
        series,
        log_signal,
        anomalies,
    })
}

/// A panel of related series with per-series variation in level, seasonal
/// amplitudes, trend and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub n_series: usize,
    pub years: f64,
    pub start: NaiveDate,
    pub noise_sigma: f64,
    pub holiday_effect: f64,
    pub holidays: HolidayCalendar,
    pub spikes_per_series: usize,
    pub spike_sigmas: f64,
    /// Spikes are placed uniformly in this day-index range, at least
    /// `spike_spacing` days apart.
    pub spike_range: Option<(usize, usize)>,
    pub spike_spacing: usize,
    pub regime_shift: Option<RegimeShift>,
}

impl PanelSpec {
    pub fn new(n_series: usize, years: f64, noise_sigma: f64) -> Self {
        let start = NaiveDate::from_ymd_opt(2014, 1, 1).expect("date");
        let last_year = 2014 + years.ceil() as i32;
        Self {
            n_series,
            years,
            start,
            noise_sigma,
            holiday_effect: 0.0,
            holidays: HolidayCalendar::us_default(2014, last_year),
            spikes_per_series: 0,
            spike_sigmas: 6.0,
            spike_range: None,
            spike_spacing: 10,
            regime_shift: None,
        }
    }

    pub fn length(&self) -> usize {
        (self.years * DAYS_PER_YEAR).round() as usize
    }
}

pub fn synthetic_panel(spec: &PanelSpec, seed: u64) -> Result<Vec<SyntheticSeries>> {
    let mut rng = SeededRng::new(seed, streams::SYNTHETIC + 1);
    let length = spec.length();
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    let mut out = Vec::with_capacity(spec.n_series);
    for k in 0..spec.n_series {
        let level = draw(7.0, 10.0);
        let trend = draw(0.03, 0.15);
        let weekly_amp = draw(0.2, 0.4);
        let yearly_amp = draw(0.05, 0.2);
        let phase = draw(0.0, 2.0 * std::f64::consts::PI);

        let mut spikes = Vec::new();
        if spec.spikes_per_series > 0 {
            let (lo, hi) = spec.spike_range.unwrap_or((length / 2, length));
            let mut attempts = 0;
            while spikes.len() < spec.spikes_per_series && attempts < 10_000 {
                attempts += 1;
                let idx = lo + ((hi - lo) as f64 * draw(0.0, 1.0)) as usize;
                let idx = idx.min(length - 1);
                if spikes
                    .iter()
                    .all(|s: &Spike| s.index.abs_diff(idx) >= spec.spike_spacing)
                {
                    spikes.push(Spike {
                        index: idx,
                        sigmas: spec.spike_sigmas,
                    });
                }
            }
            spikes.sort_by_key(|s| s.index);
        }

        let series_spec = SyntheticSpec {
            series_id: format!("series_{k}"),
            start: spec.start,
            length,
            level,
            trend_per_year: trend,
            weekly: weekly_shape(weekly_amp),
            yearly_amplitude: yearly_amp,
            yearly_phase: phase,
            noise_sigma: spec.noise_sigma,
            holiday_effect: spec.holiday_effect,
            holidays: spec.holidays.clone(),
            spikes,
            regime_shift: spec.regime_shift,
        };
        let series_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k as u64 + 1);
        out.push(generate_synthetic(&series_spec, series_seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 1, 4).unwrap()
    }

    #[test]
    fn noiseless_series_is_weekly_periodic_after_removing_trend_and_season() {
        let spec = SyntheticSpec::basic("a", start(), 200, 0.0);
        let s = generate_synthetic(&spec, 1).unwrap();
        let resid: Vec<f64> = s
            .series
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let t = i as f64;
                v.ln()
                    - spec.level
                    - spec.trend_per_year * t / DAYS_PER_YEAR
                    - spec.yearly_amplitude * (2.0 * std::f64::consts::PI * t / DAYS_PER_YEAR).sin()
            })
            .collect();
        for i in 7..resid.len() {
            assert!((resid[i] - resid[i - 7]).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_series() {
        let spec = SyntheticSpec::basic("a", start(), 300, 0.1);
        assert_eq!(
            generate_synthetic(&spec, 9).unwrap(),
            generate_synthetic(&spec, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(&spec, 9).unwrap().series,
            generate_synthetic(&spec, 10).unwrap().series
        );
    }

    #[test]
    fn residual_variance_matches_sigma() {
        let sigma = 0.1;
        let spec = SyntheticSpec::basic("a", start(), 5000, sigma);
        let s = generate_synthetic(&spec, 3).unwrap();
        let resid: Vec<f64> = s
            .series
            .values()
            .iter()
            .zip(&s.log_signal)
            .map(|(v, sig)| v.ln() - sig)
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn spikes_and_shifts_land_where_requested() {
        let mut spec = SyntheticSpec::basic("a", start(), 100, 0.05);
        spec.spikes = vec![Spike {
            index: 40,
            sigmas: 6.0,
        }];
        spec.regime_shift = Some(RegimeShift {
            start_index: 70,
            log_shift: 0.5,
        });
        let s = generate_synthetic(&spec, 2).unwrap();
        let plain = generate_synthetic(&SyntheticSpec::basic("a", start(), 100, 0.05), 2).unwrap();
        assert!(s.anomalies[40] && s.anomalies.iter().filter(|&&a| a).count() == 1);
        assert!((s.log_signal[40] - plain.log_signal[40] - 0.3).abs() < 1e-12);
        assert!((s.log_signal[80] - plain.log_signal[80] - 0.5).abs() < 1e-12);
        assert_eq!(s.log_signal[60], plain.log_signal[60]);
    }

    #[test]
    fn negative_sigma_rejected() {
        let spec = SyntheticSpec::basic("a", start(), 10, -1.0);
        assert!(matches!(
            generate_synthetic(&spec, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn panel_spikes_respect_range_and_spacing() {
        let mut p = PanelSpec::new(3, 1.0, 0.1);
        p.spikes_per_series = 4;
        p.spike_range = Some((200, 360));
        let panel = synthetic_panel(&p, 5).unwrap();
        assert_eq!(panel.len(), 3);
        for s in &panel {
            let idx: Vec<usize> = s
                .anomalies
                .iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(idx.len(), 4);
            assert!(idx.iter().all(|&i| (200..360).contains(&i)));
            assert!(idx.windows(2).all(|w| w[1] - w[0] >= 10));
        }
    }
}
