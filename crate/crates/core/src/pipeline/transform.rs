use crate::error::{Error, Result};

/// How raw values are mapped to log space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformMode {
    /// `ln(v)`; values must be strictly positive.
    #[default]
    Log,
    /// `ln(1 + v)`; admits zeros.
    Log1p,
}

impl TransformMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformMode::Log => "log",
            TransformMode::Log1p => "log1p",
        }
    }
}

impl std::str::FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(TransformMode::Log),
            "log1p" => Ok(TransformMode::Log1p),
            other => Err(Error::parameter(format!(
                "unknown transform `{other}` (log | log1p)"
            ))),
        }
    }
}

pub fn transform_value(v: f64, mode: TransformMode) -> Result<f64> {
    match mode {
        TransformMode::Log if v > 0.0 && v.is_finite() => Ok(v.ln()),
        TransformMode::Log => Err(Error::data(format!(
            "cannot take the log of {v}; use the log1p transform for series with zeros"
        ))),
        TransformMode::Log1p if v >= 0.0 && v.is_finite() => Ok(v.ln_1p()),
        TransformMode::Log1p => Err(Error::data(format!(
            "log1p transform needs v >= 0, got {v}"
        ))),
    }
}

/// Log-transforms a window and subtracts its first log value. Returns the
/// detrended window (first entry exactly zero) and the subtracted offset.
pub fn transform(window: &[f64], mode: TransformMode) -> Result<(Vec<f64>, f64)> {
    let logs = window
        .iter()
        .map(|&v| transform_value(v, mode))
        .collect::<Result<Vec<_>>>()?;
    let Some(&offset) = logs.first() else {
        return Err(Error::data("cannot transform an empty window"));
    };
    Ok((logs.into_iter().map(|l| l - offset).collect(), offset))
}

/// Maps a transformed value back to the original scale.
pub fn inverse_transform(value: f64, offset: f64, mode: TransformMode) -> Result<f64> {
    if !value.is_finite() || !offset.is_finite() {
        return Err(Error::numeric(format!(
            "cannot invert non-finite value {value} + {offset}"
        )));
    }
    let out = match mode {
        TransformMode::Log => (value + offset).exp(),
        TransformMode::Log1p => (value + offset).exp_m1(),
    };
    if !out.is_finite() {
        return Err(Error::numeric(format!(
            "inverse transform of {value} + {offset} overflows"
        )));
    }
    Ok(out)
}
