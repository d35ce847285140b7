//! Data ingestion and preprocessing: series validation, the log/detrend
//! transform, sliding windows, calendar features, chronological splits and
//! synthetic data.

mod calendar;
mod series;
mod split;
mod synth;
mod transform;
mod window;

pub use calendar::{calendar_features, HolidayCalendar, EXTERNAL_WIDTH};
pub use series::{ingest_csv, parse_csv, TimeSeries};
pub use split::{chronological_split, Partitions, SplitSpec};
pub use synth::{
    generate_synthetic, synthetic_panel, PanelSpec, RegimeShift, Spike, SyntheticSeries,
    SyntheticSpec,
};
pub use transform::{inverse_transform, transform, transform_value, TransformMode};
pub use window::{make_windows, WindowPurpose, WindowSample, WindowSpec};
