//! Windowing, optimization with early stopping, and conformal calibration.

mod conformal;
mod trainer;
mod windows;

pub use conformal::{conformal_quantile, conformal_rank, intervals, read_radii_csv, ConformalRadii, Intervals};
pub use trainer::{calibrate, forecasts_in_flow_units, predict_windows, train, CpMode, EpochRecord, TrainOptions, TrainOutcome};
pub use windows::{count_windows, make_windows, Normalization, SplitFractions, SplitRanges, WindowDataset};
