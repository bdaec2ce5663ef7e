//! Accuracy and interval metrics, the historical-average baseline, the
//! log-normal KS test and the Monte-Carlo route sampler.

mod baseline;
mod ks;
mod metrics;
mod plot;
mod route;

pub use baseline::HistoricalAverage;
pub use ks::{fit_lognormal, kolmogorov_p, ks_against, ks_lognormal, ks_statistic, KsReport, KS_MIN_SAMPLES};
pub use metrics::{
    mae_rmse, mae_rmse_flat, picp_mpiw, picp_mpiw_flat, Accuracy, Coverage, ErrorPair, IntervalQuality, MetricReport,
    ReportMeta,
};
pub use plot::{render_svg, write_svg, Trace};
pub use route::{monte_carlo_route, summarize, write_trip_samples, EdgeTimes, TripSamples, TripSummary, DEFAULT_RUNS};
