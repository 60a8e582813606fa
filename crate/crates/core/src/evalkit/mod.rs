//! Agreement metrics, coarse and station validation, temporal
//! generalization errors and three-cornered-hat uncertainty.

mod metrics;
mod relgen;
mod report;
mod tch;
mod validate;

pub use metrics::{metrics, metrics_masked, Metrics, PairAccumulator};
pub use relgen::{relgen, HourMetrics, ReRow, ReTable, BASELINE_HOURS, HELDOUT_HOURS};
pub use report::{
    read_hour_metrics_csv, read_metrics_csv, write_hour_metrics_csv, write_metrics_csv, write_pgm,
    write_re_table_csv, MetricsRow,
};
pub use tch::{daily_mean, tch, tch_maps, TchEstimate, TchMaps, TchMethod, TCH_MIN_SAMPLES};
pub use validate::{
    aggregate_series, compare_fields, metrics_by_hour, utc_hour, validate_vs_coarse, validate_vs_stations,
    MetricsReport, StationMetrics, StationReport,
};
