//! Gridded geodata: grids, cubes, quality control, normalization,
//! resampling, patch datasets, station records and the STC container.

mod cube;
mod grid;
mod norm;
mod patches;
mod qc;
mod resample;
pub mod stations;
pub mod stc;

pub use cube::{DataCube, FieldSeries, TargetField, VarKind, VarSchema, VarSpec, CONTEXT_CHANNELS, TIME_STEP_S};
pub use grid::{Bounds, GeoGrid};
pub use norm::{scalar_stats, zscore_apply, zscore_fit, NormStats, STD_FLOOR};
pub use patches::{
    augment, extract_patches, split_patches, Anchor, AugmentOp, Patch, PatchConfig, Splits, MIN_PATCHES_FOR_SPLIT,
};
pub use qc::{qc_filter_sm, QcThresholds};
pub use resample::{
    aggregate_to_coarse, bilinear_resample, temporal_interp, Aggregator, GapPolicy, Raster, DEFAULT_MAX_GAP_S,
    MIN_VALID_WEIGHT_FRACTION,
};
pub use stations::{
    match_station_to_cell, read_stations_csv, select_stations, write_stations_csv, Exclusion, MatchedStation, Quality,
    SeasonWindow, StationRecord, StationRules, StationSample, BIN_HALF_WIDTH_S,
};
pub use stc::{load_cube, load_field, save_cube, save_field, save_field_named, Dtype};
