//! Training loops, evaluation tracking, sweeps and the 2-D geometric demo.

mod config;
mod geometry;
mod log;
mod sweep;
mod train;

pub use config::{Mode, TrainConfig};
pub use geometry::{geometry_demo, GeoConfig, GeoSnapshot, GeoTrace, GEO_TRACE_HEADER};
pub use log::{
    diagnostics_csv, parse_translation_csv, translation_csv, write_atomic, DiagnosticsRow, LogRow, LossLog,
    TranslationRow, DIAGNOSTICS_HEADER, LOSS_LOG_HEADER, TRANSLATION_HEADER,
};
pub use sweep::{
    bottleneck_sweep, dataset_size_sweep, BottleneckRow, SizeRow, SizeSweepReport, BOTTLENECK_REPORT_HEADER,
    SIZE_REPORT_HEADER,
};
pub use train::{load_datasets, train, train_i2i, TrainReport, HELD_OUT_DIVISOR};
