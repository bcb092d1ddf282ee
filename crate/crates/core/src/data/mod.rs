mod clean;
pub mod dataset;
mod gbrt;
mod prepare;
mod scaler;
mod select;
mod split;
mod window;

pub use clean::{clean, BadSamplePolicy, CleanPolicy, NegativePolicy, RepairCause, RepairLog};
pub use dataset::{TimeSeriesDataset, QUALITY_BAD, QUALITY_GOOD};
pub use gbrt::{gain_importance, BoostConfig};
pub use scaler::ScalerStats;
pub use select::{
    append_time_features, pearson, pearson_rank, select_time_features, Correlation, TimeEncoding,
    TimeFeatureConfig, TimeFeatureSelection,
};
pub use split::{SplitRanges, SplitSpec};
pub use window::{make_windows, WindowSet, WindowedSample};
pub use prepare::{preprocess, selected_encodings, Part, PreprocessConfig, PreprocessSummary, Prepared};
