//! Machine ABX phone discrimination over DTW-aligned segments, scored per
//! condition cell.

mod distance;
mod repfile;
mod report;
mod score;
mod segments;

pub use distance::{angular_distance, dtw_divergence, dtw_unit, unit_frames};
pub use repfile::{read_rep, write_rep, REP_MAGIC, REP_VERSION};
pub use report::{comparison_table, AbxReport, ConditionResult};
pub use score::{abx_error, aggregate, evaluate, AbxOptions, CellScore, Condition, ContextMode, SpeakerMode, Weighting};
pub use segments::{extract_segments, Segment};
