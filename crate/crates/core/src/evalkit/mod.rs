//! Stream evaluation: Hungarian assignment, Strict/Greedy clustering
//! accuracy with All/Old/New splits, and category-count error.

mod hungarian;
mod metrics;

pub use hungarian::{hungarian, AssignmentResult};
pub use metrics::{
    count_error, evaluate, greedy_acc, strict_acc, AccuracySplit, CategoryMap, EvalReport,
    StreamResult,
};
