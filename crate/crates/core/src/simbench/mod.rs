//! Synthetic benchmark: the pick task, an oracle teacher, rolling metrics and
//! the experiment runner.

mod experiment;
mod metrics;
mod task;
mod teacher;

pub use experiment::*;
pub use metrics::*;
pub use task::*;
pub use teacher::*;
