pub mod backend;
pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod model_math;
pub mod pipeline;
pub mod report;
