pub mod dataset;
pub mod fits;
pub mod metrics;
pub mod netspec;
pub mod nn;
pub mod par;
pub mod preprocess;
pub mod runtime;
