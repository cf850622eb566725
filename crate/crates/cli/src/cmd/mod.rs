pub mod analyze;
pub mod bench;
pub mod eval;
pub mod preprocess;
pub mod split;
pub mod synth;
pub mod train;

/// The JSON report plus the command's final status. A command that ran to
/// completion but saw per-item failures returns its report with an error.
pub type Outcome = anyhow::Result<(serde_json::Value, anyhow::Result<()>)>;
