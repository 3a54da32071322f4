//! Per-iteration convergence records shared by all stages.

/// One row of the run history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub stage: u8,
    pub iteration: usize,
    pub compliance: f64,
    /// Material volume over the allowed volume.
    pub volume_ratio: f64,
}
