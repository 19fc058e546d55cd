//! Alert records emitted when a trace verdict crosses the threshold.

use serde::{Deserialize, Serialize};

use crate::eval::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    /// UTC, ISO-8601.
    pub timestamp: String,
    pub trace_id: String,
    pub score: f64,
    pub threshold: f64,
    pub model_fingerprint: String,
}

/// An alert iff `verdict.score >= threshold`.
pub fn alert_for(
    verdict: &Verdict,
    threshold: f64,
    model_fingerprint: &str,
    timestamp: &str,
) -> Option<AlertRecord> {
    (verdict.score >= threshold).then(|| AlertRecord {
        timestamp: timestamp.to_string(),
        trace_id: verdict.trace_id.clone(),
        score: verdict.score,
        threshold,
        model_fingerprint: model_fingerprint.to_string(),
    })
}
