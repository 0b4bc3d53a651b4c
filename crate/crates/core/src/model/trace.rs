use serde::{Deserialize, Serialize};

/// One mutator call, as recorded in run traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub perf_empirical_before: f64,
    pub perf_empirical_after: f64,
    pub bene_size: usize,
    pub neut_size: usize,
    /// `(mutation index, polarity)` of the selected mutant.
    pub chosen: Option<(usize, i8)>,
    pub failed: bool,
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_ht: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf_true_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf_true_after: Option<f64>,
}

impl TraceStep {
    /// True when the selected mutant came from the beneficial set.
    pub fn chose_beneficial(&self) -> bool {
        self.chosen.is_some() && self.bene_size > 0
    }
}
