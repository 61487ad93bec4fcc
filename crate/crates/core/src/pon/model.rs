use std::collections::BTreeMap;

use super::{LatencySummary, LoadPoint, LoopMode, LoopSpec, PonConfig, PonError};

/// Upper end of the span search.
pub const SPAN_SEARCH_MAX_KM: f64 = 100.0;
pub const SPAN_SEARCH_RESOLUTION_KM: f64 = 0.5;

/// A way of turning a PON configuration and load into closed-loop latency.
pub trait LatencyModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn round_trip(
        &self,
        config: &PonConfig,
        load: LoadPoint,
        mode: LoopMode,
        spec: &LoopSpec,
        seed: u64,
    ) -> Result<LatencySummary, PonError>;
}

/// Name-indexed set of latency evaluators.
pub struct LatencyModels {
    models: BTreeMap<&'static str, Box<dyn LatencyModel>>,
}

impl LatencyModels {
    pub fn empty() -> Self {
        LatencyModels { models: BTreeMap::new() }
    }

    /// `des` and `analytical`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(super::DesModel));
        reg.register(Box::new(super::AnalyticalModel));
        reg
    }

    /// Replaces any model registered under the same name.
    pub fn register(&mut self, model: Box<dyn LatencyModel>) {
        self.models.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Option<&dyn LatencyModel> {
        self.models.get(name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.keys().copied().collect()
    }
}

impl Default for LatencyModels {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Largest span (km, per ONU-OLT side) whose mean round trip meets
/// `deadline_us`, by bisection over `[0, SPAN_SEARCH_MAX_KM]` down to
/// [`SPAN_SEARCH_RESOLUTION_KM`]. Zero when even a collocated network misses
/// the deadline.
pub fn max_span_meeting_deadline(
    model: &dyn LatencyModel,
    config: &PonConfig,
    load: LoadPoint,
    deadline_us: f64,
    mode: LoopMode,
    spec: &LoopSpec,
    seed: u64,
) -> Result<f64, PonError> {
    if !(deadline_us.is_finite() && deadline_us > 0.0) {
        return Err(PonError::InvalidParameter(format!("deadline must be > 0, got {deadline_us}")));
    }
    let meets = |span: f64| -> Result<bool, PonError> {
        let s = model.round_trip(&config.with_span(span), load, mode, spec, seed)?;
        Ok(s.mean_us <= deadline_us)
    };
    if !meets(0.0)? {
        return Ok(0.0);
    }
    if meets(SPAN_SEARCH_MAX_KM)? {
        return Ok(SPAN_SEARCH_MAX_KM);
    }
    let (mut lo, mut hi) = (0.0, SPAN_SEARCH_MAX_KM);
    while hi - lo > SPAN_SEARCH_RESOLUTION_KM {
        let mid = 0.5 * (lo + hi);
        if meets(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
