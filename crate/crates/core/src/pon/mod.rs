//! One-way and closed-loop latency over an XG-PON tree with wireless last
//! hops.
//!
//! Two interchangeable evaluators sit behind [`LatencyModel`]: the
//! discrete-event simulator in [`des`] (ground truth) and the closed-form
//! approximation in [`analytical`]. [`LatencyModels`] maps names to
//! evaluators so a scenario file can pick one.

pub mod analytical;
pub mod des;
mod model;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{GpdParams, TrafficError};

pub use des::{simulate_pon, simulate_pon_detailed, DesModel, QueueStats, SimOutcome};
pub use model::{max_span_meeting_deadline, LatencyModel, LatencyModels, SPAN_SEARCH_MAX_KM, SPAN_SEARCH_RESOLUTION_KM};
pub use analytical::AnalyticalModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PonError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("offered load {rho} saturates the link (must be < 1)")]
    Saturation { rho: f64 },
    #[error("event budget exhausted after {events} events")]
    Resource { events: u64 },
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PonConfig {
    pub downstream_rate_bps: f64,
    pub upstream_rate_bps: f64,
    pub split_ratio: u32,
    /// Feeder plus drop fiber length between an ONU and the OLT.
    pub span_km: f64,
    pub fiber_delay_us_per_km: f64,
    pub dba_cycle_us: f64,
    pub wireless_hop_us: f64,
    pub ai_inference_us: f64,
    pub packet_bytes: u32,
    pub background_packet_bytes: u32,
    /// Upper bound on processed events plus background packets per run.
    pub max_events: u64,
}

impl Default for PonConfig {
    fn default() -> Self {
        PonConfig {
            downstream_rate_bps: 9.953_28e9,
            upstream_rate_bps: 2.488_32e9,
            split_ratio: 16,
            span_km: 20.0,
            fiber_delay_us_per_km: 5.0,
            dba_cycle_us: 125.0,
            wireless_hop_us: 50.0,
            ai_inference_us: 10.0,
            packet_bytes: 128,
            background_packet_bytes: 1250,
            max_events: 400_000_000,
        }
    }
}

impl PonConfig {
    pub fn with_span(&self, span_km: f64) -> Self {
        PonConfig { span_km, ..self.clone() }
    }

    /// Returns the name of the first offending field with the reason.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("downstream_rate_bps", self.downstream_rate_bps),
            ("upstream_rate_bps", self.upstream_rate_bps),
            ("fiber_delay_us_per_km", self.fiber_delay_us_per_km),
            ("dba_cycle_us", self.dba_cycle_us),
            ("wireless_hop_us", self.wireless_hop_us),
            ("ai_inference_us", self.ai_inference_us),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if self.split_ratio < 1 {
            return Err(("split_ratio", "must be >= 1".into()));
        }
        if self.split_ratio < 2 {
            return Err(("split_ratio", "need at least 2 ONUs (operator side and machine side)".into()));
        }
        if !(self.span_km.is_finite() && self.span_km >= 0.0) {
            return Err(("span_km", format!("must be >= 0, got {}", self.span_km)));
        }
        if self.packet_bytes == 0 {
            return Err(("packet_bytes", "must be > 0".into()));
        }
        if self.background_packet_bytes == 0 {
            return Err(("background_packet_bytes", "must be > 0".into()));
        }
        if self.max_events == 0 {
            return Err(("max_events", "must be > 0".into()));
        }
        if self.fair_share_bytes() < 1 {
            return Err(("split_ratio", "cycle too short to give every ONU a byte".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PonError> {
        self.check().map_err(|(k, why)| PonError::InvalidParameter(format!("{k}: {why}")))
    }

    pub fn propagation_us(&self) -> f64 {
        self.span_km * self.fiber_delay_us_per_km
    }

    /// Upstream bytes one DBA cycle can carry.
    pub fn cycle_bytes(&self) -> f64 {
        self.upstream_rate_bps * self.dba_cycle_us * 1e-6 / 8.0
    }

    /// Per-ONU grant cap.
    pub fn fair_share_bytes(&self) -> u64 {
        (self.cycle_bytes() / self.split_ratio as f64).floor() as u64
    }
}

/// Offered load as a fraction of line rate, applied to each direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    rho: f64,
}

impl LoadPoint {
    pub fn new(rho: f64) -> Result<Self, PonError> {
        if rho.is_nan() || rho < 0.0 {
            return Err(PonError::InvalidParameter(format!("load must be >= 0, got {rho}")));
        }
        if rho >= 1.0 {
            return Err(PonError::Saturation { rho });
        }
        Ok(LoadPoint { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upstream,
    Downstream,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Upstream => "upstream",
            Direction::Downstream => "downstream",
        }
    }
}

/// Closed-loop variants: the operator's control reaches the machine and the
/// machine's feedback returns, or the Local AI at the central office answers
/// with a forecast and the machine leg drops out of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    NoAi,
    WithAi,
}

impl LoopMode {
    pub const ALL: [LoopMode; 2] = [LoopMode::NoAi, LoopMode::WithAi];

    pub fn as_str(&self) -> &'static str {
        match self {
            LoopMode::NoAi => "no_ai",
            LoopMode::WithAi => "with_ai",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub wireless: f64,
    pub queueing: f64,
    pub dba_wait: f64,
    pub transmission: f64,
    pub propagation: f64,
    pub processing: f64,
}

impl Components {
    pub fn sum(&self) -> f64 {
        self.wireless + self.queueing + self.dba_wait + self.transmission + self.propagation + self.processing
    }

    pub fn add(&mut self, other: &Components) {
        self.wireless += other.wireless;
        self.queueing += other.queueing;
        self.dba_wait += other.dba_wait;
        self.transmission += other.transmission;
        self.propagation += other.propagation;
        self.processing += other.processing;
    }
}

/// Timing breakdown of one message crossing the PON in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub message_id: u64,
    pub direction: Direction,
    pub components: Components,
    pub total: f64,
}

impl LatencyRecord {
    pub fn new(message_id: u64, direction: Direction, components: Components) -> Self {
        LatencyRecord { message_id, direction, total: components.sum(), components }
    }
}

pub const RECORD_CSV_HEADER: [&str; 9] = [
    "message_id",
    "direction",
    "wireless_us",
    "queueing_us",
    "dba_wait_us",
    "transmission_us",
    "propagation_us",
    "processing_us",
    "total_us",
];

pub fn write_records_csv<W: Write>(records: &[LatencyRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_CSV_HEADER)?;
    for r in records {
        let c = &r.components;
        w.write_record([
            r.message_id.to_string(),
            r.direction.as_str().to_string(),
            format!("{:.6}", c.wireless),
            format!("{:.6}", c.queueing),
            format!("{:.6}", c.dba_wait),
            format!("{:.6}", c.transmission),
            format!("{:.6}", c.propagation),
            format!("{:.6}", c.processing),
            format!("{:.6}", r.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One operator-side closed loop: the sum of its traversals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopRecord {
    pub loop_id: u64,
    pub start_us: f64,
    pub components: Components,
    pub total: f64,
}

/// Loop workload for a round-trip evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    /// Inter-arrival law of the operator's control messages.
    pub control: GpdParams,
    /// Loops kept after warm-up removal.
    pub loops: usize,
}

/// Fraction of leading loops discarded as transient.
pub const WARMUP_FRACTION: f64 = 0.1;
pub const DEFAULT_MEASURED_LOOPS: usize = 10_000;

impl Default for LoopSpec {
    fn default() -> Self {
        LoopSpec { control: GpdParams::default(), loops: DEFAULT_MEASURED_LOOPS }
    }
}

impl LoopSpec {
    /// Loops to simulate so that `loops` remain after warm-up removal.
    pub fn simulated_loops(&self) -> usize {
        (self.loops as f64 / (1.0 - WARMUP_FRACTION)).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean_us: f64,
    /// Absent for evaluators that only produce a mean.
    pub p95_us: Option<f64>,
    pub p99_us: Option<f64>,
    /// Loops the statistics were computed over.
    pub loops: usize,
}

/// Drops the first [`WARMUP_FRACTION`] of loops and summarizes the rest.
pub fn summarize_loops(loops: &[LoopRecord]) -> LatencySummary {
    let skip = (loops.len() as f64 * WARMUP_FRACTION).floor() as usize;
    summarize_totals(loops[skip..].iter().map(|l| l.total).collect())
}

pub fn summarize_totals(mut totals: Vec<f64>) -> LatencySummary {
    if totals.is_empty() {
        return LatencySummary { mean_us: f64::NAN, p95_us: None, p99_us: None, loops: 0 };
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    totals.sort_by(f64::total_cmp);
    LatencySummary {
        mean_us: mean,
        p95_us: Some(nearest_rank(&totals, 0.95)),
        p99_us: Some(nearest_rank(&totals, 0.99)),
        loops: totals.len(),
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn propagation_delay(distance_km: f64, per_km_us: f64) -> Result<f64, PonError> {
    if !(distance_km.is_finite() && distance_km >= 0.0) {
        return Err(PonError::InvalidParameter(format!("distance must be >= 0, got {distance_km}")));
    }
    if !(per_km_us.is_finite() && per_km_us >= 0.0) {
        return Err(PonError::InvalidParameter(format!("per-km delay must be >= 0, got {per_km_us}")));
    }
    Ok(distance_km * per_km_us)
}

/// Serialization time in µs.
pub fn transmission_time(bytes: u64, rate_bps: f64) -> Result<f64, PonError> {
    if bytes == 0 {
        return Err(PonError::InvalidParameter("message size must be > 0 bytes".into()));
    }
    if !(rate_bps.is_finite() && rate_bps > 0.0) {
        return Err(PonError::InvalidParameter(format!("rate must be > 0, got {rate_bps}")));
    }
    Ok(tx_us(bytes, rate_bps))
}

#[inline]
pub(crate) fn tx_us(bytes: u64, rate_bps: f64) -> f64 {
    bytes as f64 * 8.0 / rate_bps * 1e6
}

/// Kingman's G/G/1 mean waiting time.
pub fn kingman_wait(rho: f64, ca2: f64, cs2: f64, mean_service_us: f64) -> Result<f64, PonError> {
    if rho.is_nan() || rho < 0.0 {
        return Err(PonError::InvalidParameter(format!("rho must be >= 0, got {rho}")));
    }
    if rho >= 1.0 {
        return Err(PonError::Saturation { rho });
    }
    if !(ca2 >= 0.0 && cs2 >= 0.0) {
        return Err(PonError::InvalidParameter("squared coefficients of variation must be >= 0".into()));
    }
    if !(mean_service_us.is_finite() && mean_service_us >= 0.0) {
        return Err(PonError::InvalidParameter(format!("mean service must be >= 0, got {mean_service_us}")));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    Ok(rho / (1.0 - rho) * (ca2 + cs2) / 2.0 * mean_service_us)
}
