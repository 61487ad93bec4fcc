//! Closed-form mean round trip.
//!
//! Downstream waiting is Kingman's G/G/1 formula for Poisson background
//! packets of fixed size (exact for that M/D/1 case). Upstream adds half a
//! DBA cycle of report wait, the mean slot offset behind the ONUs served
//! earlier in the cycle, and a Kingman estimate of the ONU's own backlog
//! with the fair-share cap as its service capacity.

use super::{
    kingman_wait, tx_us, LatencyModel, LatencySummary, LoadPoint, LoopMode, LoopSpec, PonConfig, PonError,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticalModel;

/// Mean one-way upstream latency excluding the wireless hop.
pub fn upstream_mean_us(config: &PonConfig, load: LoadPoint) -> Result<f64, PonError> {
    let rho = load.rho();
    let n = config.split_ratio as f64;
    let cap = config.fair_share_bytes() as f64;
    let rate = config.upstream_rate_bps;
    let report_wait = config.dba_cycle_us / 2.0;
    let slot_offset = (n - 1.0) / 2.0 * rho * cap * 8.0 / rate * 1e6;
    let bg = config.background_packet_bytes as f64;
    let effective_service = config.dba_cycle_us * bg / cap;
    let backlog = kingman_wait(rho, 1.0, 0.0, effective_service)?;
    Ok(report_wait + slot_offset + backlog + tx_us(config.packet_bytes as u64, rate) + config.propagation_us())
}

/// Mean one-way downstream latency excluding the wireless hop.
pub fn downstream_mean_us(config: &PonConfig, load: LoadPoint) -> Result<f64, PonError> {
    let rate = config.downstream_rate_bps;
    let service = tx_us(config.background_packet_bytes as u64, rate);
    let wait = kingman_wait(load.rho(), 1.0, 0.0, service)?;
    Ok(wait + tx_us(config.packet_bytes as u64, rate) + config.propagation_us())
}

impl LatencyModel for AnalyticalModel {
    fn name(&self) -> &'static str {
        "analytical"
    }

    fn round_trip(
        &self,
        config: &PonConfig,
        load: LoadPoint,
        mode: LoopMode,
        _spec: &LoopSpec,
        _seed: u64,
    ) -> Result<LatencySummary, PonError> {
        config.validate()?;
        let up = upstream_mean_us(config, load)? + config.wireless_hop_us;
        let down = downstream_mean_us(config, load)? + config.wireless_hop_us;
        let mean_us = match mode {
            LoopMode::NoAi => 2.0 * (up + down),
            LoopMode::WithAi => up + config.ai_inference_us + down,
        };
        Ok(LatencySummary { mean_us, p95_us: None, p99_us: None, loops: 0 })
    }
}
