use crate::glad::{aggregate_global, run_savings_sweep, Descriptor, GladParams, GlobalRegistry, ProfileRecord};
use crate::haptic::{generate_session, label_dataset, train_classifier, ForecasterState, HapticSample, ObjectProfile, SessionParams};
use crate::pon::{
    kingman_wait, simulate_pon_detailed, AnalyticalModel, DesModel, Direction, LatencyModel, LoadPoint, LoopMode, LoopSpec,
    PonConfig,
};
use crate::traffic::{fit_gpd, generate_count, ks_test, GpdParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String), String>;

fn gpd_round_trip() -> Result<(bool, String), String> {
    let p = GpdParams::default();
    let s = generate_count(&p, 5000, 17).map_err(|e| e.to_string())?;
    let gaps = s.inter_arrivals();
    let ks = ks_test(&gaps, &p, 0.05).map_err(|e| e.to_string())?;
    let fit = fit_gpd(&gaps).map_err(|e| e.to_string())?;
    let ok = ks.pass && (fit.shape - p.shape).abs() < 0.1 && (fit.scale_us / p.scale_us - 1.0).abs() < 0.1;
    Ok((ok, format!("D={:.4} crit={:.4} fit shape={:.3} scale={:.1}", ks.statistic, ks.critical, fit.shape, fit.scale_us)))
}

fn idle_des_matches_analytical() -> Result<(bool, String), String> {
    let cfg = PonConfig::default();
    let spec = LoopSpec { loops: 2000, ..LoopSpec::default() };
    let idle = LoadPoint::new(0.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for mode in LoopMode::ALL {
        let des = DesModel.round_trip(&cfg, idle, mode, &spec, 5).map_err(|e| e.to_string())?.mean_us;
        let ana = AnalyticalModel.round_trip(&cfg, idle, mode, &spec, 5).map_err(|e| e.to_string())?.mean_us;
        worst = worst.max((des / ana - 1.0).abs());
    }
    Ok((worst < 0.05, format!("worst relative gap {worst:.4}")))
}

fn with_ai_is_faster() -> Result<(bool, String), String> {
    let cfg = PonConfig::default();
    let spec = LoopSpec { loops: 1000, ..LoopSpec::default() };
    let load = LoadPoint::new(0.6).map_err(|e| e.to_string())?;
    let no = DesModel.round_trip(&cfg, load, LoopMode::NoAi, &spec, 3).map_err(|e| e.to_string())?.mean_us;
    let with = DesModel.round_trip(&cfg, load, LoopMode::WithAi, &spec, 3).map_err(|e| e.to_string())?.mean_us;
    Ok((with < no, format!("with_ai {with:.1} us, no_ai {no:.1} us")))
}

fn downstream_kingman() -> Result<(bool, String), String> {
    let cfg = PonConfig::default();
    let stream = generate_count(&GpdParams::default(), 3000, 9).map_err(|e| e.to_string())?;
    let load = LoadPoint::new(0.5).map_err(|e| e.to_string())?;
    let st = simulate_pon_detailed(&cfg, load, Direction::Downstream, &stream, 9).map_err(|e| e.to_string())?.stats;
    let k = kingman_wait(
        st.downstream_utilization(),
        st.downstream_scv_interarrival,
        st.downstream_scv_service,
        st.downstream_mean_service_us,
    )
    .map_err(|e| e.to_string())?;
    let ratio = st.downstream_mean_wait_us / k;
    Ok(((ratio - 1.0).abs() <= 0.2, format!("simulated/Kingman = {ratio:.3}")))
}

fn forecaster_contracts() -> Result<(bool, String), String> {
    let mut s = ForecasterState::new(0.25).map_err(|e| e.to_string())?;
    let obs = HapticSample { t_us: 0.0, amplitude: [0.8; 5] };
    let mut gap = 0.8;
    let mut ok = true;
    for _ in 0..20 {
        s = s.update(&obs);
        let next = (s.profile_estimate[0] - 0.8).abs();
        ok &= (next - 0.75 * gap).abs() < 1e-12;
        gap = next;
    }
    Ok((ok, format!("gap after 20 updates {gap:.2e}")))
}

fn weighted_aggregation() -> Result<(bool, String), String> {
    let d = Descriptor::of(&ObjectProfile::rubber_ball(0), &GladParams::default());
    let mut reg = GlobalRegistry::new();
    for (v, n) in [(0.2, 100), (0.6, 300)] {
        reg.insert(ProfileRecord { descriptor: d, profile_estimate: [v; 5], sample_count: n, source_local_ai: 0 })
            .map_err(|e| e.to_string())?;
    }
    let agg = aggregate_global(&reg).map_err(|e| e.to_string())?;
    let e = agg.records(&d)[0].profile_estimate[0];
    Ok(((e - 0.5).abs() < 1e-12 && agg.version() > reg.version(), format!("aggregated estimate {e:.4}")))
}

fn classifier_separates() -> Result<(bool, String), String> {
    let p = ObjectProfile::rubber_ball(0);
    let s = generate_session(&p, &SessionParams::default(), 4e6, &GpdParams::default(), 21).map_err(|e| e.to_string())?;
    let (_, acc) = train_classifier(&label_dataset(&s.control, &p), 0.7, p.center, 21).map_err(|e| e.to_string())?;
    Ok((acc >= 0.95, format!("validation accuracy {acc:.4} over {} samples", s.control.len())))
}

fn warm_not_slower() -> Result<(bool, String), String> {
    let out = run_savings_sweep(6, 1, 2, &GladParams::default()).map_err(|e| e.to_string())?;
    let ok = out.records.iter().all(|r| r.t_warm <= r.t_cold);
    Ok((ok, format!("matched mean saved {:.1}%", out.matched_mean_saved().unwrap_or(0.0))))
}

const CHECKS: [(&str, Check); 8] = [
    ("gpd_sample_fit_ks", gpd_round_trip),
    ("idle_des_matches_analytical", idle_des_matches_analytical),
    ("with_ai_below_no_ai", with_ai_is_faster),
    ("downstream_kingman_agreement", downstream_kingman),
    ("forecaster_contraction", forecaster_contracts),
    ("weighted_aggregation", weighted_aggregation),
    ("classifier_sanity", classifier_separates),
    ("warm_start_not_slower", warm_not_slower),
];

/// Fast self-test of the installation.
pub fn run_validation() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| match check() {
            Ok((pass, detail)) => CheckOutcome { name, pass, detail },
            Err(detail) => CheckOutcome { name, pass: false, detail },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_validation() {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }
}
