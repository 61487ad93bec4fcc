use rayon::prelude::*;

use super::{thread_budget, Report, RunnerError, ScenarioConfig, Table};
use crate::glad::{
    aggregate_global, iterations_to_target, onboarding_trace, pool_profile, run_savings_sweep_with, upload_profile,
    GlobalRegistry, LocalAiState, Machine, OnboardingStrategies, SweepOutcome,
};
use crate::haptic::{
    alpha_accuracy_shared, estimate_tau, generate_session, max_abs_error, optimize_alpha_shared, ForecasterState,
    HapticSample, ObjectProfile, SessionParams, WindowedAccuracy,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AdditionEvent {
    pub iteration: usize,
    /// Machines served after the addition.
    pub machines: usize,
    pub accuracy_before: f64,
    pub accuracy_at: f64,
    /// Lowest windowed accuracy until the next addition.
    pub trough: f64,
    pub similarity: Option<f64>,
}

impl AdditionEvent {
    pub fn drop(&self) -> f64 {
        self.accuracy_before - self.accuracy_at
    }
}

/// Local AI accuracy as machines join, one entry per forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub machines: Vec<usize>,
    pub windowed: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub additions: Vec<AdditionEvent>,
}

fn machine_profile(config: &ScenarioConfig, k: usize, seed: u64) -> ObjectProfile {
    let pool = config.glad.kind_pool_size;
    let mut r = rng::stream_rng(rng::derive_seed(seed, k as u64), rng::streams::POOL);
    let kind = if pool == 1 { 0 } else { ((rng::uniform(&mut r) * pool as f64) as usize).min(pool - 1) };
    pool_profile(kind, k as u32, seed)
}

/// Mean feedback gap in µs; 1 ms when the law has no finite mean.
fn mean_gap(config: &ScenarioConfig) -> f64 {
    config.traffic.feedback.mean().unwrap_or(1e3)
}

fn long_trace(config: &ScenarioConfig, profile: &ObjectProfile, touches: usize, seed: u64) -> Result<Vec<HapticSample>, RunnerError> {
    let session = SessionParams { start_in_grasp: true, ..SessionParams::default() };
    // roughly two thirds of a session is spent in contact at ~1 sample/ms
    let duration = (touches as f64 * 1.6 * mean_gap(config)).max(config.glad.session_us);
    Ok(generate_session(profile, &session, duration, &config.traffic.feedback, seed)?.haptic)
}

/// One Local AI starting with a single converged machine; new machines
/// join under `strategy` once `addition_interval` iterations have passed
/// and the window is back at 1.0 (or `max_settle` more iterations elapsed).
/// Machines are served round-robin, the newcomer first.
pub fn accuracy_timeline(config: &ScenarioConfig, strategy: &str, seed: u64) -> Result<Timeline, RunnerError> {
    config.validate()?;
    let strategies = OnboardingStrategies::builtin();
    let strategy = strategies.get(strategy).expect("validated strategy name");
    let params = &config.glad;
    let study = &config.study;
    let horizon = (study.additions + 2) * study.addition_interval;

    let first = machine_profile(config, 0, seed);
    let warmup = onboarding_trace(&first, params, &config.traffic.feedback, rng::derive_seed(seed, u64::MAX))?;
    let converged = iterations_to_target(&ForecasterState::new(params.onboarding_alpha)?, &warmup, params).state;

    let mut local = LocalAiState::new(0);
    local.add_machine(Machine { machine_id: 0, state: converged, profile: first })?;
    let mut traces = vec![long_trace(config, &first, horizon, rng::derive_seed(seed, 0))?];
    let mut cursor = vec![0usize];
    let mut uploaded = 0usize;
    let mut registry = GlobalRegistry::new();

    let mut window = WindowedAccuracy::new(params.window);
    let mut hits = 0usize;
    let mut tl = Timeline { machines: vec![], windowed: vec![], cumulative: vec![], additions: vec![] };
    let mut rr = 0usize;
    let mut since = 0usize;
    let mut i = 0usize;

    loop {
        let settled = window.is_full() && window.accuracy() == 1.0;
        let due = since >= study.addition_interval && (settled || since >= study.addition_interval + study.max_settle);
        if due && tl.additions.len() == study.additions {
            break;
        }
        let mut addition = None;
        if due {
            while uploaded < local.machine_count() {
                upload_profile(&local, uploaded as u32, &mut registry, params)?;
                uploaded += 1;
            }
            registry = aggregate_global(&registry)?;
            let k = local.machine_count();
            let profile = machine_profile(config, k, seed);
            let desc = crate::glad::Descriptor::of(&profile, params);
            let (estimate, similarity) = strategy.initial_estimate(&desc, &registry, params);
            let state = ForecasterState::with_estimate(estimate, params.onboarding_alpha)?;
            local.add_machine(Machine { machine_id: k as u32, state, profile })?;
            traces.push(long_trace(config, &profile, horizon, rng::derive_seed(seed, k as u64))?);
            cursor.push(0);
            rr = k;
            since = 0;
            addition = Some((window.accuracy(), similarity));
        }

        let m = rr % local.machine_count();
        let trace = &traces[m];
        let obs = trace[cursor[m] % trace.len()];
        cursor[m] += 1;
        let estimate = local.machines()[m].state.profile_estimate;
        let hit = max_abs_error(&estimate, &obs.amplitude) <= params.epsilon;
        local.observe(m as u32, &obs)?;
        window.push(hit);
        hits += usize::from(hit);
        i += 1;
        since += 1;
        rr = m + 1;

        let acc = window.accuracy();
        tl.machines.push(local.machine_count());
        tl.windowed.push(acc);
        tl.cumulative.push(hits as f64 / i as f64);
        if let Some((before, similarity)) = addition {
            tl.additions.push(AdditionEvent {
                iteration: i,
                machines: local.machine_count(),
                accuracy_before: before,
                accuracy_at: acc,
                trough: acc,
                similarity,
            });
        }
        if let Some(last) = tl.additions.last_mut() {
            last.trough = last.trough.min(acc);
        }
    }
    Ok(tl)
}

fn alpha_cell(config: &ScenarioConfig, machines: usize, noise: f64, seed: u64) -> Result<(f64, f64, f64), RunnerError> {
    let per = (config.study.profiling_samples / machines).max(1);
    let session = SessionParams { amplitude_noise: noise, ..SessionParams::default() };
    let duration = (per as f64 * 2.5 * mean_gap(config)).max(1e6);
    let mut traces = Vec::with_capacity(machines);
    for k in 0..machines {
        let profile = machine_profile(config, k, seed);
        let s = generate_session(&profile, &session, duration, &config.traffic.feedback, rng::derive_seed(seed, k as u64))?;
        traces.push(s.haptic.into_iter().take(per).collect::<Vec<_>>());
    }
    let refs: Vec<&[HapticSample]> = traces.iter().map(Vec::as_slice).collect();
    let mut tau = 0.0;
    for t in &refs {
        tau += estimate_tau(t)? / machines as f64;
    }
    let eps = config.glad.epsilon;
    let alpha = optimize_alpha_shared(&refs, &config.glad.alpha_grid, eps)?;
    let acc = alpha_accuracy_shared(&refs, alpha, eps)?;
    Ok((tau, alpha, acc))
}

/// Accuracy timelines per onboarding strategy, the savings sweep over all
/// seeds, and the alpha table over machines served and feedback noise.
pub fn run_onboarding_study(config: &ScenarioConfig) -> Result<Report, RunnerError> {
    config.validate()?;
    let seed = config.seeds[0];
    let params = &config.glad;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_budget()?)
        .build()
        .map_err(|e| RunnerError::Io(format!("thread pool: {e}")))?;

    let timelines: Vec<Timeline> = pool.install(|| {
        config.study.modes.par_iter().map(|m| accuracy_timeline(config, m, seed)).collect::<Result<_, _>>()
    })?;
    let mut accuracy = Table::new("accuracy", &["mode", "iteration", "machines", "windowed_accuracy", "cumulative_accuracy"]);
    let mut additions = Table::new(
        "additions",
        &["mode", "addition", "iteration", "machines", "accuracy_before", "accuracy_at", "drop", "trough", "similarity"],
    );
    for (mode, tl) in config.study.modes.iter().zip(&timelines) {
        for i in 0..tl.windowed.len() {
            accuracy.push(vec![
                mode.as_str().into(),
                (i + 1).into(),
                tl.machines[i].into(),
                tl.windowed[i].into(),
                tl.cumulative[i].into(),
            ]);
        }
        for (n, a) in tl.additions.iter().enumerate() {
            additions.push(vec![
                mode.as_str().into(),
                (n + 1).into(),
                a.iteration.into(),
                a.machines.into(),
                a.accuracy_before.into(),
                a.accuracy_at.into(),
                a.drop().into(),
                a.trough.into(),
                a.similarity.into(),
            ]);
        }
    }

    let sweeps: Vec<SweepOutcome> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&s| run_savings_sweep_with(params.total_machines, params.kind_pool_size, s, params, &config.traffic.feedback))
            .collect::<Result<_, _>>()
    })?;
    let mut savings = Table::new("savings", &["machines_present", "mean_saved_pct"]);
    for j in 0..params.total_machines {
        let m = sweeps.iter().map(|s| s.curve[j].1).sum::<f64>() / sweeps.len() as f64;
        savings.push(vec![sweeps[0].curve[j].0.into(), m.into()]);
    }
    let mut runs = Table::new(
        "savings_runs",
        &["seed", "machine_id", "local_ai", "machines_present", "t_cold", "t_warm", "saved_pct", "matched", "converged"],
    );
    for (&s, sweep) in config.seeds.iter().zip(&sweeps) {
        for r in &sweep.records {
            runs.push(vec![
                s.into(),
                r.machine_id.into(),
                r.local_ai.into(),
                r.machines_present.into(),
                r.t_cold.into(),
                r.t_warm.into(),
                r.saved_pct.into(),
                r.matched.into(),
                r.converged.into(),
            ]);
        }
    }

    let cells: Vec<(usize, f64)> = config
        .study
        .alpha_machines
        .iter()
        .flat_map(|&m| config.study.alpha_noise.iter().map(move |&n| (m, n)))
        .collect();
    let alpha_rows: Vec<(f64, f64, f64)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(c, &(m, n))| alpha_cell(config, m, n, rng::derive_seed(seed, 1_000_000 + c as u64)))
            .collect::<Result<_, _>>()
    })?;
    let mut alpha = Table::new("alpha", &["machines", "amplitude_noise", "tau", "alpha_local", "accuracy"]);
    for (&(m, n), &(tau, a, acc)) in cells.iter().zip(&alpha_rows) {
        alpha.push(vec![m.into(), n.into(), tau.into(), a.into(), acc.into()]);
    }

    Ok(Report {
        scenario: config.name.clone(),
        tables: vec![accuracy, additions, savings, runs, alpha],
        provenance: config.provenance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::StudyConfig;

    fn quick() -> ScenarioConfig {
        let mut c = ScenarioConfig { seeds: vec![4], ..ScenarioConfig::default() };
        c.glad.total_machines = 4;
        c.study = StudyConfig { additions: 2, alpha_machines: vec![1, 2], alpha_noise: vec![0.01], ..StudyConfig::default() };
        c
    }

    #[test]
    fn timeline_adds_every_machine() {
        let tl = accuracy_timeline(&quick(), "cold", 4).unwrap();
        assert_eq!(tl.additions.len(), 2);
        assert_eq!(*tl.machines.last().unwrap(), 3);
        assert_eq!(tl.windowed.len(), tl.cumulative.len());
        for a in &tl.additions {
            assert_eq!(a.accuracy_before, 1.0);
            assert!(a.accuracy_at < a.accuracy_before);
            assert!(a.trough <= a.accuracy_at);
        }
    }

    #[test]
    fn study_tables_present() {
        let r = run_onboarding_study(&quick()).unwrap();
        let names: Vec<&str> = r.tables.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["accuracy", "additions", "savings", "savings_runs", "alpha"]);
        assert_eq!(r.table("savings").unwrap().rows.len(), 4);
        assert_eq!(r.table("alpha").unwrap().rows.len(), 2);
        assert_eq!(r.table("additions").unwrap().rows.len(), 4);
    }
}
