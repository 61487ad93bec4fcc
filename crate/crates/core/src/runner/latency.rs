use rayon::prelude::*;

use super::{thread_budget, Cell, Report, RunnerError, ScenarioConfig, Table};
use crate::pon::{max_span_meeting_deadline, LatencyModels, LatencySummary, LoadPoint, LoopMode, LoopSpec};

pub const STATISTICS: [&str; 3] = ["mean", "p95", "p99"];

fn pool() -> Result<rayon::ThreadPool, RunnerError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_budget()?)
        .build()
        .map_err(|e| RunnerError::Io(format!("thread pool: {e}")))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn stat(summary: &LatencySummary, name: &str) -> Option<f64> {
    match name {
        "mean" => Some(summary.mean_us),
        "p95" => summary.p95_us,
        "p99" => summary.p99_us,
        _ => None,
    }
}

/// Round-trip statistics for every (span, load, mode) grid point over all
/// seeds, plus the largest span meeting the deadline per (load, mode).
/// Loads at or above 1 produce saturated rows.
pub fn run_latency_sweep(config: &ScenarioConfig) -> Result<Report, RunnerError> {
    config.validate()?;
    let models = LatencyModels::builtin();
    let model = models.get(&config.model).expect("validated model name");
    let spec = LoopSpec { control: config.traffic.control, loops: config.loops_per_seed };

    let mut jobs = Vec::new();
    for (si, _) in config.span_grid_km.iter().enumerate() {
        for (ri, &rho) in config.load_grid.iter().enumerate() {
            if rho >= 1.0 {
                continue;
            }
            for mode in LoopMode::ALL {
                for &seed in &config.seeds {
                    jobs.push((si, ri, mode, seed));
                }
            }
        }
    }
    let mut crossing_jobs = Vec::new();
    for (ri, &rho) in config.load_grid.iter().enumerate() {
        if rho < 1.0 {
            for mode in LoopMode::ALL {
                crossing_jobs.push((ri, mode));
            }
        }
    }

    let pool = pool()?;
    let results: Vec<LatencySummary> = pool.install(|| {
        jobs.par_iter()
            .map(|&(si, ri, mode, seed)| {
                let cfg = config.pon.with_span(config.span_grid_km[si]);
                model.round_trip(&cfg, LoadPoint::new(config.load_grid[ri])?, mode, &spec, seed)
            })
            .collect::<Result<_, _>>()
    })?;
    let crossings: Vec<f64> = pool.install(|| {
        crossing_jobs
            .par_iter()
            .map(|&(ri, mode)| {
                let load = LoadPoint::new(config.load_grid[ri])?;
                max_span_meeting_deadline(model, &config.pon, load, config.deadline_us, mode, &spec, config.seeds[0])
            })
            .collect::<Result<_, _>>()
    })?;

    let mut latency = Table::new("latency", &["span_km", "rho", "mode", "statistic", "value_us", "status"]);
    let mut per_seed = Table::new("per_seed", &["span_km", "rho", "mode", "seed", "mean_us", "p95_us", "p99_us", "status"]);
    let mut next = 0;
    for &span in &config.span_grid_km {
        for &rho in &config.load_grid {
            for mode in LoopMode::ALL {
                let key = |extra: Vec<Cell>| {
                    let mut row = vec![Cell::from(span), Cell::from(rho), Cell::from(mode.as_str())];
                    row.extend(extra);
                    row
                };
                if rho >= 1.0 {
                    for s in STATISTICS {
                        latency.push(key(vec![s.into(), Cell::Empty, "saturated".into()]));
                    }
                    for &seed in &config.seeds {
                        per_seed.push(key(vec![seed.into(), Cell::Empty, Cell::Empty, Cell::Empty, "saturated".into()]));
                    }
                    continue;
                }
                let runs = &results[next..next + config.seeds.len()];
                next += config.seeds.len();
                for (summary, &seed) in runs.iter().zip(&config.seeds) {
                    per_seed.push(key(vec![
                        seed.into(),
                        summary.mean_us.into(),
                        summary.p95_us.into(),
                        summary.p99_us.into(),
                        "ok".into(),
                    ]));
                }
                for s in STATISTICS {
                    let values: Option<Vec<f64>> = runs.iter().map(|r| stat(r, s)).collect();
                    match values {
                        Some(v) => latency.push(key(vec![s.into(), mean(v.into_iter()).into(), "ok".into()])),
                        None => latency.push(key(vec![s.into(), Cell::Empty, "unavailable".into()])),
                    }
                }
            }
        }
    }

    let mut crossing = Table::new("crossings", &["rho", "mode", "deadline_us", "max_span_km", "seed", "status"]);
    let mut next = 0;
    for &rho in &config.load_grid {
        for mode in LoopMode::ALL {
            let lead = vec![Cell::from(rho), Cell::from(mode.as_str()), Cell::from(config.deadline_us)];
            let mut row = lead;
            if rho >= 1.0 {
                row.extend([Cell::Empty, Cell::Empty, "saturated".into()]);
            } else {
                row.extend([crossings[next].into(), config.seeds[0].into(), "ok".into()]);
                next += 1;
            }
            crossing.push(row);
        }
    }

    Ok(Report {
        scenario: config.name.clone(),
        tables: vec![latency, per_seed, crossing],
        provenance: config.provenance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            load_grid: vec![0.3, 1.2],
            span_grid_km: vec![10.0],
            seeds: vec![1, 2],
            loops_per_seed: 200,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn one_row_per_grid_point_and_statistic() {
        let r = run_latency_sweep(&small()).unwrap();
        let t = r.table("latency").unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * 3);
        assert_eq!(t.select(&[("rho", "1.200"), ("status", "saturated")]).len(), 6);
        assert_eq!(r.table("per_seed").unwrap().rows.len(), 2 * 2 * 2);
        assert_eq!(r.table("crossings").unwrap().rows.len(), 4);
    }

    #[test]
    fn analytical_percentiles_unavailable() {
        let cfg = ScenarioConfig { model: "analytical".into(), ..small() };
        let r = run_latency_sweep(&cfg).unwrap();
        let t = r.table("latency").unwrap();
        assert_eq!(t.select(&[("rho", "0.300"), ("statistic", "p95")])[0][5], Cell::from("unavailable"));
    }
}
