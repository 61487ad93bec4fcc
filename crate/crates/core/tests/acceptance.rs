//! Acceptance criteria. Runs as a plain binary so every criterion reports a
//! line even when an earlier one fails.

use std::cell::Cell as Counter;
use std::time::Instant;

use gladsim::glad::{run_savings_sweep, GladParams};
use gladsim::haptic::{generate_session, train_classifier, ObjectProfile, SessionParams};
use gladsim::pon::{simulate_pon_detailed, Direction, LoadPoint, PonConfig};
use gladsim::runner::{
    accuracy_timeline, export_report, run_latency_sweep, run_onboarding_study, Cell, Format, Report, ScenarioConfig, StudyConfig,
};
use gladsim::traffic::{generate_count, GpdParams};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn value(row: &[Cell], i: usize) -> f64 {
    row[i].as_f64().expect("numeric cell")
}

fn latency_mean(report: &Report, span: f64, rho: f64, mode: &str) -> f64 {
    let t = report.table("latency").unwrap();
    let span = format!("{span:.3}");
    let rho = format!("{rho:.3}");
    let row = t
        .select(&[("span_km", &span), ("rho", &rho), ("mode", mode), ("statistic", "mean")])
        .first()
        .copied()
        .expect("grid row present");
    value(row, t.column("value_us").unwrap())
}

fn crossing_harness() -> Report {
    let cfg = ScenarioConfig { span_grid_km: vec![20.0, 30.0], load_grid: vec![0.8, 0.9], ..ScenarioConfig::default() };
    assert_eq!(cfg.seeds.len(), 10);
    run_latency_sweep(&cfg).expect("latency sweep")
}

fn latency_no_ai(report: &Report) -> Outcome {
    let m = latency_mean(report, 20.0, 0.9, "no_ai");
    ensure(m > 1000.0, format!("no_ai mean at 20 km, rho 0.9 = {m:.1} us (need > 1000)"))
}

fn latency_with_ai(report: &Report) -> Outcome {
    let m = latency_mean(report, 30.0, 0.8, "with_ai");
    let t = report.table("crossings").unwrap();
    let row = t.select(&[("rho", "0.800"), ("mode", "with_ai")])[0];
    let span = value(row, t.column("max_span_km").unwrap());
    ensure(
        m <= 1000.0 && span >= 30.0,
        format!("with_ai mean at 30 km, rho 0.8 = {m:.1} us (need <= 1000); max span {span:.1} km (need >= 30)"),
    )
}

fn with_ai_dominance() -> Outcome {
    let cfg = ScenarioConfig::default();
    let report = run_latency_sweep(&cfg).map_err(|e| e.to_string())?;
    let t = report.table("per_seed").unwrap();
    let (span_i, rho_i, mode_i, seed_i, mean_i) = (
        t.column("span_km").unwrap(),
        t.column("rho").unwrap(),
        t.column("mode").unwrap(),
        t.column("seed").unwrap(),
        t.column("mean_us").unwrap(),
    );
    let mut pairs = 0;
    let mut violations = Vec::new();
    for no in t.rows.iter().filter(|r| r[mode_i].as_str() == Some("no_ai")) {
        let with = t
            .rows
            .iter()
            .find(|r| {
                r[mode_i].as_str() == Some("with_ai")
                    && r[span_i] == no[span_i]
                    && r[rho_i] == no[rho_i]
                    && r[seed_i] == no[seed_i]
            })
            .expect("paired row");
        pairs += 1;
        if value(with, mean_i) >= value(no, mean_i) {
            violations.push(format!("{:?}", &no[..4]));
        }
    }
    let expected = cfg.span_grid_km.len() * cfg.load_grid.len() * cfg.seeds.len();
    ensure(
        violations.is_empty() && pairs == expected,
        format!("{pairs}/{expected} (span, rho, seed) pairs checked, {} violations {:?}", violations.len(), violations),
    )
}

/// Closed-form GPD CDF, written independently of the library.
fn gpd_cdf(x: f64, shape: f64, scale: f64, loc: f64) -> f64 {
    let z = ((x - loc) / scale).max(0.0);
    if shape.abs() < 1e-12 {
        1.0 - (-z).exp()
    } else {
        let base = 1.0 + shape * z;
        if base <= 0.0 {
            1.0
        } else {
            1.0 - base.powf(-1.0 / shape)
        }
    }
}

fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

fn traffic_law() -> Outcome {
    let p = GpdParams::default();
    let n = 2000;
    let critical = (-(0.05f64 / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt();
    let mut passes = 0;
    for seed in 0..100 {
        let mut gaps = generate_count(&p, n, seed).map_err(|e| e.to_string())?.inter_arrivals();
        let d = ks_statistic(&mut gaps, |x| gpd_cdf(x, p.shape, p.scale_us, p.location_us));
        if d <= critical {
            passes += 1;
        }
    }
    ensure(passes >= 90, format!("{passes}/100 streams pass KS at 5% (need >= 90)"))
}

fn kingman_agreement() -> Outcome {
    let cfg = PonConfig::default();
    let stream = generate_count(&GpdParams::default(), 20_000, 41).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for i in 1..=7 {
        let rho = i as f64 / 10.0;
        let load = LoadPoint::new(rho).map_err(|e| e.to_string())?;
        let s = simulate_pon_detailed(&cfg, load, Direction::Downstream, &stream, 41).map_err(|e| e.to_string())?.stats;
        let util = s.downstream_mean_service_us / s.downstream_mean_interarrival_us;
        let kingman = util / (1.0 - util) * (s.downstream_scv_interarrival + s.downstream_scv_service) / 2.0
            * s.downstream_mean_service_us;
        let ratio = s.downstream_mean_wait_us / kingman;
        ok &= (ratio - 1.0).abs() <= 0.2;
        detail.push(format!("{rho:.1}:{ratio:.3}"));
    }
    ensure(ok, format!("simulated/Kingman mean wait per rho [{}] (need within 20%)", detail.join(" ")))
}

fn accuracy_decay() -> Outcome {
    let cfg = ScenarioConfig::default();
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 16, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let checked = Counter::new(0usize);
    let result = runner.run(&(0u64..1_000_000), |seed| {
        let cold = accuracy_timeline(&cfg, "cold", seed).unwrap();
        let glad = accuracy_timeline(&cfg, "glad", seed).unwrap();
        proptest::prop_assert_eq!(cold.additions.len(), cfg.study.additions);
        proptest::prop_assert_eq!(cold.additions[0].accuracy_before, 1.0, "seed {}", seed);
        proptest::prop_assert!(cold.windowed[..cold.additions[0].iteration - 1].contains(&1.0));
        for (c, g) in cold.additions.iter().zip(&glad.additions) {
            proptest::prop_assert!(c.accuracy_at < c.accuracy_before, "seed {} cold {:?}", seed, c);
            proptest::prop_assert!(g.drop() <= c.drop(), "seed {} glad {:?} cold {:?}", seed, g, c);
        }
        checked.set(checked.get() + 1);
        Ok(())
    });
    let msg = format!("{} seeded timelines: 1.0 before first addition, strict cold drop, glad drop <= cold drop", checked.get());
    match result {
        Ok(()) => Ok(msg),
        Err(e) => Err(format!("{msg}; counterexample: {e}")),
    }
}

fn training_time_saved() -> Outcome {
    let params = GladParams::default();
    let mut means = Vec::new();
    let mut problems = Vec::new();
    for seed in 0..30 {
        let out = run_savings_sweep(params.total_machines, 1, seed, &params).map_err(|e| e.to_string())?;
        let matched: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.matched)
            .map(|r| 100.0 * (1.0 - r.t_warm as f64 / r.t_cold as f64))
            .collect();
        means.push(matched.iter().sum::<f64>() / matched.len() as f64);
        if let Some(r) = out.records.iter().find(|r| r.t_warm > r.t_cold) {
            problems.push(format!("seed {seed}: T_warm {} > T_cold {}", r.t_warm, r.t_cold));
        }
        if out.curve.windows(2).any(|w| w[1].1 < w[0].1) {
            problems.push(format!("seed {seed}: savings curve decreases"));
        }
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    ensure(
        (mean - 72.0).abs() <= 10.0 && problems.is_empty(),
        format!("mean saved {mean:.2}% over 30 seeds (need 72 +/- 10); {} property violations {:?}", problems.len(), problems),
    )
}

fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let mut cfg = ScenarioConfig {
        name: "determinism".into(),
        span_grid_km: vec![10.0, 25.0],
        load_grid: vec![0.5, 0.9, 1.0],
        seeds: vec![3, 4],
        loops_per_seed: 400,
        ..ScenarioConfig::default()
    };
    cfg.glad.total_machines = 6;
    cfg.study = StudyConfig { additions: 2, alpha_machines: vec![1, 4], ..StudyConfig::default() };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Json] {
            let sub = dir.path().join(format!("{format:?}"));
            export_report(&run_latency_sweep(&cfg).map_err(|e| e.to_string())?, &sub.join("latency"), format)
                .map_err(|e| e.to_string())?;
            export_report(&run_onboarding_study(&cfg).map_err(|e| e.to_string())?, &sub.join("onboarding"), format)
                .map_err(|e| e.to_string())?;
        }
        let mut all = Vec::new();
        for sub in ["Csv/latency", "Csv/onboarding", "Json/latency", "Json/onboarding"] {
            all.extend(snapshot(&dir.path().join(sub)));
        }
        runs.push(all);
    }
    ensure(runs[0] == runs[1] && !runs[0].is_empty(), format!("{} report files byte-identical across re-runs", runs[0].len()))
}

fn classifier_sanity() -> Outcome {
    let p = ObjectProfile::rubber_ball(0);
    let s = generate_session(&p, &SessionParams::default(), 13e6, &GpdParams::default(), 2024).map_err(|e| e.to_string())?;
    if s.control.len() < 12_000 {
        return Err(format!("session produced only {} samples", s.control.len()));
    }
    let data: Vec<_> = s.control[..12_000]
        .iter()
        .map(|c| {
            let d2: f64 = c.hand_pos.iter().zip(p.center).map(|(a, b)| (a - b) * (a - b)).sum();
            (*c, d2.sqrt() <= p.extent)
        })
        .collect();
    let touches = data.iter().filter(|d| d.1).count();
    let (_, acc) = train_classifier(&data, 0.7, p.center, 2024).map_err(|e| e.to_string())?;
    ensure(acc >= 0.95, format!("validation accuracy {acc:.4} on 12000 samples ({touches} touch), 70/30 split (need >= 0.95)"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n} {name}: PASS ({secs:.1}s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {msg}");
            }
        }
    };

    let t = Instant::now();
    let harness = crossing_harness();
    let shared = t.elapsed();
    report(1, "latency_crossing_no_ai", t, latency_no_ai(&harness));
    let t = Instant::now() - shared;
    report(2, "latency_crossing_with_ai", t, latency_with_ai(&harness));
    report(3, "with_ai_dominance", Instant::now(), with_ai_dominance());
    report(4, "traffic_law_ks", Instant::now(), traffic_law());
    report(5, "des_kingman_agreement", Instant::now(), kingman_agreement());
    report(6, "accuracy_decay", Instant::now(), accuracy_decay());
    report(7, "training_time_saved", Instant::now(), training_time_saved());
    report(8, "determinism", Instant::now(), determinism());
    report(9, "classifier_sanity", Instant::now(), classifier_sanity());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
