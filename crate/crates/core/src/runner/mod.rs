//! Scenario configuration, experiment orchestration and report export.

mod checks;
mod latency;
mod onboarding;
mod report;

pub use checks::{run_validation, CheckOutcome};
pub use latency::run_latency_sweep;
pub use onboarding::{accuracy_timeline, run_onboarding_study, AdditionEvent, Timeline};
pub use report::{export_report, Cell, Format, Provenance, Report, Table};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::glad::{GladError, GladParams, OnboardingStrategies};
use crate::haptic::HapticError;
use crate::pon::{LatencyModels, PonConfig, PonError};
use crate::traffic::{GpdParams, TrafficError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Pon(#[from] PonError),
    #[error(transparent)]
    Glad(#[from] GladError),
    #[error(transparent)]
    Haptic(#[from] HapticError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("report output: {0}")]
    Io(String),
}

impl RunnerError {
    pub fn is_config(&self) -> bool {
        matches!(self, RunnerError::Parse(_) | RunnerError::Config { .. })
    }

    fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        RunnerError::Config { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Operator control messages.
    pub control: GpdParams,
    /// Machine feedback samples.
    pub feedback: GpdParams,
}


/// Onboarding study shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Onboarding strategies compared in the accuracy timeline.
    pub modes: Vec<String>,
    /// Machines added after the first.
    pub additions: usize,
    /// Minimum iterations between additions.
    pub addition_interval: usize,
    /// Longest wait past the interval for the window to reach 1.0.
    pub max_settle: usize,
    /// Touch samples per Local AI used to pick alpha.
    pub profiling_samples: usize,
    pub alpha_machines: Vec<usize>,
    pub alpha_noise: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            modes: vec!["cold".into(), "glad".into()],
            additions: 3,
            addition_interval: 1500,
            max_settle: 20_000,
            profiling_samples: 4000,
            alpha_machines: vec![1, 2, 4, 8],
            alpha_noise: vec![0.002, 0.01, 0.03],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Latency evaluator, by registry name.
    pub model: String,
    pub deadline_us: f64,
    pub load_grid: Vec<f64>,
    pub span_grid_km: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Measured loops per (grid point, seed).
    pub loops_per_seed: usize,
    pub pon: PonConfig,
    pub traffic: TrafficConfig,
    pub glad: GladParams,
    pub study: StudyConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            model: "des".into(),
            deadline_us: 1000.0,
            load_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            span_grid_km: (1..=8).map(|i| 5.0 * i as f64).collect(),
            seeds: (1..=10).collect(),
            loops_per_seed: 1112,
            pon: PonConfig::default(),
            traffic: TrafficConfig::default(),
            glad: GladParams::default(),
            study: StudyConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| RunnerError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Lowercase hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(RunnerError::config("name", "must be nonempty [A-Za-z0-9_-]"));
        }
        if LatencyModels::builtin().get(&self.model).is_none() {
            return Err(RunnerError::config("model", format!("unknown model {:?}, known: {:?}", self.model, LatencyModels::builtin().names())));
        }
        if !(self.deadline_us > 0.0) {
            return Err(RunnerError::config("deadline_us", "must be > 0"));
        }
        if self.load_grid.is_empty() {
            return Err(RunnerError::config("load_grid", "must be nonempty"));
        }
        if self.load_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(RunnerError::config("load_grid", "loads must be finite and >= 0"));
        }
        if self.span_grid_km.is_empty() {
            return Err(RunnerError::config("span_grid_km", "must be nonempty"));
        }
        if self.span_grid_km.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(RunnerError::config("span_grid_km", "spans must be finite and >= 0"));
        }
        if self.seeds.is_empty() {
            return Err(RunnerError::config("seeds", "must be nonempty"));
        }
        if self.loops_per_seed == 0 {
            return Err(RunnerError::config("loops_per_seed", "must be > 0"));
        }
        self.pon.check().map_err(|(k, m)| RunnerError::config(format!("pon.{k}"), m))?;
        for (key, p) in [("traffic.control", &self.traffic.control), ("traffic.feedback", &self.traffic.feedback)] {
            p.validate().map_err(|e| RunnerError::config(key, e.to_string()))?;
        }
        self.glad.check().map_err(|(k, m)| RunnerError::config(format!("glad.{k}"), m))?;
        let strategies = OnboardingStrategies::builtin();
        if self.study.modes.is_empty() {
            return Err(RunnerError::config("study.modes", "must be nonempty"));
        }
        if let Some(m) = self.study.modes.iter().find(|m| strategies.get(m).is_none()) {
            return Err(RunnerError::config("study.modes", format!("unknown strategy {m:?}, known: {:?}", strategies.names())));
        }
        if self.study.addition_interval < self.glad.window {
            return Err(RunnerError::config("study.addition_interval", "must be at least glad.window"));
        }
        if self.study.alpha_machines.is_empty() || self.study.alpha_machines.contains(&0) {
            return Err(RunnerError::config("study.alpha_machines", "must be nonempty and positive"));
        }
        if self.study.alpha_noise.is_empty() || self.study.alpha_noise.iter().any(|n| !(*n >= 0.0 && *n < 1.0)) {
            return Err(RunnerError::config("study.alpha_noise", "must be nonempty within [0, 1)"));
        }
        let min_touches = crate::haptic::MIN_TOUCH_SAMPLES_FOR_ALPHA;
        if self.study.profiling_samples < min_touches {
            return Err(RunnerError::config("study.profiling_samples", format!("must be >= {min_touches}")));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }

    fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash(), seeds: self.seeds.clone(), version: VERSION.into() }
    }
}

/// Worker count from `GLADSIM_THREADS`, defaulting to the available cores.
pub fn thread_budget() -> Result<usize, RunnerError> {
    match std::env::var("GLADSIM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(RunnerError::config("GLADSIM_THREADS", format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioConfig::from_toml("[pon]\nsplit_ration = 32\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("split_ration"), "{err}");
    }

    #[test]
    fn invalid_values_are_named() {
        let cases = [
            ("seeds = []", "seeds"),
            ("load_grid = []", "load_grid"),
            ("model = \"fluid\"", "model"),
            ("[pon]\nsplit_ratio = 0", "pon.split_ratio"),
            ("[glad]\nwindow = 0", "glad.window"),
            ("[traffic.control]\nscale_us = -1.0", "traffic.control"),
            ("[study]\nmodes = [\"lukewarm\"]", "study.modes"),
        ];
        for (text, key) in cases {
            match ScenarioConfig::from_toml(text) {
                Err(RunnerError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let b = a.clone().with_seed(99);
        assert_ne!(a.hash(), b.hash());
    }
}
