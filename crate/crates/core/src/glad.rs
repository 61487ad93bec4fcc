//! Global-Local AI coordination: profile upload and aggregation, descriptor
//! matching, cold and warm-started onboarding, and the savings sweep.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haptic::{
    self, generate_session, max_abs_error, Amplitudes, ForecasterState, HapticError, HapticSample, ObjectKind,
    ObjectProfile, SessionParams, WindowedAccuracy, FINGERS,
};
use crate::rng;
use crate::traffic::GpdParams;

pub const MIN_ONBOARDING_TOUCHES: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GladError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("machine {machine_id} has {updates} updates, needs {required}")]
    NotReady { machine_id: u32, updates: u64, required: u64 },
    #[error("unknown machine {0}")]
    UnknownMachine(u32),
    #[error("duplicate machine {0}")]
    DuplicateMachine(u32),
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("trace has {got} touch samples, needs {needed}")]
    ShortTrace { needed: usize, got: usize },
    #[error("registry snapshot: {0}")]
    Snapshot(String),
    #[error("global ai actor stopped")]
    ActorStopped,
    #[error(transparent)]
    Haptic(#[from] HapticError),
}

/// Onboarding and matching knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GladParams {
    pub accuracy_target: f64,
    pub window: usize,
    pub epsilon: f64,
    /// Learning rate of a newly onboarded machine's forecaster.
    pub onboarding_alpha: f64,
    pub min_updates: u64,
    pub match_threshold: f64,
    pub bands: u8,
    /// Upper end of the texture quantization range.
    pub texture_max_hz: f64,
    pub local_ais: usize,
    pub session_us: f64,
    pub kind_pool_size: usize,
    pub total_machines: usize,
    /// One-way Local-Global transport delay.
    pub transport_delay_us: f64,
    pub alpha_grid: Vec<f64>,
}

impl Default for GladParams {
    fn default() -> Self {
        GladParams {
            accuracy_target: 0.95,
            window: 200,
            epsilon: haptic::DEFAULT_EPSILON,
            onboarding_alpha: 0.004,
            min_updates: 200,
            match_threshold: 0.8,
            bands: 10,
            texture_max_hz: 500.0,
            local_ais: 4,
            session_us: 4e6,
            kind_pool_size: 1,
            total_machines: 20,
            transport_delay_us: 5000.0,
            alpha_grid: haptic::default_alpha_grid(),
        }
    }
}

impl GladParams {
    /// Names the offending field on failure.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.accuracy_target) {
            return Err(("accuracy_target", "must lie in (0, 1)".into()));
        }
        if self.window == 0 {
            return Err(("window", "must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(("epsilon", "must be > 0".into()));
        }
        if !(self.onboarding_alpha > 0.0 && self.onboarding_alpha <= 1.0) {
            return Err(("onboarding_alpha", "must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(("match_threshold", "must lie in [0, 1]".into()));
        }
        if self.bands == 0 {
            return Err(("bands", "must be > 0".into()));
        }
        if !(self.texture_max_hz > 0.0) {
            return Err(("texture_max_hz", "must be > 0".into()));
        }
        if self.local_ais == 0 {
            return Err(("local_ais", "must be > 0".into()));
        }
        if !(self.session_us > 0.0) {
            return Err(("session_us", "must be > 0".into()));
        }
        if self.kind_pool_size == 0 {
            return Err(("kind_pool_size", "must be >= 1".into()));
        }
        if self.total_machines < 2 {
            return Err(("total_machines", "must be >= 2".into()));
        }
        if !(self.transport_delay_us >= 0.0) {
            return Err(("transport_delay_us", "must be >= 0".into()));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(("alpha_grid", "must be a nonempty subset of (0, 1]".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GladError> {
        self.check().map_err(|(k, m)| GladError::InvalidParameter(format!("{k}: {m}")))
    }
}

/// Object class plus quantized stiffness/texture signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: ObjectKind,
    pub stiffness_band: u8,
    pub texture_band: u8,
}

fn band(value: f64, max: f64, bands: u8) -> u8 {
    ((value / max * bands as f64).floor().max(0.0) as u64).min(bands as u64 - 1) as u8
}

impl Descriptor {
    pub fn of(profile: &ObjectProfile, params: &GladParams) -> Self {
        Descriptor {
            kind: profile.kind,
            stiffness_band: band(profile.stiffness, 1.0, params.bands),
            texture_band: band(profile.texture_freq_hz, params.texture_max_hz, params.bands),
        }
    }

    /// `1 - max(band differences) / bands`; zero across kinds.
    pub fn similarity(&self, other: &Descriptor, bands: u8) -> f64 {
        if self.kind != other.kind {
            return 0.0;
        }
        let ds = self.stiffness_band.abs_diff(other.stiffness_band);
        let dt = self.texture_band.abs_diff(other.texture_band);
        (1.0 - ds.max(dt) as f64 / bands as f64).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub descriptor: Descriptor,
    pub profile_estimate: Amplitudes,
    pub sample_count: u64,
    pub source_local_ai: u32,
}

/// Descriptor-keyed multimap of uploaded profiles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalRegistry {
    records: BTreeMap<Descriptor, Vec<ProfileRecord>>,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u64,
    records: Vec<ProfileRecord>,
}

impl GlobalRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self, descriptor: &Descriptor) -> &[ProfileRecord] {
        self.records.get(descriptor).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProfileRecord> {
        self.records.values().flatten()
    }

    /// Appends a record; returns the new version.
    pub fn insert(&mut self, record: ProfileRecord) -> Result<u64, GladError> {
        if record.sample_count == 0 {
            return Err(GladError::InvalidParameter("sample_count must be > 0".into()));
        }
        if record.profile_estimate.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GladError::InvalidParameter("estimate must lie in [0, 1]".into()));
        }
        self.records.entry(record.descriptor).or_default().push(record);
        self.version += 1;
        Ok(self.version)
    }

    pub fn to_json(&self) -> String {
        let snap = Snapshot { version: self.version, records: self.iter().cloned().collect() };
        serde_json::to_string_pretty(&snap).expect("registry snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GladError> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| GladError::Snapshot(e.to_string()))?;
        let mut reg = GlobalRegistry::new();
        for r in snap.records {
            reg.insert(r)?;
        }
        reg.version = snap.version;
        Ok(reg)
    }
}

/// A machine served by a Local AI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub machine_id: u32,
    pub state: ForecasterState,
    pub profile: ObjectProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAiState {
    pub id: u32,
    machines: Vec<Machine>,
}

impl LocalAiState {
    pub fn new(id: u32) -> Self {
        LocalAiState { id, machines: Vec::new() }
    }

    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    /// M, the number of machines served.
    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    pub fn machine(&self, machine_id: u32) -> Option<&Machine> {
        self.machines.iter().find(|m| m.machine_id == machine_id)
    }

    /// The new machine's state records M as of its arrival; existing
    /// machines are not touched.
    pub fn add_machine(&mut self, mut machine: Machine) -> Result<(), GladError> {
        if self.machine(machine.machine_id).is_some() {
            return Err(GladError::DuplicateMachine(machine.machine_id));
        }
        machine.state.machines = self.machines.len() as u32 + 1;
        self.machines.push(machine);
        Ok(())
    }

    /// Applies one observation to one machine's forecaster.
    pub fn observe(&mut self, machine_id: u32, observed: &HapticSample) -> Result<(), GladError> {
        let m = self.machines.iter_mut().find(|m| m.machine_id == machine_id).ok_or(GladError::UnknownMachine(machine_id))?;
        m.state = m.state.update(observed);
        Ok(())
    }

    pub fn profile_record(&self, machine_id: u32, params: &GladParams) -> Result<ProfileRecord, GladError> {
        let m = self.machine(machine_id).ok_or(GladError::UnknownMachine(machine_id))?;
        if m.state.updates_seen < params.min_updates.max(1) {
            return Err(GladError::NotReady { machine_id, updates: m.state.updates_seen, required: params.min_updates.max(1) });
        }
        Ok(ProfileRecord {
            descriptor: Descriptor::of(&m.profile, params),
            profile_estimate: m.state.profile_estimate,
            sample_count: m.state.updates_seen,
            source_local_ai: self.id,
        })
    }
}

/// Uploads a trained machine's profile; returns the new registry version.
pub fn upload_profile(
    local: &LocalAiState,
    machine_id: u32,
    registry: &mut GlobalRegistry,
    params: &GladParams,
) -> Result<u64, GladError> {
    registry.insert(local.profile_record(machine_id, params)?)
}

/// Collapses every descriptor's records into one sample-count-weighted
/// record.
pub fn aggregate_global(registry: &GlobalRegistry) -> Result<GlobalRegistry, GladError> {
    if registry.is_empty() {
        return Err(GladError::EmptyRegistry);
    }
    let mut records = BTreeMap::new();
    for (desc, members) in &registry.records {
        if members.is_empty() {
            continue;
        }
        let total: u64 = members.iter().map(|r| r.sample_count).sum();
        let mut estimate = [0.0; FINGERS];
        for r in members {
            let w = r.sample_count as f64 / total as f64;
            for (e, v) in estimate.iter_mut().zip(r.profile_estimate) {
                *e += w * v;
            }
        }
        for e in estimate.iter_mut() {
            *e = e.clamp(0.0, 1.0);
        }
        let source = if members.iter().all(|r| r.source_local_ai == members[0].source_local_ai) {
            members[0].source_local_ai
        } else {
            u32::MAX
        };
        records.insert(
            *desc,
            vec![ProfileRecord { descriptor: *desc, profile_estimate: estimate, sample_count: total, source_local_ai: source }],
        );
    }
    Ok(GlobalRegistry { records, version: registry.version + 1 })
}

/// Best same-kind record and its similarity; the record is withheld when
/// the similarity is below `threshold`.
pub fn match_profile(
    registry: &GlobalRegistry,
    descriptor: &Descriptor,
    bands: u8,
    threshold: f64,
) -> (Option<ProfileRecord>, f64) {
    let mut best: Option<(&ProfileRecord, f64)> = None;
    for r in registry.iter().filter(|r| r.descriptor.kind == descriptor.kind) {
        let s = descriptor.similarity(&r.descriptor, bands);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && r.sample_count > b.sample_count),
        };
        if better {
            best = Some((r, s));
        }
    }
    match best {
        Some((r, s)) if s >= threshold => (Some(r.clone()), s),
        Some((_, s)) => (None, s),
        None => (None, 0.0),
    }
}

/// How a Local AI initializes a new machine's forecaster.
pub trait OnboardingStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Initial estimate and the match similarity it came from, if any.
    fn initial_estimate(
        &self,
        descriptor: &Descriptor,
        registry: &GlobalRegistry,
        params: &GladParams,
    ) -> (Amplitudes, Option<f64>);
}

/// All-zero start.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColdStart;

impl OnboardingStrategy for ColdStart {
    fn name(&self) -> &'static str {
        "cold"
    }

    fn initial_estimate(&self, _: &Descriptor, _: &GlobalRegistry, _: &GladParams) -> (Amplitudes, Option<f64>) {
        ([0.0; FINGERS], None)
    }
}

/// Start from the best registry match, else cold.
#[derive(Debug, Clone, Copy, Default)]
pub struct GladStart;

impl OnboardingStrategy for GladStart {
    fn name(&self) -> &'static str {
        "glad"
    }

    fn initial_estimate(
        &self,
        descriptor: &Descriptor,
        registry: &GlobalRegistry,
        params: &GladParams,
    ) -> (Amplitudes, Option<f64>) {
        match match_profile(registry, descriptor, params.bands, params.match_threshold) {
            (Some(r), s) => (r.profile_estimate, Some(s)),
            (None, _) => ColdStart.initial_estimate(descriptor, registry, params),
        }
    }
}

pub struct OnboardingStrategies {
    strategies: BTreeMap<&'static str, Box<dyn OnboardingStrategy>>,
}

impl OnboardingStrategies {
    pub fn empty() -> Self {
        OnboardingStrategies { strategies: BTreeMap::new() }
    }

    /// `cold` and `glad`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(ColdStart));
        reg.register(Box::new(GladStart));
        reg
    }

    pub fn register(&mut self, strategy: Box<dyn OnboardingStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<&dyn OnboardingStrategy> {
        self.strategies.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}

impl Default for OnboardingStrategies {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnboardOutcome {
    /// Iterations until the windowed accuracy first met the target, or the
    /// trace length when it never did.
    pub iterations: usize,
    pub converged: bool,
    pub similarity: Option<f64>,
    /// Forecaster after the whole trace.
    pub state: ForecasterState,
}

/// Predict-then-update over `trace`, recording the first iteration at
/// which a full window meets the accuracy target.
pub fn iterations_to_target(initial: &ForecasterState, trace: &[HapticSample], params: &GladParams) -> OnboardOutcome {
    let mut state = *initial;
    let mut window = WindowedAccuracy::new(params.window);
    let mut reached = None;
    for (i, obs) in trace.iter().enumerate() {
        window.push(max_abs_error(&state.profile_estimate, &obs.amplitude) <= params.epsilon);
        state = state.update(obs);
        if reached.is_none() && window.is_full() && window.accuracy() >= params.accuracy_target {
            reached = Some(i + 1);
        }
    }
    OnboardOutcome { iterations: reached.unwrap_or(trace.len()), converged: reached.is_some(), similarity: None, state }
}

fn check_trace(trace: &[HapticSample]) -> Result<(), GladError> {
    if trace.len() < MIN_ONBOARDING_TOUCHES {
        return Err(GladError::ShortTrace { needed: MIN_ONBOARDING_TOUCHES, got: trace.len() });
    }
    Ok(())
}

/// Iterations-to-target for a new machine under `strategy`, without
/// touching any Local AI.
pub fn evaluate_onboarding(
    profile: &ObjectProfile,
    registry: &GlobalRegistry,
    strategy: &dyn OnboardingStrategy,
    params: &GladParams,
    trace: &[HapticSample],
) -> Result<OnboardOutcome, GladError> {
    params.validate()?;
    check_trace(trace)?;
    let (estimate, similarity) = strategy.initial_estimate(&Descriptor::of(profile, params), registry, params);
    let init = ForecasterState::with_estimate(estimate, params.onboarding_alpha)?;
    let mut out = iterations_to_target(&init, trace, params);
    out.similarity = similarity;
    Ok(out)
}

/// Onboards a new machine onto `local`. Existing machines are left as they
/// were.
pub fn onboard_machine(
    local: &mut LocalAiState,
    machine_id: u32,
    profile: &ObjectProfile,
    registry: &GlobalRegistry,
    strategy: &dyn OnboardingStrategy,
    params: &GladParams,
    trace: &[HapticSample],
) -> Result<OnboardOutcome, GladError> {
    if local.machine(machine_id).is_some() {
        return Err(GladError::DuplicateMachine(machine_id));
    }
    let out = evaluate_onboarding(profile, registry, strategy, params, trace)?;
    local.add_machine(Machine { machine_id, state: out.state, profile: *profile })?;
    Ok(out)
}

pub fn training_time_saved(t_cold: usize, t_warm: usize) -> Result<f64, GladError> {
    if t_cold == 0 {
        return Err(GladError::InvalidParameter("T_cold must be > 0".into()));
    }
    Ok(100.0 * (1.0 - t_warm as f64 / t_cold as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsRecord {
    pub machine_id: u32,
    pub local_ai: u32,
    /// Machines already onboarded system-wide.
    pub machines_present: usize,
    pub t_cold: usize,
    pub t_warm: usize,
    pub saved_pct: f64,
    pub matched: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<SavingsRecord>,
    /// `(machines_present, running mean saved_pct)` after each onboarding.
    pub curve: Vec<(usize, f64)>,
    pub registry: GlobalRegistry,
    /// Simulated Local-Global transport time spent.
    pub transport_us: f64,
}

impl SweepOutcome {
    /// Mean saved_pct over onboardings that found a registry match.
    pub fn matched_mean_saved(&self) -> Option<f64> {
        let matched: Vec<f64> = self.records.iter().filter(|r| r.matched).map(|r| r.saved_pct).collect();
        (!matched.is_empty()).then(|| matched.iter().sum::<f64>() / matched.len() as f64)
    }
}

pub const SAVINGS_CSV_HEADER: [&str; 2] = ["machines_present", "mean_saved_pct"];

/// Object class `index` of a pool. The first three are the presets; the
/// rest are distinct custom classes with seeded properties.
pub fn pool_profile(index: usize, object_id: u32, seed: u64) -> ObjectProfile {
    match index {
        0 => ObjectProfile::rubber_ball(object_id),
        1 => ObjectProfile::wooden_cube(object_id),
        2 => ObjectProfile::circular_cube(object_id),
        _ => {
            let mut r = rng::stream_rng(rng::derive_seed(seed, index as u64), rng::streams::POOL);
            ObjectProfile {
                object_id,
                kind: ObjectKind::Custom(index.min(u16::MAX as usize) as u16),
                center: [30.0, 0.0, 10.0],
                extent: 3.0 + 2.0 * rng::uniform(&mut r),
                stiffness: 0.2 + 0.75 * rng::uniform(&mut r),
                texture_freq_hz: 20.0 + 380.0 * rng::uniform(&mut r),
            }
        }
    }
}

/// Touch samples of a new machine's first session.
pub fn onboarding_trace(
    profile: &ObjectProfile,
    params: &GladParams,
    arrivals: &GpdParams,
    seed: u64,
) -> Result<Vec<HapticSample>, GladError> {
    let session = SessionParams { start_in_grasp: true, ..SessionParams::default() };
    Ok(generate_session(profile, &session, params.session_us, arrivals, seed)?.haptic)
}

/// Onboards `total_machines` machines round-robin across the Local AIs,
/// each in both modes on the same trace. Profiles go to the Global AI after
/// every onboarding, followed by aggregation.
pub fn run_savings_sweep(
    total_machines: usize,
    kind_pool_size: usize,
    seed: u64,
    params: &GladParams,
) -> Result<SweepOutcome, GladError> {
    run_savings_sweep_with(total_machines, kind_pool_size, seed, params, &GpdParams::default())
}

/// [`run_savings_sweep`] with sessions sampled at `arrivals`.
pub fn run_savings_sweep_with(
    total_machines: usize,
    kind_pool_size: usize,
    seed: u64,
    params: &GladParams,
    arrivals: &GpdParams,
) -> Result<SweepOutcome, GladError> {
    params.validate()?;
    if total_machines < 2 {
        return Err(GladError::InvalidParameter("total_machines must be >= 2".into()));
    }
    if kind_pool_size == 0 {
        return Err(GladError::InvalidParameter("kind_pool_size must be >= 1".into()));
    }
    let global = GlobalAi::spawn(GlobalRegistry::new(), params.transport_delay_us);
    let mut locals: Vec<LocalAiState> = (0..params.local_ais as u32).map(LocalAiState::new).collect();
    let mut pool_rng = rng::stream_rng(seed, rng::streams::POOL);
    let mut records = Vec::with_capacity(total_machines);
    let mut curve = Vec::with_capacity(total_machines);
    let mut sum = 0.0;

    for j in 0..total_machines {
        let kind = if kind_pool_size == 1 { 0 } else { (rng::uniform(&mut pool_rng) * kind_pool_size as f64) as usize };
        let kind = kind.min(kind_pool_size - 1);
        let machine_id = j as u32;
        let profile = pool_profile(kind, machine_id, seed);
        let trace = onboarding_trace(&profile, params, arrivals, rng::derive_seed(seed, j as u64))?;
        let registry = global.snapshot()?;

        let cold = evaluate_onboarding(&profile, &registry, &ColdStart, params, &trace)?;
        let local = &mut locals[j % params.local_ais];
        let warm = onboard_machine(local, machine_id, &profile, &registry, &GladStart, params, &trace)?;
        let saved_pct = training_time_saved(cold.iterations, warm.iterations)?;

        global.upload(local.profile_record(machine_id, params)?)?;
        global.aggregate()?;

        sum += saved_pct;
        curve.push((j + 1, sum / (j + 1) as f64));
        records.push(SavingsRecord {
            machine_id,
            local_ai: local.id,
            machines_present: j,
            t_cold: cold.iterations,
            t_warm: warm.iterations,
            saved_pct,
            matched: warm.similarity.is_some(),
            converged: cold.converged && warm.converged,
        });
    }
    let transport_us = global.transport_us();
    let registry = global.shutdown()?;
    Ok(SweepOutcome { records, curve, registry, transport_us })
}

enum Command {
    Upload(ProfileRecord, mpsc::Sender<Result<u64, GladError>>),
    Aggregate(mpsc::Sender<Result<u64, GladError>>),
    Snapshot(mpsc::Sender<GlobalRegistry>),
    Shutdown(mpsc::Sender<GlobalRegistry>),
}

/// The Global AI as a serialized actor: one thread owns the registry and
/// applies commands in arrival order.
pub struct GlobalAi {
    tx: mpsc::Sender<Command>,
    handle: Option<thread::JoinHandle<()>>,
    delay_us: f64,
    transport_us: std::cell::Cell<f64>,
}

impl GlobalAi {
    pub fn spawn(mut registry: GlobalRegistry, delay_us: f64) -> Self {
        let (tx, rx) = mpsc::channel::<Command>();
        let handle = thread::spawn(move || {
            for cmd in rx {
                match cmd {
                    Command::Upload(record, reply) => {
                        let _ = reply.send(registry.insert(record));
                    }
                    Command::Aggregate(reply) => {
                        let out = aggregate_global(&registry).map(|next| {
                            registry = next;
                            registry.version()
                        });
                        let _ = reply.send(out);
                    }
                    Command::Snapshot(reply) => {
                        let _ = reply.send(registry.clone());
                    }
                    Command::Shutdown(reply) => {
                        let _ = reply.send(std::mem::take(&mut registry));
                        break;
                    }
                }
            }
        });
        GlobalAi { tx, handle: Some(handle), delay_us, transport_us: std::cell::Cell::new(0.0) }
    }

    fn request<T>(&self, make: impl FnOnce(mpsc::Sender<T>) -> Command) -> Result<T, GladError> {
        let (reply_tx, reply_rx) = mpsc::channel();
        self.tx.send(make(reply_tx)).map_err(|_| GladError::ActorStopped)?;
        let out = reply_rx.recv().map_err(|_| GladError::ActorStopped)?;
        self.transport_us.set(self.transport_us.get() + 2.0 * self.delay_us);
        Ok(out)
    }

    pub fn upload(&self, record: ProfileRecord) -> Result<u64, GladError> {
        self.request(|r| Command::Upload(record, r))?
    }

    pub fn aggregate(&self) -> Result<u64, GladError> {
        self.request(Command::Aggregate)?
    }

    pub fn snapshot(&self) -> Result<GlobalRegistry, GladError> {
        self.request(Command::Snapshot)
    }

    /// Total simulated round-trip transport time of all requests so far.
    pub fn transport_us(&self) -> f64 {
        self.transport_us.get()
    }

    pub fn shutdown(mut self) -> Result<GlobalRegistry, GladError> {
        let reg = self.request(Command::Shutdown)?;
        if let Some(h) = self.handle.take() {
            h.join().map_err(|_| GladError::ActorStopped)?;
        }
        Ok(reg)
    }
}

impl Drop for GlobalAi {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let (reply, _) = mpsc::channel();
            let _ = self.tx.send(Command::Shutdown(reply));
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> GladParams {
        GladParams::default()
    }

    fn record(desc: Descriptor, v: f64, count: u64) -> ProfileRecord {
        ProfileRecord { descriptor: desc, profile_estimate: [v; FINGERS], sample_count: count, source_local_ai: 0 }
    }

    fn ball_desc() -> Descriptor {
        Descriptor::of(&ObjectProfile::rubber_ball(0), &params())
    }

    fn trained_local(updates: usize) -> LocalAiState {
        let mut local = LocalAiState::new(7);
        let p = ObjectProfile::rubber_ball(3);
        local.add_machine(Machine { machine_id: 3, state: ForecasterState::new(0.1).unwrap(), profile: p }).unwrap();
        for _ in 0..updates {
            local.observe(3, &HapticSample { t_us: 0.0, amplitude: [0.3; FINGERS] }).unwrap();
        }
        local
    }

    #[test]
    fn preset_descriptors() {
        let p = params();
        let d = |o: ObjectProfile| {
            let d = Descriptor::of(&o, &p);
            (d.stiffness_band, d.texture_band)
        };
        assert_eq!(d(ObjectProfile::rubber_ball(0)), (3, 0));
        assert_eq!(d(ObjectProfile::wooden_cube(0)), (9, 2));
        assert_eq!(d(ObjectProfile::circular_cube(0)), (6, 1));
        let mut top = ObjectProfile::wooden_cube(0);
        top.stiffness = 1.0;
        top.texture_freq_hz = 5000.0;
        assert_eq!(d(top), (9, 9));
    }

    #[test]
    fn upload_appends_and_versions() {
        let local = trained_local(250);
        let mut reg = GlobalRegistry::new();
        assert_eq!(upload_profile(&local, 3, &mut reg, &params()).unwrap(), 1);
        assert_eq!(reg.len(), 1);
        assert_eq!(upload_profile(&local, 3, &mut reg, &params()).unwrap(), 2);
        assert_eq!(reg.records(&ball_desc()).len(), 2);
        assert_eq!(reg.records(&ball_desc())[0].sample_count, 250);
    }

    #[test]
    fn upload_requires_training() {
        let mut reg = GlobalRegistry::new();
        let err = upload_profile(&trained_local(0), 3, &mut reg, &params()).unwrap_err();
        assert!(matches!(err, GladError::NotReady { updates: 0, .. }));
        assert!(matches!(upload_profile(&trained_local(199), 3, &mut reg, &params()), Err(GladError::NotReady { .. })));
        assert!(matches!(upload_profile(&trained_local(250), 9, &mut reg, &params()), Err(GladError::UnknownMachine(9))));
        assert_eq!(reg.version(), 0);
    }

    #[test]
    fn aggregation_examples() {
        let d = ball_desc();
        let mut reg = GlobalRegistry::new();
        reg.insert(record(d, 0.2, 100)).unwrap();
        let single = aggregate_global(&reg).unwrap();
        assert_eq!(single.records(&d)[0].profile_estimate, [0.2; FINGERS]);
        assert_eq!(single.records(&d)[0].sample_count, 100);
        assert_eq!(single.version(), reg.version() + 1);

        reg.insert(record(d, 0.6, 300)).unwrap();
        let agg = aggregate_global(&reg).unwrap();
        assert_eq!(agg.records(&d).len(), 1);
        for e in agg.records(&d)[0].profile_estimate {
            assert_abs_diff_eq!(e, 0.5, epsilon = 1e-12);
        }
        assert_eq!(agg.records(&d)[0].sample_count, 400);

        let mut eq = GlobalRegistry::new();
        for v in [0.1, 0.4, 0.7] {
            eq.insert(record(d, v, 50)).unwrap();
        }
        for e in aggregate_global(&eq).unwrap().records(&d)[0].profile_estimate {
            assert_abs_diff_eq!(e, 0.4, epsilon = 1e-12);
        }
        assert!(matches!(aggregate_global(&GlobalRegistry::new()), Err(GladError::EmptyRegistry)));
    }

    #[test]
    fn matching_examples() {
        let d = ball_desc();
        let mut reg = GlobalRegistry::new();
        assert_eq!(match_profile(&reg, &d, 10, 0.8), (None, 0.0));
        reg.insert(record(d, 0.3, 10)).unwrap();
        let (r, s) = match_profile(&reg, &d, 10, 0.8);
        assert_eq!(s, 1.0);
        assert!(r.is_some());

        let far = Descriptor { stiffness_band: d.stiffness_band + 5, ..d };
        let (r, s) = match_profile(&reg, &far, 10, 0.8);
        assert_eq!(s, 0.5);
        assert!(r.is_none());

        let other = Descriptor { kind: ObjectKind::WoodenCube, ..d };
        assert_eq!(match_profile(&reg, &other, 10, 0.0).0, None);
    }

    #[test]
    fn training_time_saved_examples() {
        assert_abs_diff_eq!(training_time_saved(1000, 280).unwrap(), 72.0, epsilon = 1e-9);
        assert_eq!(training_time_saved(640, 640).unwrap(), 0.0);
        assert_eq!(training_time_saved(640, 0).unwrap(), 100.0);
        assert!(training_time_saved(0, 0).is_err());
    }

    fn ball_trace(seed: u64) -> (ObjectProfile, Vec<HapticSample>) {
        let p = ObjectProfile::rubber_ball(1);
        let t = onboarding_trace(&p, &params(), &GpdParams::default(), seed).unwrap();
        (p, t)
    }

    #[test]
    fn warm_start_from_true_signature_converges_in_one_window() {
        let (p, trace) = ball_trace(11);
        let mut reg = GlobalRegistry::new();
        let mean: f64 = trace[..200].iter().map(|h| h.amplitude.iter().sum::<f64>()).sum::<f64>() / 1000.0;
        reg.insert(record(Descriptor::of(&p, &params()), mean, 1000)).unwrap();
        let warm = evaluate_onboarding(&p, &reg, &GladStart, &params(), &trace).unwrap();
        assert_eq!(warm.similarity, Some(1.0));
        assert_eq!(warm.iterations, params().window);
        let cold = evaluate_onboarding(&p, &reg, &ColdStart, &params(), &trace).unwrap();
        assert!(cold.iterations > warm.iterations);
    }

    #[test]
    fn glad_without_match_equals_cold() {
        let (p, trace) = ball_trace(12);
        let reg = GlobalRegistry::new();
        let warm = evaluate_onboarding(&p, &reg, &GladStart, &params(), &trace).unwrap();
        let cold = evaluate_onboarding(&p, &reg, &ColdStart, &params(), &trace).unwrap();
        assert_eq!(warm, cold);
    }

    #[test]
    fn unreachable_target_reports_trace_length() {
        let (p, trace) = ball_trace(13);
        let gp = GladParams { onboarding_alpha: 1e-6, ..params() };
        let out = evaluate_onboarding(&p, &GlobalRegistry::new(), &ColdStart, &gp, &trace).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, trace.len());
    }

    #[test]
    fn short_trace_rejected() {
        let (p, trace) = ball_trace(14);
        let r = evaluate_onboarding(&p, &GlobalRegistry::new(), &ColdStart, &params(), &trace[..499]);
        assert!(matches!(r, Err(GladError::ShortTrace { .. })));
    }

    #[test]
    fn onboarding_leaves_existing_machines_untouched() {
        let mut local = trained_local(300);
        let before = serde_json::to_string(&local.machines()[0]).unwrap();
        let (p, trace) = ball_trace(15);
        onboard_machine(&mut local, 4, &p, &GlobalRegistry::new(), &GladStart, &params(), &trace).unwrap();
        assert_eq!(local.machine_count(), 2);
        assert_eq!(local.machines()[1].state.machines, 2);
        assert_eq!(serde_json::to_string(&local.machines()[0]).unwrap(), before);
        assert!(matches!(
            onboard_machine(&mut local, 4, &p, &GlobalRegistry::new(), &GladStart, &params(), &trace),
            Err(GladError::DuplicateMachine(4))
        ));
    }

    #[test]
    fn registry_json_round_trip() {
        let mut reg = GlobalRegistry::new();
        reg.insert(record(ball_desc(), 0.3, 10)).unwrap();
        reg.insert(record(Descriptor { kind: ObjectKind::Custom(9), ..ball_desc() }, 0.6, 20)).unwrap();
        let back = GlobalRegistry::from_json(&reg.to_json()).unwrap();
        assert_eq!(back, reg);
        assert!(GlobalRegistry::from_json("{}").is_err());
    }

    #[test]
    fn actor_serializes_and_versions() {
        let ai = GlobalAi::spawn(GlobalRegistry::new(), 100.0);
        assert_eq!(ai.upload(record(ball_desc(), 0.2, 100)).unwrap(), 1);
        assert_eq!(ai.upload(record(ball_desc(), 0.6, 300)).unwrap(), 2);
        assert_eq!(ai.aggregate().unwrap(), 3);
        let snap = ai.snapshot().unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(ai.transport_us(), 4.0 * 200.0);
        let reg = ai.shutdown().unwrap();
        assert_eq!(reg, snap);
    }

    #[test]
    fn strategy_registry() {
        let reg = OnboardingStrategies::builtin();
        assert_eq!(reg.names(), vec!["cold", "glad"]);
        assert!(reg.get("glad").is_some());
        assert!(reg.get("lukewarm").is_none());
    }

    #[test]
    fn sweep_is_deterministic_and_sized() {
        let p = GladParams { total_machines: 5, ..params() };
        let a = run_savings_sweep(5, 1, 3, &p).unwrap();
        let b = run_savings_sweep(5, 1, 3, &p).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 5);
        assert!(!a.records[0].matched);
        assert!(a.records[1..].iter().all(|r| r.matched && r.t_warm <= r.t_cold));
        assert!(run_savings_sweep(1, 1, 3, &p).is_err());
        assert!(run_savings_sweep(5, 0, 3, &p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregation_conserves(members in proptest::collection::vec((0.0f64..=1.0, 1u64..1000), 1..8)) {
            let d = ball_desc();
            let mut reg = GlobalRegistry::new();
            for (v, c) in &members {
                reg.insert(record(d, *v, *c)).unwrap();
            }
            let agg = aggregate_global(&reg).unwrap();
            let r = &agg.records(&d)[0];
            prop_assert_eq!(r.sample_count, members.iter().map(|m| m.1).sum::<u64>());
            let lo = members.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
            for e in r.profile_estimate {
                prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
            }
        }

        #[test]
        fn version_strictly_increases(ops in proptest::collection::vec(0u8..2, 1..20)) {
            let mut reg = GlobalRegistry::new();
            reg.insert(record(ball_desc(), 0.5, 1)).unwrap();
            let mut last = reg.version();
            for op in ops {
                reg = if op == 0 {
                    let mut r = reg.clone();
                    r.insert(record(ball_desc(), 0.1, 3)).unwrap();
                    r
                } else {
                    aggregate_global(&reg).unwrap()
                };
                prop_assert!(reg.version() > last);
                last = reg.version();
            }
        }

        #[test]
        fn similarity_in_unit_interval(a in 0u8..10, b in 0u8..10, c in 0u8..10, d in 0u8..10) {
            let x = Descriptor { kind: ObjectKind::RubberBall, stiffness_band: a, texture_band: b };
            let y = Descriptor { kind: ObjectKind::RubberBall, stiffness_band: c, texture_band: d };
            let s = x.similarity(&y, 10);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, y.similarity(&x, 10));
        }
    }
}
