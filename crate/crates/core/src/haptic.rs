//! Synthetic operator sessions, the touch/no-touch classifier and the
//! recency-weighted haptic feedback forecaster run by a Local AI.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SimRng};
use crate::traffic::{self, GpdParams, TrafficError};

pub const FINGERS: usize = 5;
pub type Amplitudes = [f64; FINGERS];

pub const CLASSIFIER_EPOCHS: usize = 500;
pub const CLASSIFIER_STEP: f64 = 0.1;
pub const MIN_DATASET: usize = 100;
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HapticError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("trace i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

/// Glove snapshot sent by the operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t_us: f64,
    /// cm
    pub hand_pos: [f64; 3],
    /// rad
    pub hand_orient: [f64; 3],
    pub finger_pressure: [f64; FINGERS],
}

/// Per-finger feedback amplitude in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticSample {
    pub t_us: f64,
    pub amplitude: Amplitudes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    RubberBall,
    WoodenCube,
    CircularCube,
    /// User-defined object class; the tag distinguishes classes.
    Custom(u16),
}

impl ObjectKind {
    pub fn label(&self) -> String {
        match self {
            ObjectKind::RubberBall => "rubber_ball".into(),
            ObjectKind::WoodenCube => "wooden_cube".into(),
            ObjectKind::CircularCube => "circular_cube".into(),
            ObjectKind::Custom(tag) => format!("custom_{tag}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectProfile {
    pub object_id: u32,
    pub kind: ObjectKind,
    /// cm
    pub center: [f64; 3],
    /// Contact radius around `center`, cm.
    pub extent: f64,
    pub stiffness: f64,
    pub texture_freq_hz: f64,
}

const DEFAULT_CENTER: [f64; 3] = [30.0, 0.0, 10.0];

impl ObjectProfile {
    pub fn rubber_ball(object_id: u32) -> Self {
        ObjectProfile {
            object_id,
            kind: ObjectKind::RubberBall,
            center: DEFAULT_CENTER,
            extent: 4.0,
            stiffness: 0.35,
            texture_freq_hz: 40.0,
        }
    }

    pub fn wooden_cube(object_id: u32) -> Self {
        ObjectProfile {
            object_id,
            kind: ObjectKind::WoodenCube,
            center: DEFAULT_CENTER,
            extent: 3.5,
            stiffness: 0.9,
            texture_freq_hz: 120.0,
        }
    }

    pub fn circular_cube(object_id: u32) -> Self {
        ObjectProfile {
            object_id,
            kind: ObjectKind::CircularCube,
            center: DEFAULT_CENTER,
            extent: 4.5,
            stiffness: 0.65,
            texture_freq_hz: 80.0,
        }
    }

    pub fn validate(&self) -> Result<(), HapticError> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(HapticError::InvalidParameter(format!("extent must be > 0, got {}", self.extent)));
        }
        if !(self.stiffness > 0.0 && self.stiffness <= 1.0) {
            return Err(HapticError::InvalidParameter(format!("stiffness must lie in (0, 1], got {}", self.stiffness)));
        }
        if !(self.texture_freq_hz.is_finite() && self.texture_freq_hz >= 0.0) {
            return Err(HapticError::InvalidParameter("texture frequency must be >= 0".into()));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(HapticError::InvalidParameter("center must be finite".into()));
        }
        Ok(())
    }

    /// Feedback amplitude with the hand at `distance` from the center, before
    /// sensor noise. Zero outside the contact radius.
    pub fn amplitude_at(&self, distance: f64, t_us: f64, texture_depth: f64) -> Option<Amplitudes> {
        if distance > self.extent {
            return None;
        }
        let r = distance / self.extent;
        let base = self.stiffness * (1.0 - r);
        let phase = 2.0 * PI * self.texture_freq_hz * t_us * 1e-6;
        let mut a = [0.0; FINGERS];
        for (i, v) in a.iter_mut().enumerate() {
            let m = 1.0 + texture_depth * r * (phase + 2.0 * PI * i as f64 / FINGERS as f64).sin();
            *v = (base * m).clamp(0.0, 1.0);
        }
        Some(a)
    }

    /// Feedback while the object is held at its center.
    pub fn signature(&self) -> Amplitudes {
        [self.stiffness; FINGERS]
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    d.sqrt()
}

/// Geometric ground truth: the hand is in contact when it is within
/// `extent` of the object's center, boundary included.
pub fn label_touch(sample: &ControlSample, profile: &ObjectProfile) -> bool {
    distance(&sample.hand_pos, &profile.center) <= profile.extent
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    /// Alternate between resting away from the object and grasping it.
    ReachAndGrasp,
    /// Hand held still at a fixed position.
    Pinned([f64; 3]),
}

/// Shape of the synthetic operator behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionParams {
    pub motion: Motion,
    pub away_ms: [f64; 2],
    pub hold_ms: [f64; 2],
    /// Time constant of the hand's pull toward its current target.
    pub motion_time_constant_us: f64,
    /// Rest position distance from the center, in extents.
    pub home_distance: f64,
    /// Grasp point distance from the center, in extents.
    pub grasp_offset: f64,
    /// Per-sample positional jitter std, in extents.
    pub jitter: f64,
    /// Additive Gaussian noise on each feedback amplitude.
    pub amplitude_noise: f64,
    pub texture_depth: f64,
    /// Start the session already holding the object.
    pub start_in_grasp: bool,
}

impl Default for SessionParams {
    fn default() -> Self {
        SessionParams {
            motion: Motion::ReachAndGrasp,
            away_ms: [200.0, 600.0],
            hold_ms: [400.0, 1200.0],
            motion_time_constant_us: 2000.0,
            home_distance: 3.0,
            grasp_offset: 0.02,
            jitter: 0.005,
            amplitude_noise: 0.005,
            texture_depth: 0.5,
            start_in_grasp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Session {
    pub control: Vec<ControlSample>,
    /// One sample per control sample taken in contact.
    pub haptic: Vec<HapticSample>,
}

fn random_unit(rng: &mut SimRng) -> [f64; 3] {
    loop {
        let v = [rng::standard_normal(rng), rng::standard_normal(rng), rng::standard_normal(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn offset(center: &[f64; 3], dir: &[f64; 3], len: f64) -> [f64; 3] {
    [center[0] + dir[0] * len, center[1] + dir[1] * len, center[2] + dir[2] * len]
}

fn uniform_in(rng: &mut SimRng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng::uniform(rng)
}

/// Synthesizes an operator session with control samples at generalized
/// Pareto arrival instants.
pub fn generate_session(
    profile: &ObjectProfile,
    params: &SessionParams,
    duration_us: f64,
    control_params: &GpdParams,
    seed: u64,
) -> Result<Session, HapticError> {
    profile.validate()?;
    if !(duration_us.is_finite() && duration_us > 0.0) {
        return Err(HapticError::InvalidParameter(format!("duration must be > 0, got {duration_us}")));
    }
    if params.hold_ms[0] <= 0.0 || params.away_ms[0] <= 0.0 || params.motion_time_constant_us <= 0.0 {
        return Err(HapticError::InvalidParameter("phase durations and time constant must be > 0".into()));
    }
    let times = traffic::generate_stream(control_params, duration_us, seed)?.timestamps;
    let mut rng = rng::stream_rng(seed, rng::streams::SESSION);
    let extent = profile.extent;

    let mut grasping = params.start_in_grasp;
    let mut target = if grasping {
        offset(&profile.center, &random_unit(&mut rng), params.grasp_offset * extent)
    } else {
        offset(&profile.center, &random_unit(&mut rng), params.home_distance * extent)
    };
    let mut pos = match params.motion {
        Motion::Pinned(p) => p,
        Motion::ReachAndGrasp => target,
    };
    let mut phase_end = 1e3 * uniform_in(&mut rng, if grasping { params.hold_ms } else { params.away_ms });
    let mut orient = [0.0; 3];
    let mut last_t = 0.0;
    let mut session = Session::default();

    for t in times {
        if t <= last_t && !session.control.is_empty() {
            continue;
        }
        let dt = t - last_t;
        last_t = t;

        if let Motion::ReachAndGrasp = params.motion {
            while t >= phase_end {
                grasping = !grasping;
                let (range, len) = if grasping {
                    (params.hold_ms, params.grasp_offset)
                } else {
                    (params.away_ms, params.home_distance)
                };
                target = offset(&profile.center, &random_unit(&mut rng), len * extent);
                phase_end += 1e3 * uniform_in(&mut rng, range);
            }
            let pull = (-dt / params.motion_time_constant_us).exp();
            for k in 0..3 {
                pos[k] = target[k] + (pos[k] - target[k]) * pull + params.jitter * extent * rng::standard_normal(&mut rng);
            }
        }
        for o in orient.iter_mut() {
            *o += 0.005 * rng::standard_normal(&mut rng);
            *o = o.clamp(-PI, PI);
        }

        let d = distance(&pos, &profile.center);
        let proximity = (1.0 - d / extent).max(0.0);
        let mut finger_pressure = [0.0; FINGERS];
        for (i, f) in finger_pressure.iter_mut().enumerate() {
            *f = (proximity * (0.8 + 0.04 * i as f64) + 0.02 * rng::standard_normal(&mut rng)).clamp(0.0, 1.0);
        }
        session.control.push(ControlSample { t_us: t, hand_pos: pos, hand_orient: orient, finger_pressure });

        if let Some(mut amplitude) = profile.amplitude_at(d, t, params.texture_depth) {
            if params.amplitude_noise > 0.0 {
                for a in amplitude.iter_mut() {
                    *a = (*a + params.amplitude_noise * rng::standard_normal(&mut rng)).clamp(0.0, 1.0);
                }
            }
            session.haptic.push(HapticSample { t_us: t, amplitude });
        }
    }
    Ok(session)
}

pub const FEATURES: usize = 12;

/// Linear logistic discriminant over standardized glove features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub origin: [f64; 3],
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
    pub weights: [f64; FEATURES],
    pub bias: f64,
}

/// `[hand_pos, hand_orient, finger_pressure, |hand_pos - origin|]`.
pub fn features(sample: &ControlSample, origin: &[f64; 3]) -> [f64; FEATURES] {
    let mut f = [0.0; FEATURES];
    f[..3].copy_from_slice(&sample.hand_pos);
    f[3..6].copy_from_slice(&sample.hand_orient);
    f[6..11].copy_from_slice(&sample.finger_pressure);
    f[11] = distance(&sample.hand_pos, origin);
    f
}

impl Classifier {
    fn logit(&self, raw: &[f64; FEATURES]) -> f64 {
        let terms = raw.iter().zip(&self.mean).zip(&self.std).zip(&self.weights);
        self.bias + terms.map(|(((x, m), s), w)| w * (x - m) / s).sum::<f64>()
    }

    pub fn probability(&self, sample: &ControlSample) -> f64 {
        sigmoid(self.logit(&features(sample, &self.origin)))
    }

    pub fn is_touch(&self, sample: &ControlSample) -> bool {
        self.logit(&features(sample, &self.origin)) >= 0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Labels every control sample with [`label_touch`].
pub fn label_dataset(control: &[ControlSample], profile: &ObjectProfile) -> Vec<(ControlSample, bool)> {
    control.iter().map(|s| (*s, label_touch(s, profile))).collect()
}

/// Full-batch gradient descent on logistic loss after a seeded shuffle and
/// split. Returns the model with its held-out accuracy.
pub fn train_classifier(
    dataset: &[(ControlSample, bool)],
    train_fraction: f64,
    presumed_origin: [f64; 3],
    seed: u64,
) -> Result<(Classifier, f64), HapticError> {
    if dataset.len() < MIN_DATASET {
        return Err(HapticError::InsufficientData { needed: MIN_DATASET, got: dataset.len() });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(HapticError::InvalidParameter(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let positives = dataset.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == dataset.len() {
        return Err(HapticError::DegenerateData("dataset holds a single class".into()));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream_rng(seed, rng::streams::SHUFFLE));
    let n_train = ((dataset.len() as f64 * train_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let (train_idx, valid_idx) = order.split_at(n_train);

    let rows: Vec<([f64; FEATURES], f64)> = train_idx
        .iter()
        .map(|&i| (features(&dataset[i].0, &presumed_origin), if dataset[i].1 { 1.0 } else { 0.0 }))
        .collect();
    if rows.iter().all(|r| r.1 == rows[0].1) {
        return Err(HapticError::DegenerateData("training split holds a single class".into()));
    }

    let n = rows.len() as f64;
    let mut mean = [0.0; FEATURES];
    let mut std = [0.0; FEATURES];
    for (x, _) in &rows {
        for j in 0..FEATURES {
            mean[j] += x[j] / n;
        }
    }
    for (x, _) in &rows {
        for j in 0..FEATURES {
            std[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    for s in std.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let standardized: Vec<([f64; FEATURES], f64)> = rows
        .iter()
        .map(|(x, y)| {
            let mut z = [0.0; FEATURES];
            for j in 0..FEATURES {
                z[j] = (x[j] - mean[j]) / std[j];
            }
            (z, *y)
        })
        .collect();

    let mut weights = [0.0; FEATURES];
    let mut bias = 0.0;
    for _ in 0..CLASSIFIER_EPOCHS {
        let mut grad = [0.0; FEATURES];
        let mut grad_b = 0.0;
        for (z, y) in &standardized {
            let mut s = bias;
            for j in 0..FEATURES {
                s += weights[j] * z[j];
            }
            let err = sigmoid(s) - y;
            for j in 0..FEATURES {
                grad[j] += err * z[j];
            }
            grad_b += err;
        }
        for j in 0..FEATURES {
            weights[j] -= CLASSIFIER_STEP * grad[j] / n;
        }
        bias -= CLASSIFIER_STEP * grad_b / n;
    }

    let model = Classifier { origin: presumed_origin, mean, std, weights, bias };
    let correct = valid_idx.iter().filter(|&&i| model.is_touch(&dataset[i].0) == dataset[i].1).count();
    Ok((model, correct as f64 / valid_idx.len() as f64))
}

/// Per-machine forecaster: a constant-step-size value estimate of the
/// feedback the machine will return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecasterState {
    pub profile_estimate: Amplitudes,
    pub alpha_local: f64,
    pub updates_seen: u64,
    /// Lag-1 autocorrelation of the feedback seen, when measured.
    pub tau: f64,
    /// Machines served by the owning Local AI.
    pub machines: u32,
}

impl ForecasterState {
    pub fn new(alpha_local: f64) -> Result<Self, HapticError> {
        Self::with_estimate([0.0; FINGERS], alpha_local)
    }

    pub fn with_estimate(profile_estimate: Amplitudes, alpha_local: f64) -> Result<Self, HapticError> {
        if !(alpha_local > 0.0 && alpha_local <= 1.0) {
            return Err(HapticError::InvalidParameter(format!("alpha_local must lie in (0, 1], got {alpha_local}")));
        }
        if profile_estimate.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(HapticError::InvalidParameter("estimate must lie in [0, 1]".into()));
        }
        Ok(ForecasterState { profile_estimate, alpha_local, updates_seen: 0, tau: 0.0, machines: 1 })
    }

    pub fn update(&self, observed: &HapticSample) -> Self {
        let mut next = *self;
        for (e, o) in next.profile_estimate.iter_mut().zip(observed.amplitude) {
            *e += self.alpha_local * (o - *e);
        }
        next.updates_seen += 1;
        next
    }
}

/// `estimate += alpha * (observed - estimate)`, per finger.
pub fn forecaster_update(state: &ForecasterState, observed: &HapticSample) -> ForecasterState {
    state.update(observed)
}

/// Forecast feedback for a control sample the classifier flags as a touch.
pub fn forecast_feedback(state: &ForecasterState, control: &ControlSample, classifier: &Classifier) -> Option<HapticSample> {
    classifier
        .is_touch(control)
        .then_some(HapticSample { t_us: control.t_us, amplitude: state.profile_estimate })
}

pub fn max_abs_error(a: &Amplitudes, b: &Amplitudes) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Running fraction of forecasts within `epsilon` (max-norm) of the actual
/// feedback, one entry per index.
pub fn cumulative_accuracy_curve(forecasts: &[Amplitudes], actuals: &[Amplitudes], epsilon: f64) -> Result<Vec<f64>, HapticError> {
    if forecasts.len() != actuals.len() {
        return Err(HapticError::InvalidParameter(format!(
            "forecasts ({}) and actuals ({}) must align",
            forecasts.len(),
            actuals.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(HapticError::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let mut hits = 0usize;
    Ok(forecasts
        .iter()
        .zip(actuals)
        .enumerate()
        .map(|(i, (f, a))| {
            if max_abs_error(f, a) <= epsilon {
                hits += 1;
            }
            hits as f64 / (i + 1) as f64
        })
        .collect())
}

/// Final value of [`cumulative_accuracy_curve`]; 1.0 for empty input.
pub fn cumulative_accuracy(forecasts: &[Amplitudes], actuals: &[Amplitudes], epsilon: f64) -> Result<f64, HapticError> {
    Ok(cumulative_accuracy_curve(forecasts, actuals, epsilon)?.last().copied().unwrap_or(1.0))
}

/// Sliding-window hit rate over the most recent `capacity` outcomes.
#[derive(Debug, Clone)]
pub struct WindowedAccuracy {
    ring: Vec<bool>,
    next: usize,
    len: usize,
    hits: usize,
}

impl WindowedAccuracy {
    pub fn new(capacity: usize) -> Self {
        WindowedAccuracy { ring: vec![false; capacity.max(1)], next: 0, len: 0, hits: 0 }
    }

    pub fn push(&mut self, hit: bool) {
        if self.len == self.ring.len() {
            if self.ring[self.next] {
                self.hits -= 1;
            }
        } else {
            self.len += 1;
        }
        self.ring[self.next] = hit;
        if hit {
            self.hits += 1;
        }
        self.next = (self.next + 1) % self.ring.len();
    }

    pub fn is_full(&self) -> bool {
        self.len == self.ring.len()
    }

    pub fn accuracy(&self) -> f64 {
        if self.len == 0 {
            1.0
        } else {
            self.hits as f64 / self.len as f64
        }
    }
}

/// Lag-1 Pearson autocorrelation of the per-sample mean amplitude.
pub fn estimate_tau(trace: &[HapticSample]) -> Result<f64, HapticError> {
    if trace.len() < 3 {
        return Err(HapticError::InsufficientData { needed: 3, got: trace.len() });
    }
    let x: Vec<f64> = trace.iter().map(|s| s.amplitude.iter().sum::<f64>() / FINGERS as f64).collect();
    let (a, b) = (&x[..x.len() - 1], &x[1..]);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    if saa <= 1e-24 || sbb <= 1e-24 {
        return Err(HapticError::DegenerateData("feedback trace has zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Predict-then-update pass over `trace`; returns per-sample hits and the
/// final state.
pub fn run_forecaster(initial: &ForecasterState, trace: &[HapticSample], epsilon: f64) -> (Vec<bool>, ForecasterState) {
    let mut state = *initial;
    let hits = trace
        .iter()
        .map(|obs| {
            let hit = max_abs_error(&state.profile_estimate, &obs.amplitude) <= epsilon;
            state = state.update(obs);
            hit
        })
        .collect();
    (hits, state)
}

fn validate_grid(grid: &[f64]) -> Result<(), HapticError> {
    if grid.is_empty() {
        return Err(HapticError::InvalidParameter("alpha grid is empty".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(HapticError::InvalidParameter(format!("alpha {a} outside (0, 1]")));
    }
    Ok(())
}

/// Final cumulative accuracy of a zero-initialized forecaster with `alpha`.
pub fn alpha_accuracy(trace: &[HapticSample], alpha: f64, epsilon: f64) -> Result<f64, HapticError> {
    alpha_accuracy_shared(&[trace], alpha, epsilon)
}

/// Pooled accuracy of one zero-initialized forecaster per trace, all with
/// the same `alpha`.
pub fn alpha_accuracy_shared(traces: &[&[HapticSample]], alpha: f64, epsilon: f64) -> Result<f64, HapticError> {
    let init = ForecasterState::new(alpha)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for trace in traces {
        let (h, _) = run_forecaster(&init, trace, epsilon);
        hits += h.iter().filter(|x| **x).count();
        total += h.len();
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

pub const MIN_TOUCH_SAMPLES_FOR_ALPHA: usize = 100;

/// Grid value with the best final cumulative accuracy; ties go to the
/// smaller alpha.
pub fn optimize_alpha(trace: &[HapticSample], alpha_grid: &[f64], epsilon: f64) -> Result<f64, HapticError> {
    optimize_alpha_shared(&[trace], alpha_grid, epsilon)
}

/// [`optimize_alpha`] for a Local AI whose machines share one learning rate.
pub fn optimize_alpha_shared(traces: &[&[HapticSample]], alpha_grid: &[f64], epsilon: f64) -> Result<f64, HapticError> {
    validate_grid(alpha_grid)?;
    let touches: usize = traces.iter().map(|t| t.len()).sum();
    if touches < MIN_TOUCH_SAMPLES_FOR_ALPHA {
        return Err(HapticError::InsufficientData { needed: MIN_TOUCH_SAMPLES_FOR_ALPHA, got: touches });
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &alpha in &grid {
        let acc = alpha_accuracy_shared(traces, alpha, epsilon)?;
        if acc > best.1 {
            best = (alpha, acc);
        }
    }
    Ok(best.0)
}

/// `0.05, 0.10, ..., 1.00`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

pub const CONTROL_CSV_HEADER: [&str; 12] = ["t_us", "px", "py", "pz", "ox", "oy", "oz", "f1", "f2", "f3", "f4", "f5"];
pub const HAPTIC_CSV_HEADER: [&str; 6] = ["t_us", "a1", "a2", "a3", "a4", "a5"];

fn io_err(e: impl std::fmt::Display) -> HapticError {
    HapticError::Io(e.to_string())
}

pub fn write_control_csv<W: Write>(samples: &[ControlSample], out: W) -> Result<(), HapticError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONTROL_CSV_HEADER).map_err(io_err)?;
    for s in samples {
        let row = std::iter::once(s.t_us)
            .chain(s.hand_pos)
            .chain(s.hand_orient)
            .chain(s.finger_pressure)
            .map(|v| v.to_string());
        w.write_record(row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_haptic_csv<W: Write>(samples: &[HapticSample], out: W) -> Result<(), HapticError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HAPTIC_CSV_HEADER).map_err(io_err)?;
    for s in samples {
        w.write_record(std::iter::once(s.t_us).chain(s.amplitude).map(|v| v.to_string())).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>, HapticError> {
    let mut rdr = csv::Reader::from_reader(input);
    let got: Vec<String> = rdr.headers().map_err(io_err)?.iter().map(|h| h.trim().to_string()).collect();
    if got != header {
        return Err(HapticError::Io(format!("expected header {header:?}, got {got:?}")));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(io_err)?;
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| HapticError::Io(format!("row {}: bad number {f:?}", i + 2))))
                .collect()
        })
        .collect()
}

pub fn read_control_csv<R: Read>(input: R) -> Result<Vec<ControlSample>, HapticError> {
    read_rows(input, &CONTROL_CSV_HEADER)?
        .into_iter()
        .map(|r| {
            let mut s = ControlSample { t_us: r[0], hand_pos: [0.0; 3], hand_orient: [0.0; 3], finger_pressure: [0.0; FINGERS] };
            s.hand_pos.copy_from_slice(&r[1..4]);
            s.hand_orient.copy_from_slice(&r[4..7]);
            s.finger_pressure.copy_from_slice(&r[7..12]);
            Ok(s)
        })
        .collect()
}

pub fn read_haptic_csv<R: Read>(input: R) -> Result<Vec<HapticSample>, HapticError> {
    read_rows(input, &HAPTIC_CSV_HEADER)?
        .into_iter()
        .map(|r| {
            let mut amplitude = [0.0; FINGERS];
            amplitude.copy_from_slice(&r[1..6]);
            Ok(HapticSample { t_us: r[0], amplitude })
        })
        .collect()
}
