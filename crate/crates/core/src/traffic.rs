//! Generalized Pareto inter-arrival traffic: sampling, stream generation,
//! probability-weighted-moment fitting and a one-sample Kolmogorov-Smirnov
//! goodness-of-fit check.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SimRng};

/// Minimum sample count accepted by [`fit_gpd`] and [`ks_test`].
pub const MIN_FIT_SAMPLES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("stream i/o: {0}")]
    Io(String),
}

/// Shape / scale / location of a generalized Pareto law. Scale and location
/// are in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpdParams {
    pub shape: f64,
    pub scale_us: f64,
    pub location_us: f64,
}

impl Default for GpdParams {
    /// Roughly 1 kHz mean rate: mean inter-arrival 900 / 0.9 = 1000 µs.
    fn default() -> Self {
        GpdParams { shape: 0.1, scale_us: 900.0, location_us: 0.0 }
    }
}

impl GpdParams {
    pub fn new(shape: f64, scale_us: f64, location_us: f64) -> Result<Self, TrafficError> {
        let p = GpdParams { shape, scale_us, location_us };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !self.shape.is_finite() {
            return Err(TrafficError::InvalidParameter(format!("shape must be finite, got {}", self.shape)));
        }
        if !(self.scale_us.is_finite() && self.scale_us > 0.0) {
            return Err(TrafficError::InvalidParameter(format!("scale must be > 0, got {}", self.scale_us)));
        }
        if !(self.location_us.is_finite() && self.location_us >= 0.0) {
            return Err(TrafficError::InvalidParameter(format!(
                "location must be >= 0, got {}",
                self.location_us
            )));
        }
        Ok(())
    }

    /// Mean, defined only for shape < 1.
    pub fn mean(&self) -> Option<f64> {
        (self.shape < 1.0).then(|| self.location_us + self.scale_us / (1.0 - self.shape))
    }

    /// Variance, defined only for shape < 1/2.
    pub fn variance(&self) -> Option<f64> {
        (self.shape < 0.5).then(|| {
            let s = self.scale_us;
            let xi = self.shape;
            s * s / ((1.0 - xi) * (1.0 - xi) * (1.0 - 2.0 * xi))
        })
    }

    /// Squared coefficient of variation of the inter-arrival law.
    pub fn scv(&self) -> Option<f64> {
        let m = self.mean()?;
        let v = self.variance()?;
        (m > 0.0).then(|| v / (m * m))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location_us) / self.scale_us;
        if z <= 0.0 {
            return 0.0;
        }
        if self.shape == 0.0 {
            return -libm::expm1(-z);
        }
        let base = 1.0 + self.shape * z;
        if base <= 0.0 {
            // Past the finite upper end point (shape < 0).
            return 1.0;
        }
        -libm::expm1(-libm::log1p(self.shape * z) / self.shape)
    }
}

/// Inverse-transform sample for a uniform draw in `[0, 1)`.
pub fn sample_gpd(params: &GpdParams, uniform: f64) -> Result<f64, TrafficError> {
    params.validate()?;
    if !(0.0..1.0).contains(&uniform) {
        return Err(TrafficError::InvalidParameter(format!("uniform must lie in [0,1), got {uniform}")));
    }
    Ok(quantile(params, uniform))
}

#[inline]
fn quantile(p: &GpdParams, u: f64) -> f64 {
    let log_tail = libm::log1p(-u);
    let excess = if p.shape == 0.0 {
        -log_tail
    } else {
        libm::expm1(-p.shape * log_tail) / p.shape
    };
    p.location_us + p.scale_us * excess
}

/// Draws one inter-arrival from `rng`; `params` must already be validated.
#[inline]
pub(crate) fn draw(params: &GpdParams, rng: &mut SimRng) -> f64 {
    quantile(params, rng::uniform(rng))
}

/// Arrival instants built from i.i.d. generalized Pareto inter-arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalStream {
    pub timestamps: Vec<f64>,
    pub params: GpdParams,
    pub seed: u64,
}

impl ArrivalStream {
    pub fn inter_arrivals(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.timestamps
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Writes a single `timestamp_us` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrafficError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| TrafficError::Io(e.to_string());
        w.write_record(["timestamp_us"]).map_err(io)?;
        for t in &self.timestamps {
            w.write_record([format!("{t}")]).map_err(io)?;
        }
        w.flush().map_err(|e| TrafficError::Io(e.to_string()))
    }
}

/// Cumulative sums of GPD inter-arrivals up to (and excluding the first
/// arrival past) `horizon_us`.
pub fn generate_stream(params: &GpdParams, horizon_us: f64, seed: u64) -> Result<ArrivalStream, TrafficError> {
    params.validate()?;
    if !(horizon_us.is_finite() && horizon_us > 0.0) {
        return Err(TrafficError::InvalidParameter(format!("horizon must be > 0, got {horizon_us}")));
    }
    let mut rng = rng::stream_rng(seed, rng::streams::TRAFFIC);
    let mut timestamps = Vec::new();
    let mut t = 0.0;
    loop {
        t += draw(params, &mut rng);
        if t > horizon_us {
            break;
        }
        timestamps.push(t);
    }
    Ok(ArrivalStream { timestamps, params: *params, seed })
}

/// Same random sequence as [`generate_stream`], truncated to a fixed count.
pub fn generate_count(params: &GpdParams, count: usize, seed: u64) -> Result<ArrivalStream, TrafficError> {
    params.validate()?;
    let mut rng = rng::stream_rng(seed, rng::streams::TRAFFIC);
    let mut t = 0.0;
    let timestamps = (0..count)
        .map(|_| {
            t += draw(params, &mut rng);
            t
        })
        .collect();
    Ok(ArrivalStream { timestamps, params: *params, seed })
}

/// Probability-weighted-moment (L-moment) fit.
///
/// Location comes from the three-parameter L-moment solution, clamped into
/// `[0, min(sample)]`; shape and scale are then re-solved from the first two
/// L-moments of the excesses over that location.
pub fn fit_gpd(inter_arrivals: &[f64]) -> Result<GpdParams, TrafficError> {
    let n = inter_arrivals.len();
    if n < MIN_FIT_SAMPLES {
        return Err(TrafficError::InsufficientData { needed: MIN_FIT_SAMPLES, got: n });
    }
    if inter_arrivals.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(TrafficError::InvalidParameter("inter-arrivals must be finite and >= 0".into()));
    }
    let mut xs = inter_arrivals.to_vec();
    xs.sort_by(f64::total_cmp);
    let (l1, l2, l3) = sample_l_moments(&xs);
    if l2 <= 0.0 || !l2.is_finite() {
        return Err(TrafficError::DegenerateFit("zero dispersion in inter-arrivals".into()));
    }

    // Hosking's k = -shape.
    let t3 = l3 / l2;
    let k3 = (1.0 - 3.0 * t3) / (1.0 + t3);
    let scale3 = l2 * (1.0 + k3) * (2.0 + k3);
    let loc3 = l1 - scale3 / (1.0 + k3);
    let location = loc3.clamp(0.0, xs[0]);

    let excess_mean = l1 - location;
    let k = excess_mean / l2 - 2.0;
    let scale = excess_mean * (1.0 + k);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(TrafficError::DegenerateFit(format!("non-positive scale estimate {scale}")));
    }
    Ok(GpdParams { shape: -k, scale_us: scale, location_us: location })
}

fn sample_l_moments(sorted: &[f64]) -> (f64, f64, f64) {
    let n = sorted.len() as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (j, &x) in sorted.iter().enumerate() {
        let j = j as f64;
        b0 += x;
        b1 += x * j / (n - 1.0);
        b2 += x * j * (j - 1.0) / ((n - 1.0) * (n - 2.0));
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;
    (b0, 2.0 * b1 - b0, 6.0 * b2 - 6.0 * b1 + b0)
}

/// Result of a one-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Asymptotic critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(n: usize, significance: f64) -> f64 {
    (-(significance / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

pub fn ks_test(inter_arrivals: &[f64], params: &GpdParams, significance: f64) -> Result<KsOutcome, TrafficError> {
    if !(significance > 0.0 && significance <= 0.5) {
        return Err(TrafficError::InvalidParameter(format!("significance must lie in (0, 0.5], got {significance}")));
    }
    params.validate()?;
    let n = inter_arrivals.len();
    if n < MIN_FIT_SAMPLES {
        return Err(TrafficError::InsufficientData { needed: MIN_FIT_SAMPLES, got: n });
    }
    let mut xs = inter_arrivals.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = params.cdf(x);
        let above = (i as f64 + 1.0) / nf - f;
        let below = f - i as f64 / nf;
        d.max(above).max(below)
    });
    let critical = ks_critical(n, significance);
    Ok(KsOutcome { statistic, critical, pass: statistic < critical })
}

/// Reads inter-arrivals from CSV. A `timestamp_us` column is differenced;
/// otherwise the first column is taken as inter-arrival times directly.
pub fn read_inter_arrivals_csv<R: Read>(input: R) -> Result<Vec<f64>, TrafficError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| TrafficError::Io(e.to_string()))?.clone();
    let is_timestamps = headers.get(0).map(|h| h.trim() == "timestamp_us").unwrap_or(false);
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TrafficError::Io(e.to_string()))?;
        let field = rec.get(0).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| TrafficError::Io(format!("row {}: cannot parse {field:?} as a number", line + 2)))?;
        values.push(v);
    }
    if is_timestamps {
        let mut prev = 0.0;
        Ok(values
            .into_iter()
            .map(|t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect())
    } else {
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(shape: f64, scale: f64, loc: f64) -> GpdParams {
        GpdParams::new(shape, scale, loc).unwrap()
    }

    #[test]
    fn exponential_limit_unit_quantile() {
        let u = 1.0 - (-1.0f64).exp();
        assert_abs_diff_eq!(sample_gpd(&p(0.0, 1.0, 0.0), u).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_quantile_is_location() {
        for params in [p(0.0, 1.0, 0.0), p(0.3, 5.0, 2.5), p(-0.2, 1.0, 7.0)] {
            assert_eq!(sample_gpd(&params, 0.0).unwrap(), params.location_us);
        }
    }

    #[test]
    fn empirical_mean_matches_closed_form() {
        let params = p(0.2, 1.0, 0.0);
        let mut r = rng::stream_rng(11, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| draw(&params, &mut r)).sum::<f64>() / n as f64;
        // closed form: 0 + 1 / (1 - 0.2)
        assert_abs_diff_eq!(mean, 1.25, epsilon = 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GpdParams::new(0.1, 0.0, 0.0).is_err());
        assert!(GpdParams::new(0.1, 1.0, -1.0).is_err());
        assert!(sample_gpd(&p(0.1, 1.0, 0.0), 1.0).is_err());
        assert!(sample_gpd(&p(0.1, 1.0, 0.0), -0.1).is_err());
        assert!(generate_stream(&GpdParams::default(), 0.0, 1).is_err());
    }

    #[test]
    fn moments_defined_only_below_thresholds() {
        assert!(p(0.99, 1.0, 0.0).mean().is_some());
        assert!(p(1.0, 1.0, 0.0).mean().is_none());
        assert!(p(0.49, 1.0, 0.0).variance().is_some());
        assert!(p(0.5, 1.0, 0.0).variance().is_none());
        // scv of shape 0.1 is 1 / (1 - 2 * 0.1)
        assert_abs_diff_eq!(p(0.1, 900.0, 0.0).scv().unwrap(), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn stream_count_near_horizon_over_mean() {
        let s = generate_stream(&p(0.0, 1000.0, 0.0), 1e6, 7).unwrap();
        let n = s.len() as f64;
        assert!((900.0..=1100.0).contains(&n), "got {n} arrivals");
    }

    #[test]
    fn horizon_below_location_gives_empty_stream() {
        let params = p(0.1, 10.0, 100.0);
        assert!(generate_stream(&params, 50.0, 3).unwrap().is_empty());
    }

    #[test]
    fn streams_are_deterministic() {
        let a = generate_stream(&GpdParams::default(), 5e5, 42).unwrap();
        let b = generate_stream(&GpdParams::default(), 5e5, 42).unwrap();
        assert_eq!(a, b);
        let prefix = generate_count(&GpdParams::default(), a.len(), 42).unwrap();
        assert_eq!(prefix.timestamps, a.timestamps);
    }

    #[test]
    fn fit_recovers_generating_parameters() {
        let truth = p(0.1, 500.0, 0.0);
        let s = generate_count(&truth, 100_000, 5).unwrap();
        let fit = fit_gpd(&s.inter_arrivals()).unwrap();
        assert!((fit.scale_us - 500.0).abs() / 500.0 < 0.05, "{fit:?}");
        assert!((fit.shape - 0.1).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn fit_error_paths() {
        assert_eq!(
            fit_gpd(&[1.0; 49]).unwrap_err(),
            TrafficError::InsufficientData { needed: 50, got: 49 }
        );
        assert!(matches!(fit_gpd(&[3.0; 200]), Err(TrafficError::DegenerateFit(_))));
    }

    #[test]
    fn ks_rejects_gross_mismatch() {
        let mut r = rng::stream_rng(9, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng::exponential(&mut r, 1.0)).collect();
        let out = ks_test(&xs, &p(0.8, 1.0, 0.0), 0.05).unwrap();
        assert!(!out.pass, "{out:?}");
    }

    #[test]
    fn ks_degenerate_samples_at_location() {
        let params = p(0.1, 1.0, 2.0);
        let out = ks_test(&[2.0; 100], &params, 0.05).unwrap();
        assert_abs_diff_eq!(out.statistic, 1.0, epsilon = 1e-12);
        assert!(!out.pass);
    }

    #[test]
    fn ks_rejects_bad_significance() {
        let xs = [1.0; 100];
        assert!(ks_test(&xs, &GpdParams::default(), 0.0).is_err());
        assert!(ks_test(&xs, &GpdParams::default(), 0.6).is_err());
    }

    #[test]
    fn csv_round_trip_differences_timestamps() {
        let s = generate_count(&GpdParams::default(), 60, 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = read_inter_arrivals_csv(buf.as_slice()).unwrap();
        for (a, b) in back.iter().zip(s.inter_arrivals()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn quantile_strictly_increasing(shape in -0.4f64..0.9, scale in 0.1f64..1e4,
                                        u in 0.0f64..0.998, du in 1e-6f64..1e-3) {
            let params = p(shape, scale, 0.0);
            let a = sample_gpd(&params, u).unwrap();
            let b = sample_gpd(&params, u + du).unwrap();
            prop_assert!(b > a);
            prop_assert!(a >= params.location_us);
        }

        #[test]
        fn shape_zero_continuity(u in 0.0f64..=0.999) {
            let a = sample_gpd(&p(1e-8, 1.0, 0.0), u).unwrap();
            let b = sample_gpd(&p(0.0, 1.0, 0.0), u).unwrap();
            prop_assert!((a - b).abs() < 1e-4);
        }

        #[test]
        fn cdf_inverts_quantile(shape in -0.4f64..0.9, u in 0.0f64..0.999) {
            let params = p(shape, 3.0, 1.0);
            let x = sample_gpd(&params, u).unwrap();
            prop_assert!((params.cdf(x) - u).abs() < 1e-9);
        }
    }
}
