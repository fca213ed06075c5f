//! Polarization analysis (HWP + PBS) and GM-APD detection.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::PolarizationModel;
use crate::PS_PER_S;

/// Half-wave plate angles in front of the PBS in each arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerSettings {
    pub hwp_a_deg: f64,
    pub hwp_b_deg: f64,
}

impl AnalyzerSettings {
    pub fn new(hwp_a_deg: f64, hwp_b_deg: f64) -> Self {
        AnalyzerSettings { hwp_a_deg, hwp_b_deg }
    }

    /// Projection angles `(α, β) = 2 × HWP`, reduced modulo 180°.
    pub fn projection_angles(&self) -> (f64, f64) {
        (
            (2.0 * self.hwp_a_deg).rem_euclid(180.0),
            (2.0 * self.hwp_b_deg).rem_euclid(180.0),
        )
    }
}

/// Probability that both photons leave the transmitted PBS ports when
/// projected onto linear polarizations at `alpha_deg` and `beta_deg`.
pub fn coincidence_probability(pol: &PolarizationModel, alpha_deg: f64, beta_deg: f64) -> f64 {
    let (a, b) = (2.0 * alpha_deg.to_radians(), 2.0 * beta_deg.to_radians());
    0.25 * (1.0 + pol.v_hv * a.cos() * b.cos() + pol.phase_sign.value() * pol.v_da * a.sin() * b.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    Transmitted,
    Reflected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointOutcome {
    pub a: Port,
    pub b: Port,
}

/// Probabilities of (T,T), (T,R), (R,T), (R,R).
pub fn outcome_probabilities(pol: &PolarizationModel, alpha_deg: f64, beta_deg: f64) -> [f64; 4] {
    [
        coincidence_probability(pol, alpha_deg, beta_deg),
        coincidence_probability(pol, alpha_deg, beta_deg + 90.0),
        coincidence_probability(pol, alpha_deg + 90.0, beta_deg),
        coincidence_probability(pol, alpha_deg + 90.0, beta_deg + 90.0),
    ]
}

/// Precomputed joint-outcome sampler for fixed projection angles.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionSampler {
    cumulative: [f64; 3],
}

impl ProjectionSampler {
    pub fn new(pol: &PolarizationModel, alpha_deg: f64, beta_deg: f64) -> Self {
        let p = outcome_probabilities(pol, alpha_deg, beta_deg);
        ProjectionSampler {
            cumulative: [p[0], p[0] + p[1], p[0] + p[1] + p[2]],
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JointOutcome {
        use Port::*;
        let u: f64 = rng.random();
        let (a, b) = if u < self.cumulative[0] {
            (Transmitted, Transmitted)
        } else if u < self.cumulative[1] {
            (Transmitted, Reflected)
        } else if u < self.cumulative[2] {
            (Reflected, Transmitted)
        } else {
            (Reflected, Reflected)
        };
        JointOutcome { a, b }
    }
}

/// Samples which PBS port each photon of a pair leaves through.
pub fn measure_pair<R: Rng + ?Sized>(
    pol: &PolarizationModel,
    settings: &AnalyzerSettings,
    rng: &mut R,
) -> JointOutcome {
    let (alpha, beta) = settings.projection_angles();
    ProjectionSampler::new(pol, alpha, beta).sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_rate_per_s: f64,
    /// Non-paralyzable.
    pub dead_time_ns: f64,
    pub jitter_sigma_ps: f64,
    pub time_resolution_ps: u64,
}

impl DetectorSpec {
    /// Si GM-APD. Only the efficiency is a measured figure; dark rate, dead
    /// time and jitter are typical-device placeholders.
    pub fn si_apd() -> Self {
        DetectorSpec {
            efficiency: 0.50,
            dark_rate_per_s: 500.0,
            dead_time_ns: 1000.0,
            jitter_sigma_ps: 350.0,
            time_resolution_ps: 1,
        }
    }

    /// InGaAs GM-APD, same caveats as [`DetectorSpec::si_apd`].
    pub fn ingaas_apd() -> Self {
        DetectorSpec {
            efficiency: 0.25,
            dark_rate_per_s: 2000.0,
            dead_time_ns: 10_000.0,
            jitter_sigma_ps: 250.0,
            time_resolution_ps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..=1.0).contains(&self.efficiency) {
            return bad(format!(
                "detector efficiency must lie in [0, 1] (got {})",
                self.efficiency
            ));
        }
        if !(self.dark_rate_per_s >= 0.0 && self.dark_rate_per_s.is_finite()) {
            return bad(format!(
                "detector dark_rate_per_s must be ≥ 0 (got {})",
                self.dark_rate_per_s
            ));
        }
        if !(self.dead_time_ns >= 0.0 && self.dead_time_ns.is_finite()) {
            return bad(format!("detector dead_time_ns must be ≥ 0 (got {})", self.dead_time_ns));
        }
        if !(self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps.is_finite()) {
            return bad(format!(
                "detector jitter_sigma_ps must be ≥ 0 (got {})",
                self.jitter_sigma_ps
            ));
        }
        if self.time_resolution_ps == 0 {
            return bad("detector time_resolution_ps must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn dead_time_ps(&self) -> u64 {
        (self.dead_time_ns * 1e3).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub time_ps: u64,
    pub channel: u16,
}

/// Detector clicks ordered by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeTagStream {
    pub records: Vec<TimeTag>,
    pub duration_s: f64,
}

impl TimeTagStream {
    pub fn new(records: Vec<TimeTag>, duration_s: f64) -> Self {
        TimeTagStream { records, duration_s }
    }

    pub fn from_times(times: &[u64], channel: u16, duration_s: f64) -> Self {
        TimeTagStream {
            records: times.iter().map(|&time_ps| TimeTag { time_ps, channel }).collect(),
            duration_s,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_ordered(&self) -> bool {
        self.records.windows(2).all(|w| w[0].time_ps <= w[1].time_ps)
    }

    /// Times of `channel`, in order.
    pub fn channel_times(&self, channel: u16) -> Vec<u64> {
        self.records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| r.time_ps)
            .collect()
    }

    pub fn times(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.time_ps).collect()
    }

    /// Ordered merge; equal times keep channel order.
    pub fn merge(streams: &[TimeTagStream]) -> TimeTagStream {
        let mut records: Vec<TimeTag> = streams.iter().flat_map(|s| s.records.iter().copied()).collect();
        records.sort_unstable();
        let duration_s = streams.iter().map(|s| s.duration_s).fold(0.0, f64::max);
        TimeTagStream { records, duration_s }
    }
}

/// Converts photon arrival times (ps) on one channel into detector tags over
/// the acquisition window `[0, duration_s)`.
///
/// Each arrival fires with probability `efficiency`; fired times get Gaussian
/// jitter and are quantized to the time resolution. Dark counts are added as a
/// Poisson process, and after sorting every tag closer than the dead time to
/// the previous accepted tag is dropped. Tags outside the window are not
/// recorded. Input order does not matter.
pub fn detect_stream<R: Rng + ?Sized>(
    arrival_times_ps: &[f64],
    channel: u16,
    det: &DetectorSpec,
    duration_s: f64,
    rng: &mut R,
) -> TimeTagStream {
    let window_ps = duration_s.max(0.0) * PS_PER_S;
    let res = det.time_resolution_ps.max(1) as f64;
    let quantize = |t: f64| -> Option<u64> {
        let q = (t / res).round() * res;
        (q >= 0.0 && q < window_ps).then_some(q as u64)
    };
    let jitter = (det.jitter_sigma_ps > 0.0).then(|| Normal::new(0.0, det.jitter_sigma_ps).expect("finite sigma"));

    let mut times: Vec<u64> = Vec::with_capacity((arrival_times_ps.len() as f64 * det.efficiency) as usize + 16);
    for &t in arrival_times_ps {
        if det.efficiency < 1.0 && rng.random::<f64>() >= det.efficiency {
            continue;
        }
        let t = match &jitter {
            Some(n) => t + n.sample(rng),
            None => t,
        };
        if let Some(q) = quantize(t) {
            times.push(q);
        }
    }
    if det.dark_rate_per_s > 0.0 && window_ps > 0.0 {
        let gaps = Exp::new(det.dark_rate_per_s / PS_PER_S).expect("positive rate");
        let mut t = 0.0;
        loop {
            t += gaps.sample(rng);
            if t >= window_ps {
                break;
            }
            if let Some(q) = quantize(t) {
                times.push(q);
            }
        }
    }
    times.sort_unstable();
    apply_dead_time(&mut times, det.dead_time_ps());
    TimeTagStream::from_times(&times, channel, duration_s)
}

/// Non-paralyzable dead time over sorted `times`, in place.
pub fn apply_dead_time(times: &mut Vec<u64>, dead_time_ps: u64) {
    if dead_time_ps == 0 || times.is_empty() {
        return;
    }
    let mut last = times[0];
    let mut kept = 1;
    for i in 1..times.len() {
        let t = times[i];
        if t - last >= dead_time_ps {
            times[kept] = t;
            kept += 1;
            last = t;
        }
    }
    times.truncate(kept);
}
