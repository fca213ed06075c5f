//! Temperature-tuned type-0 SPDC source, the emitted polarization state and
//! WDM routing of the two photons into arms A and B.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PS_PER_S;

/// Crystal temperature giving degenerate emission at 810 nm.
pub const DEGENERATE_TEMPERATURE_C: f64 = 26.5;
pub const DEGENERATE_WAVELENGTH_NM: f64 = 810.0;
/// Crystal temperature giving the 774 nm / 850 nm non-degenerate pair.
pub const NONDEGENERATE_TEMPERATURE_C: f64 = 34.0;
pub const NONDEGENERATE_SIGNAL_NM: f64 = 774.0;
/// Half of the degenerate wavelength.
pub const PUMP_WAVELENGTH_NM: f64 = DEGENERATE_WAVELENGTH_NM / 2.0;
pub const DEGENERATE_FWHM_NM: f64 = 7.0;
pub const NONDEGENERATE_FWHM_NM: f64 = 2.0;
/// Temperature range over which the tuning map is trusted.
pub const CALIBRATED_RANGE_C: (f64, f64) = (20.0, 40.0);

/// Allowed relative violation of `1/λs + 1/λi = 1/λp` for configured centers.
pub const ENERGY_CONSERVATION_TOLERANCE: f64 = 2e-3;

/// Spectral lines are Gaussians truncated at this many standard deviations.
pub const LINE_TRUNCATION_SIGMA: f64 = 8.0;

/// `FWHM = FWHM_PER_SIGMA · σ` for a Gaussian.
pub fn fwhm_per_sigma() -> f64 {
    2.0 * (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePreset {
    Degenerate,
    Nondegenerate,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub preset: SourcePreset,
    pub crystal_temperature_c: f64,
    pub pump_wavelength_nm: f64,
    /// Emitted pairs per second at the configured pump power.
    pub brightness_pairs_per_s: f64,
    pub signal_center_nm: f64,
    pub idler_center_nm: f64,
    pub signal_fwhm_nm: f64,
    /// Informational: idler wavelengths are derived from the signal by energy
    /// conservation, so the sampled idler width follows from the signal width.
    pub idler_fwhm_nm: f64,
}

impl SourceConfig {
    pub fn degenerate(brightness_pairs_per_s: f64) -> Self {
        SourceConfig {
            preset: SourcePreset::Degenerate,
            crystal_temperature_c: DEGENERATE_TEMPERATURE_C,
            pump_wavelength_nm: PUMP_WAVELENGTH_NM,
            brightness_pairs_per_s,
            signal_center_nm: DEGENERATE_WAVELENGTH_NM,
            idler_center_nm: DEGENERATE_WAVELENGTH_NM,
            signal_fwhm_nm: DEGENERATE_FWHM_NM,
            idler_fwhm_nm: DEGENERATE_FWHM_NM,
        }
    }

    pub fn nondegenerate(brightness_pairs_per_s: f64) -> Self {
        SourceConfig {
            preset: SourcePreset::Nondegenerate,
            crystal_temperature_c: NONDEGENERATE_TEMPERATURE_C,
            pump_wavelength_nm: PUMP_WAVELENGTH_NM,
            brightness_pairs_per_s,
            signal_center_nm: NONDEGENERATE_SIGNAL_NM,
            idler_center_nm: idler_wavelength(PUMP_WAVELENGTH_NM, NONDEGENERATE_SIGNAL_NM),
            signal_fwhm_nm: NONDEGENERATE_FWHM_NM,
            idler_fwhm_nm: NONDEGENERATE_FWHM_NM,
        }
    }

    /// Custom source whose line centers follow the temperature tuning map.
    pub fn at_temperature(&self, temperature_c: f64) -> Result<Self> {
        let (signal, idler) = phase_matched_wavelengths(temperature_c, self)?;
        Ok(SourceConfig {
            preset: SourcePreset::Custom,
            crystal_temperature_c: temperature_c,
            signal_center_nm: signal,
            idler_center_nm: idler,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pump_wavelength_nm", self.pump_wavelength_nm),
            ("signal_center_nm", self.signal_center_nm),
            ("idler_center_nm", self.idler_center_nm),
            ("signal_fwhm_nm", self.signal_fwhm_nm),
            ("idler_fwhm_nm", self.idler_fwhm_nm),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "source.{name} must be positive and finite (got {value})"
                )));
            }
        }
        if !(self.brightness_pairs_per_s >= 0.0 && self.brightness_pairs_per_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "source.brightness_pairs_per_s must be ≥ 0 (got {})",
                self.brightness_pairs_per_s
            )));
        }
        let mismatch = energy_mismatch(self.pump_wavelength_nm, self.signal_center_nm, self.idler_center_nm);
        if mismatch > ENERGY_CONSERVATION_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "source centers violate energy conservation by {:.3}% (limit {:.1}%)",
                mismatch * 100.0,
                ENERGY_CONSERVATION_TOLERANCE * 100.0
            )));
        }
        Ok(())
    }

    pub fn signal_sigma_nm(&self) -> f64 {
        self.signal_fwhm_nm / fwhm_per_sigma()
    }

    /// Range of signal and idler wavelengths the sampler can produce.
    pub fn wavelength_span_nm(&self) -> (f64, f64) {
        let half = LINE_TRUNCATION_SIGMA * self.signal_sigma_nm();
        let lo_s = self.signal_center_nm - half;
        let hi_s = self.signal_center_nm + half;
        let a = idler_wavelength(self.pump_wavelength_nm, lo_s);
        let b = idler_wavelength(self.pump_wavelength_nm, hi_s);
        (lo_s.min(a).min(b), hi_s.max(a).max(b))
    }
}

/// Idler wavelength from `1/λi = 1/λp − 1/λs`.
pub fn idler_wavelength(pump_nm: f64, signal_nm: f64) -> f64 {
    1.0 / (1.0 / pump_nm - 1.0 / signal_nm)
}

/// Relative violation of photon energy conservation.
pub fn energy_mismatch(pump_nm: f64, signal_nm: f64, idler_nm: f64) -> f64 {
    let pump = 1.0 / pump_nm;
    ((1.0 / signal_nm + 1.0 / idler_nm) - pump).abs() / pump
}

/// Signal and idler center wavelengths at crystal temperature `temperature_c`.
///
/// The signal follows the straight line through the two calibration points
/// (26.5 °C → 810 nm, 34 °C → 774 nm); the idler follows from energy
/// conservation with the source's pump wavelength.
pub fn phase_matched_wavelengths(temperature_c: f64, source: &SourceConfig) -> Result<(f64, f64)> {
    let (min_c, max_c) = CALIBRATED_RANGE_C;
    if !(min_c..=max_c).contains(&temperature_c) {
        return Err(Error::OutOfCalibration {
            temperature_c,
            min_c,
            max_c,
        });
    }
    let slope =
        (NONDEGENERATE_SIGNAL_NM - DEGENERATE_WAVELENGTH_NM) / (NONDEGENERATE_TEMPERATURE_C - DEGENERATE_TEMPERATURE_C);
    let signal = DEGENERATE_WAVELENGTH_NM + slope * (temperature_c - DEGENERATE_TEMPERATURE_C);
    Ok((signal, idler_wavelength(source.pump_wavelength_nm, signal)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum PhaseSign {
    Plus,
    Minus,
}

impl PhaseSign {
    pub fn value(self) -> f64 {
        match self {
            PhaseSign::Plus => 1.0,
            PhaseSign::Minus => -1.0,
        }
    }
}

impl TryFrom<i8> for PhaseSign {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(PhaseSign::Plus),
            -1 => Ok(PhaseSign::Minus),
            other => Err(format!("phase_sign must be +1 or -1, got {other}")),
        }
    }
}

impl From<PhaseSign> for i8 {
    fn from(s: PhaseSign) -> i8 {
        match s {
            PhaseSign::Plus => 1,
            PhaseSign::Minus => -1,
        }
    }
}

/// Two-photon polarization state `(|HH⟩ ± |VV⟩)/√2` with reduced coherences.
///
/// `v_hv` scales the H/V correlation, `v_da` the diagonal-basis coherence; both
/// equal to one with a positive sign gives ideal |Φ⁺⟩ statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationModel {
    pub v_hv: f64,
    pub v_da: f64,
    pub phase_sign: PhaseSign,
}

impl PolarizationModel {
    pub const IDEAL: PolarizationModel = PolarizationModel {
        v_hv: 1.0,
        v_da: 1.0,
        phase_sign: PhaseSign::Plus,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_hv", self.v_hv), ("v_da", self.v_da)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "polarization.{name} must lie in [0, 1] (got {v})"
                )));
            }
        }
        Ok(())
    }
}

/// One SPDC emission. The polarization state is shared by all pairs of a run
/// and held by the run configuration rather than per event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvent {
    pub pair_id: u64,
    pub emission_time_ps: f64,
    pub signal_nm: f64,
    pub idler_nm: f64,
}

/// Draws emission times and wavelengths for one source.
#[derive(Debug, Clone)]
pub struct EmissionSampler {
    interval: Option<Exp<f64>>,
    pump_nm: f64,
    center_nm: f64,
    sigma_nm: f64,
}

impl EmissionSampler {
    /// Sampler for a Poisson process of `rate_per_s` events.
    pub fn new(source: &SourceConfig, rate_per_s: f64) -> Self {
        let interval = (rate_per_s > 0.0).then(|| Exp::new(rate_per_s / PS_PER_S).expect("positive rate"));
        EmissionSampler {
            interval,
            pump_nm: source.pump_wavelength_nm,
            center_nm: source.signal_center_nm,
            sigma_nm: source.signal_sigma_nm(),
        }
    }

    /// Waiting time to the next emission in ps, `None` for a silent source.
    #[inline]
    pub fn next_interval_ps<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        self.interval.map(|d| d.sample(rng))
    }

    /// Signal and idler wavelengths of one pair.
    #[inline]
    pub fn wavelengths<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z = loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= LINE_TRUNCATION_SIGMA {
                break z;
            }
        };
        let signal = self.center_nm + self.sigma_nm * z;
        (signal, idler_wavelength(self.pump_nm, signal))
    }
}

/// Pair emissions over `[0, duration_s)` as a homogeneous Poisson process with
/// rate equal to the source brightness.
pub fn sample_pair_emissions(source: &SourceConfig, duration_s: f64, seed: u64) -> Vec<PairEvent> {
    use rand::SeedableRng;
    let mut rng = crate::rng::SimRng::seed_from_u64(seed);
    sample_pair_emissions_with(source, duration_s, &mut rng)
}

pub fn sample_pair_emissions_with<R: Rng + ?Sized>(
    source: &SourceConfig,
    duration_s: f64,
    rng: &mut R,
) -> Vec<PairEvent> {
    let sampler = EmissionSampler::new(source, source.brightness_pairs_per_s);
    let end_ps = duration_s.max(0.0) * PS_PER_S;
    let mut events = Vec::with_capacity((source.brightness_pairs_per_s * duration_s.max(0.0)) as usize + 16);
    let mut t = 0.0;
    while let Some(dt) = sampler.next_interval_ps(rng) {
        t += dt;
        if t >= end_ps {
            break;
        }
        let (signal_nm, idler_nm) = sampler.wavelengths(rng);
        events.push(PairEvent {
            pair_id: events.len() as u64,
            emission_time_ps: t,
            signal_nm,
            idler_nm,
        });
    }
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub fn other(self) -> Arm {
        match self {
            Arm::A => Arm::B,
            Arm::B => Arm::A,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdmSpec {
    pub channel_a_center_nm: f64,
    pub channel_b_center_nm: f64,
    /// Suppression of the wrong port; `inf` routes deterministically.
    pub isolation_db: f64,
    /// Signal and idler share one spectral channel; the WDM acts as a 50/50
    /// beam splitter.
    pub degenerate_mode: bool,
}

impl WdmSpec {
    pub fn for_source(source: &SourceConfig, isolation_db: f64) -> Self {
        let degenerate = (source.signal_center_nm - source.idler_center_nm).abs()
            < 0.5 * (source.signal_fwhm_nm + source.idler_fwhm_nm);
        WdmSpec {
            channel_a_center_nm: source.signal_center_nm,
            channel_b_center_nm: source.idler_center_nm,
            isolation_db,
            degenerate_mode: degenerate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.isolation_db >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wdm.isolation_db must be ≥ 0 (got {})",
                self.isolation_db
            )));
        }
        Ok(())
    }

    /// Probability that a photon leaves through its matched port.
    pub fn matched_port_probability(&self) -> f64 {
        if self.degenerate_mode {
            0.5
        } else {
            1.0 - 10f64.powf(-self.isolation_db / 10.0)
        }
    }

    /// Port whose center is nearest to `wavelength_nm`.
    pub fn matched_arm(&self, wavelength_nm: f64) -> Arm {
        if (wavelength_nm - self.channel_a_center_nm).abs() <= (wavelength_nm - self.channel_b_center_nm).abs() {
            Arm::A
        } else {
            Arm::B
        }
    }

    /// Probability that the two photons of a pair leave through different arms.
    pub fn split_probability(&self) -> f64 {
        if self.degenerate_mode {
            0.5
        } else {
            let p = self.matched_port_probability();
            p * p + (1.0 - p) * (1.0 - p)
        }
    }

    pub fn router(&self) -> WdmRouter {
        WdmRouter {
            spec: self.clone(),
            matched_probability: self.matched_port_probability(),
        }
    }
}

/// `WdmSpec` with its port probability precomputed, for per-pair routing.
#[derive(Debug, Clone)]
pub struct WdmRouter {
    spec: WdmSpec,
    matched_probability: f64,
}

impl WdmRouter {
    #[inline]
    fn route_photon<R: Rng + ?Sized>(&self, wavelength_nm: f64, rng: &mut R) -> Arm {
        if self.spec.degenerate_mode {
            if rng.random::<bool>() {
                Arm::A
            } else {
                Arm::B
            }
        } else {
            let matched = self.spec.matched_arm(wavelength_nm);
            if rng.random::<f64>() < self.matched_probability {
                matched
            } else {
                matched.other()
            }
        }
    }

    #[inline]
    pub fn route<R: Rng + ?Sized>(&self, event: &PairEvent, rng: &mut R) -> Routing {
        Routing {
            signal_arm: self.route_photon(event.signal_nm, rng),
            idler_arm: self.route_photon(event.idler_nm, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routing {
    pub signal_arm: Arm,
    pub idler_arm: Arm,
}

impl Routing {
    pub fn is_split(&self) -> bool {
        self.signal_arm != self.idler_arm
    }
}

/// Routes both photons of `event` through the WDM.
pub fn wdm_route<R: Rng + ?Sized>(event: &PairEvent, wdm: &WdmSpec, rng: &mut R) -> Routing {
    wdm.router().route(event, rng)
}
