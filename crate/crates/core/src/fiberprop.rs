//! Few-mode propagation of NIR photons through G.652D fiber.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::Arm;
use crate::{PS_PER_S, SPEED_OF_LIGHT_M_PER_S};

/// First zero of J0: LP11 cutoff of a step-index fiber.
pub const LP11_CUTOFF: f64 = 2.404_825_557_695_773;
/// First zero of J1: LP21 and LP02 cutoff.
pub const LP21_LP02_CUTOFF: f64 = 3.831_705_970_207_512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeId {
    LP01,
    LP11,
    LP21,
    LP02,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSetPolicy {
    /// At most LP01 and LP11, however large V is.
    PaperTwoMode,
    /// Step-index Bessel cutoffs.
    CutoffDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttenuationPoint {
    pub wavelength_nm: f64,
    pub db_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    pub length_km: f64,
    pub core_radius_um: f64,
    pub numerical_aperture: f64,
    pub mode_field_diameter_um: f64,
    pub group_index: f64,
    /// LP11 minus LP01 group delay per km.
    pub dgd_ns_per_km: f64,
    /// Probability that a photon is launched into LP11 when LP11 is guided.
    pub lp11_excitation: f64,
    pub mode_set_policy: ModeSetPolicy,
    /// Sorted by wavelength; linear interpolation in between, edge values held
    /// outside.
    pub attenuation: Vec<AttenuationPoint>,
}

/// Datasheet-style attenuation of G.652D fiber. The NIR band is flat at
/// 3 dB/km; 1310 nm and 1550 nm carry typical telecom-window values.
pub fn g652d_attenuation_table() -> Vec<AttenuationPoint> {
    [
        (700.0, 3.0),
        (900.0, 3.0),
        (1310.0, 0.33),
        (1550.0, 0.22),
        (1625.0, 0.22),
    ]
    .into_iter()
    .map(|(wavelength_nm, db_per_km)| AttenuationPoint {
        wavelength_nm,
        db_per_km,
    })
    .collect()
}

impl FiberSpec {
    pub const DEFAULT_DGD_NS_PER_KM: f64 = 2.0;

    pub fn g652d(length_km: f64) -> Self {
        FiberSpec {
            length_km,
            core_radius_um: 4.1,
            numerical_aperture: 0.14,
            mode_field_diameter_um: 9.2,
            group_index: 1.47,
            dgd_ns_per_km: Self::DEFAULT_DGD_NS_PER_KM,
            lp11_excitation: 0.0,
            mode_set_policy: ModeSetPolicy::PaperTwoMode,
            attenuation: g652d_attenuation_table(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return bad(format!("fiber length_km must be ≥ 0 (got {})", self.length_km));
        }
        if !(0.0..=1.0).contains(&self.lp11_excitation) {
            return bad(format!(
                "fiber lp11_excitation must lie in [0, 1] (got {})",
                self.lp11_excitation
            ));
        }
        if !(self.core_radius_um > 0.0) || !(self.numerical_aperture >= 0.0) {
            return bad("fiber core_radius_um must be > 0 and numerical_aperture ≥ 0".into());
        }
        if !(self.group_index >= 1.0) {
            return bad(format!("fiber group_index must be ≥ 1 (got {})", self.group_index));
        }
        if !(self.dgd_ns_per_km >= 0.0) {
            return bad(format!("fiber dgd_ns_per_km must be ≥ 0 (got {})", self.dgd_ns_per_km));
        }
        if self.attenuation.is_empty() {
            return bad("fiber attenuation table is empty".into());
        }
        if self
            .attenuation
            .iter()
            .any(|p| !(p.db_per_km >= 0.0) || !(p.wavelength_nm > 0.0))
        {
            return bad("fiber attenuation entries must have wavelength > 0 and dB/km ≥ 0".into());
        }
        if self
            .attenuation
            .windows(2)
            .any(|w| w[1].wavelength_nm <= w[0].wavelength_nm)
        {
            return bad("fiber attenuation table must be strictly increasing in wavelength".into());
        }
        Ok(())
    }

    /// Attenuation in dB/km at `wavelength_nm`.
    pub fn attenuation_at(&self, wavelength_nm: f64) -> Attenuation {
        let table = &self.attenuation;
        let first = table[0];
        let last = table[table.len() - 1];
        if wavelength_nm < first.wavelength_nm || wavelength_nm > last.wavelength_nm {
            let edge = if wavelength_nm < first.wavelength_nm {
                first
            } else {
                last
            };
            return Attenuation {
                db_per_km: edge.db_per_km,
                extrapolated: true,
            };
        }
        let idx = table.partition_point(|p| p.wavelength_nm < wavelength_nm);
        let db_per_km = if idx == 0 {
            first.db_per_km
        } else {
            let (lo, hi) = (table[idx - 1], table[idx]);
            let f = (wavelength_nm - lo.wavelength_nm) / (hi.wavelength_nm - lo.wavelength_nm);
            lo.db_per_km + f * (hi.db_per_km - lo.db_per_km)
        };
        Attenuation {
            db_per_km,
            extrapolated: false,
        }
    }

    /// Smallest attenuation over `[lo_nm, hi_nm]`.
    pub fn min_attenuation_over(&self, lo_nm: f64, hi_nm: f64) -> f64 {
        self.attenuation_bounds_over(lo_nm, hi_nm).0
    }

    /// Smallest and largest attenuation over `[lo_nm, hi_nm]`.
    pub fn attenuation_bounds_over(&self, lo_nm: f64, hi_nm: f64) -> (f64, f64) {
        let ends = [
            self.attenuation_at(lo_nm).db_per_km,
            self.attenuation_at(hi_nm).db_per_km,
        ];
        let inner = self
            .attenuation
            .iter()
            .filter(|p| p.wavelength_nm > lo_nm && p.wavelength_nm < hi_nm)
            .map(|p| p.db_per_km);
        ends.into_iter()
            .chain(inner)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)))
    }

    /// LP01 transit time in ps.
    pub fn base_delay_ps(&self) -> f64 {
        self.length_km * 1e3 * self.group_index / SPEED_OF_LIGHT_M_PER_S * PS_PER_S
    }

    /// Extra LP11 transit time in ps.
    pub fn lp11_extra_delay_ps(&self) -> f64 {
        self.dgd_ns_per_km * self.length_km * 1e3
    }

    pub fn v_number_at(&self, wavelength_nm: f64) -> Result<f64> {
        v_number(self.core_radius_um, self.numerical_aperture, wavelength_nm)
    }

    /// Whether LP11 propagates at `wavelength_nm`.
    pub fn lp11_guided(&self, wavelength_nm: f64) -> bool {
        self.v_number_at(wavelength_nm)
            .map(|v| v > LP11_CUTOFF)
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attenuation {
    pub db_per_km: f64,
    /// The wavelength lies outside the table and the edge value was used.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub loss_db: f64,
    pub extrapolated: bool,
}

impl Transmission {
    pub fn survival_probability(&self) -> f64 {
        db_to_ratio(self.loss_db)
    }
}

/// `10^(−dB/10)`.
#[inline]
pub fn db_to_ratio(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Normalized frequency `2π·a·NA/λ`.
pub fn v_number(core_radius_um: f64, numerical_aperture: f64, wavelength_nm: f64) -> Result<f64> {
    if !(wavelength_nm > 0.0) {
        return Err(Error::Domain(format!(
            "wavelength must be > 0 nm (got {wavelength_nm})"
        )));
    }
    if !(core_radius_um > 0.0) {
        return Err(Error::Domain(format!(
            "core radius must be > 0 μm (got {core_radius_um})"
        )));
    }
    if !(numerical_aperture >= 0.0) {
        return Err(Error::Domain(format!(
            "numerical aperture must be ≥ 0 (got {numerical_aperture})"
        )));
    }
    Ok(2.0 * std::f64::consts::PI * core_radius_um * 1e3 * numerical_aperture / wavelength_nm)
}

/// LP modes guided at normalized frequency `v`.
pub fn guided_lp_modes(v: f64, policy: ModeSetPolicy) -> Vec<ModeId> {
    let mut modes = vec![ModeId::LP01];
    if v > LP11_CUTOFF {
        modes.push(ModeId::LP11);
    }
    if policy == ModeSetPolicy::CutoffDerived && v > LP21_LP02_CUTOFF {
        modes.extend([ModeId::LP21, ModeId::LP02]);
    }
    modes
}

/// Fiber loss over `length_km` at `wavelength_nm`.
pub fn transmission_db(fiber: &FiberSpec, wavelength_nm: f64, length_km: f64) -> Result<Transmission> {
    if !(length_km >= 0.0) {
        return Err(Error::Domain(format!("length must be ≥ 0 km (got {length_km})")));
    }
    let att = fiber.attenuation_at(wavelength_nm);
    Ok(Transmission {
        loss_db: att.db_per_km * length_km,
        extrapolated: att.extrapolated,
    })
}

/// One photon entering a fiber arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub pair_id: u64,
    pub emission_time_ps: f64,
    pub wavelength_nm: f64,
    pub arm: Arm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalEvent {
    pub pair_id: u64,
    pub arrival_time_ps: f64,
    pub wavelength_nm: f64,
    pub mode: ModeId,
    pub arm: Arm,
}

/// Transports `photon` through `fiber`; `None` when it is absorbed or scattered.
pub fn propagate<R: Rng + ?Sized>(photon: &Photon, fiber: &FiberSpec, rng: &mut R) -> Option<ArrivalEvent> {
    let survival = transmission_db(fiber, photon.wavelength_nm, fiber.length_km)
        .map(|t| t.survival_probability())
        .unwrap_or(0.0);
    if rng.random::<f64>() >= survival {
        return None;
    }
    Some(arrive(photon, fiber, rng))
}

/// Mode draw and arrival time of a photon known to survive.
#[inline]
pub fn arrive<R: Rng + ?Sized>(photon: &Photon, fiber: &FiberSpec, rng: &mut R) -> ArrivalEvent {
    let mode = sample_mode(photon.wavelength_nm, fiber, rng);
    let mut arrival = photon.emission_time_ps + fiber.base_delay_ps();
    if mode == ModeId::LP11 {
        arrival += fiber.lp11_extra_delay_ps();
    }
    ArrivalEvent {
        pair_id: photon.pair_id,
        arrival_time_ps: arrival,
        wavelength_nm: photon.wavelength_nm,
        mode,
        arm: photon.arm,
    }
}

#[inline]
fn sample_mode<R: Rng + ?Sized>(wavelength_nm: f64, fiber: &FiberSpec, rng: &mut R) -> ModeId {
    if fiber.lp11_excitation > 0.0 && rng.random::<f64>() < fiber.lp11_excitation && fiber.lp11_guided(wavelength_nm) {
        ModeId::LP11
    } else {
        ModeId::LP01
    }
}
