//! Analytic detected-pair rate versus fiber length.
//!
//! One photon of each pair is detected at the source, its partner after `L` km
//! of fiber. Every factor except the fiber term is independent of `L`, so
//! `log₁₀ rate` is linear in `L` and crossovers between systems have a closed
//! form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiberprop::db_to_ratio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    pub label: String,
    pub brightness_pairs_per_s: f64,
    pub detector_efficiency_source_arm: f64,
    pub detector_efficiency_fiber_arm: f64,
    pub attenuation_db_per_km: f64,
    /// Non-fiber losses (WDM insertion, coupling, gating, analyzer).
    pub fixed_loss_db: f64,
    /// Probability the two photons leave the WDM in different arms.
    pub wdm_split_factor: f64,
    /// Pair fraction that survives temporal filtering to the fundamental mode.
    pub fundamental_mode_fraction: f64,
}

impl SystemModel {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("detector_efficiency_source_arm", self.detector_efficiency_source_arm),
            ("detector_efficiency_fiber_arm", self.detector_efficiency_fiber_arm),
            ("wdm_split_factor", self.wdm_split_factor),
            ("fundamental_mode_fraction", self.fundamental_mode_fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "system `{}`: {name} must lie in [0, 1] (got {p})",
                    self.label
                )));
            }
        }
        if !(self.attenuation_db_per_km >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "system `{}`: attenuation_db_per_km must be ≥ 0",
                self.label
            )));
        }
        if !(self.brightness_pairs_per_s >= 0.0) || !self.fixed_loss_db.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "system `{}`: brightness must be ≥ 0 and fixed loss finite",
                self.label
            )));
        }
        Ok(())
    }

    /// Rate at zero length, fixed loss included.
    pub fn length_independent_rate(&self) -> f64 {
        self.brightness_pairs_per_s
            * self.detector_efficiency_source_arm
            * self.detector_efficiency_fiber_arm
            * self.wdm_split_factor
            * self.fundamental_mode_fraction
            * db_to_ratio(self.fixed_loss_db)
    }

    /// Per-factor losses in dB at `length_km`.
    pub fn loss_breakdown(&self, length_km: f64) -> LossBreakdown {
        let db = |x: f64| -10.0 * x.log10();
        let fiber_db = self.attenuation_db_per_km * length_km;
        let detector_db = db(self.detector_efficiency_source_arm * self.detector_efficiency_fiber_arm);
        let wdm_db = db(self.wdm_split_factor);
        let mode_db = db(self.fundamental_mode_fraction);
        LossBreakdown {
            length_km,
            fiber_db,
            fixed_db: self.fixed_loss_db,
            detector_db,
            wdm_db,
            mode_db,
            total_db: fiber_db + self.fixed_loss_db + detector_db + wdm_db + mode_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub length_km: f64,
    pub fiber_db: f64,
    pub fixed_db: f64,
    pub detector_db: f64,
    pub wdm_db: f64,
    pub mode_db: f64,
    pub total_db: f64,
}

/// Detected pairs per second after `length_km` of fiber.
pub fn pair_rate(sys: &SystemModel, length_km: f64) -> Result<f64> {
    if !(length_km >= 0.0) {
        return Err(Error::Domain(format!("length must be ≥ 0 km (got {length_km})")));
    }
    Ok(sys.length_independent_rate() * db_to_ratio(sys.attenuation_db_per_km * length_km))
}

fn no_crossover(a: &SystemModel, b: &SystemModel, bracket: (f64, f64)) -> Error {
    Error::NoCrossover {
        a: a.label.clone(),
        b: b.label.clone(),
        lo_km: bracket.0,
        hi_km: bracket.1,
    }
}

/// Length at which the two systems deliver equal pair rates.
///
/// Solves `10·log₁₀(K_a/K_b) = (att_a − att_b)·L` for the length-independent
/// rates `K`; errors when the solution is outside `bracket` or does not exist.
pub fn crossover(a: &SystemModel, b: &SystemModel, bracket: (f64, f64)) -> Result<f64> {
    let (ka, kb) = (a.length_independent_rate(), b.length_independent_rate());
    let slope = a.attenuation_db_per_km - b.attenuation_db_per_km;
    if slope == 0.0 || !(ka > 0.0 && kb > 0.0) {
        return Err(no_crossover(a, b, bracket));
    }
    let length = 10.0 * (ka / kb).log10() / slope;
    if length.is_finite() && length >= bracket.0 && length <= bracket.1 {
        Ok(length)
    } else {
        Err(no_crossover(a, b, bracket))
    }
}

/// Bisection on `log(rate_a / rate_b)` for rate models without a closed form.
pub fn crossover_bisect<FA, FB>(rate_a: FA, rate_b: FB, bracket: (f64, f64), tol_km: f64) -> Option<f64>
where
    FA: Fn(f64) -> f64,
    FB: Fn(f64) -> f64,
{
    let g = |l: f64| (rate_a(l) / rate_b(l)).ln();
    let (mut lo, mut hi) = bracket;
    let (mut glo, ghi) = (g(lo), g(hi));
    if !(glo.is_finite() && ghi.is_finite()) || glo.signum() == ghi.signum() {
        return (glo == 0.0).then_some(lo).or((ghi == 0.0).then_some(hi));
    }
    while hi - lo > tol_km {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Some(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Fixed loss on `b` that puts the crossover with `a` at `target_km`.
pub fn calibrate_fixed_loss(a: &SystemModel, b: &SystemModel, target_km: f64) -> Result<f64> {
    let slope = a.attenuation_db_per_km - b.attenuation_db_per_km;
    if slope == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "systems `{}` and `{}` have equal attenuation; no crossover can be placed",
            a.label, b.label
        )));
    }
    let unloaded = SystemModel {
        fixed_loss_db: 0.0,
        ..b.clone()
    };
    let (ka, kb) = (a.length_independent_rate(), unloaded.length_independent_rate());
    if !(ka > 0.0 && kb > 0.0) {
        return Err(Error::InvalidParameter("systems must have nonzero rates".into()));
    }
    Ok(10.0 * (kb / ka).log10() + slope * target_km)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverMarker {
    pub system_a: String,
    pub system_b: String,
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCurve {
    pub lengths_km: Vec<f64>,
    pub labels: Vec<String>,
    /// `rates[s][i]`: system `s` at `lengths_km[i]`.
    pub rates: Vec<Vec<f64>>,
    pub markers: Vec<CrossoverMarker>,
}

/// Tabulates every system over `lengths_km` and marks the crossovers of the
/// designated `(a, b)` index pairs that fall inside the grid.
pub fn budget_curve(systems: &[SystemModel], lengths_km: &[f64], pairs: &[(usize, usize)]) -> Result<BudgetCurve> {
    if lengths_km.is_empty() {
        return Err(Error::InvalidParameter("length grid is empty".into()));
    }
    let rates = systems
        .iter()
        .map(|s| lengths_km.iter().map(|&l| pair_rate(s, l)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let lo = lengths_km.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lengths_km.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut markers = Vec::new();
    for &(ia, ib) in pairs {
        let (Some(a), Some(b)) = (systems.get(ia), systems.get(ib)) else {
            return Err(Error::InvalidParameter(format!(
                "crossover pair ({ia}, {ib}) out of range"
            )));
        };
        if let Ok(length_km) = crossover(a, b, (lo, hi)) {
            markers.push(CrossoverMarker {
                system_a: a.label.clone(),
                system_b: b.label.clone(),
                length_km,
            });
        }
    }
    Ok(BudgetCurve {
        lengths_km: lengths_km.to_vec(),
        labels: systems.iter().map(|s| s.label.clone()).collect(),
        rates,
        markers,
    })
}

/// The four source/detector systems compared in the rate-versus-distance
/// study, with no fixed losses applied.
///
/// The source-arm detector is the same Si GM-APD in every system; only the
/// fiber-arm detector changes between NIR (Si, 50 %) and telecom (InGaAs,
/// 25 %). Degenerate systems lose half the pairs at the WDM, and degenerate
/// NIR pairs keep two thirds in the fundamental mode.
pub fn comparison_systems(brightness_pairs_per_s: f64) -> Vec<SystemModel> {
    let base = SystemModel {
        label: String::new(),
        brightness_pairs_per_s,
        detector_efficiency_source_arm: 0.5,
        detector_efficiency_fiber_arm: 0.5,
        attenuation_db_per_km: 3.0,
        fixed_loss_db: 0.0,
        wdm_split_factor: 1.0,
        fundamental_mode_fraction: 1.0,
    };
    let telecom = SystemModel {
        detector_efficiency_fiber_arm: 0.25,
        attenuation_db_per_km: 0.22,
        ..base.clone()
    };
    vec![
        SystemModel {
            label: "nir_nondegenerate".into(),
            ..base.clone()
        },
        SystemModel {
            label: "nir_degenerate".into(),
            wdm_split_factor: 0.5,
            fundamental_mode_fraction: 2.0 / 3.0,
            ..base
        },
        SystemModel {
            label: "telecom_nondegenerate".into(),
            ..telecom.clone()
        },
        SystemModel {
            label: "telecom_degenerate".into(),
            wdm_split_factor: 0.5,
            ..telecom
        },
    ]
}
