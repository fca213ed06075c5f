//! Simulation and analysis of polarization-entangled photon pairs distributed
//! through standard telecom fiber at near-infrared wavelengths.
//!
//! The crate is organized along the physical chain:
//!
//! * [`pairgen`]: temperature-tuned SPDC source, two-photon polarization state
//!   and WDM routing into two arms.
//! * [`fiberprop`]: guided LP modes, attenuation and modal delays in G.652D
//!   fiber, per-photon Monte-Carlo transport.
//! * [`detection`]: HWP + PBS projection statistics and GM-APD tag generation
//!   (efficiency, jitter, dark counts, dead time).
//! * [`taganalysis`]: delay histograms, peak finding, coincidence counting and
//!   visibility extraction from time tags.
//! * [`linkbudget`]: analytic detected-pair rate versus distance and crossover
//!   solving between systems.
//! * [`experiment`]: configuration, presets, the seeded simulation pipeline and
//!   the file-producing `simulate` / `analyze` / `budget` runs.

// Validation uses `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod experiment;
pub mod fiberprop;
pub mod linkbudget;
pub mod pairgen;
pub mod rng;
pub mod taganalysis;
pub mod tagio;

pub use detection::{AnalyzerSettings, DetectorSpec, TimeTag, TimeTagStream};
pub use error::{Error, Result};
pub use experiment::{BudgetConfig, ExperimentConfig};
pub use fiberprop::{ArrivalEvent, FiberSpec, ModeId, ModeSetPolicy};
pub use linkbudget::{BudgetCurve, SystemModel};
pub use pairgen::{Arm, PairEvent, PolarizationModel, SourceConfig, WdmSpec};
pub use taganalysis::{DelayHistogram, PeakSet, VisibilityResult};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;
