//! Built-in configurations.

use crate::detection::{AnalyzerSettings, DetectorSpec};
use crate::fiberprop::FiberSpec;
use crate::linkbudget::comparison_systems;
use crate::pairgen::{PhaseSign, PolarizationModel, SourceConfig, WdmSpec};

use super::config::{AnalysisConfig, BudgetConfig, CrossoverSpec, ExperimentConfig, LengthGrid};

pub const PRESET_NAMES: [&str; 3] = ["degenerate_6km", "nondegenerate_12km", "budget_fig4"];

/// Per-photon LP11 launch probability for degenerate pairs. About a third of
/// coincidences then involve a higher-order mode: `1 − (1 − 0.18)² ≈ 0.33`.
pub const DEGENERATE_LP11_EXCITATION: f64 = 0.18;

/// Isolation of the WDM between the two non-degenerate channels.
pub const WDM_ISOLATION_DB: f64 = 15.0;

/// Two-photon state parameters matching the measured H/V and D/A curves.
pub const MEASURED_POLARIZATION: PolarizationModel = PolarizationModel {
    v_hv: 0.9715,
    v_da: 0.924,
    phase_sign: PhaseSign::Plus,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Experiment(Box<ExperimentConfig>),
    Budget(BudgetConfig),
}

pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "degenerate_6km" => Some(Preset::Experiment(Box::new(degenerate_6km()))),
        "nondegenerate_12km" => Some(Preset::Experiment(Box::new(nondegenerate_12km()))),
        "budget_fig4" => Some(Preset::Budget(budget_fig4())),
        _ => None,
    }
}

/// Degenerate 810 nm pairs over 6 km per arm, no polarization analysis.
pub fn degenerate_6km() -> ExperimentConfig {
    let source = SourceConfig::degenerate(1e6);
    let fiber = FiberSpec {
        lp11_excitation: DEGENERATE_LP11_EXCITATION,
        ..FiberSpec::g652d(6.0)
    };
    ExperimentConfig {
        seed: 1,
        duration_s: 60.0,
        segment_gap_ps: 1_000_000_000,
        symmetric: true,
        thinning: true,
        reflected_port_detection: false,
        output_dir: None,
        wdm: WdmSpec::for_source(&source, WDM_ISOLATION_DB),
        source,
        polarization: PolarizationModel::IDEAL,
        fiber_a: fiber.clone(),
        fiber_b: fiber,
        detector_a: DetectorSpec::si_apd(),
        detector_b: DetectorSpec::si_apd(),
        analysis: AnalysisConfig::default(),
        analyzer_scan: Vec::new(),
    }
}

/// Signal HWP angles of the four visibility curves: H, V, D, A.
pub const SIGNAL_HWP_DEG: [f64; 4] = [0.0, 45.0, 22.5, 67.5];

/// The idler HWP sweeps 180° in 22.5° steps for every signal setting.
pub fn visibility_scan() -> Vec<AnalyzerSettings> {
    SIGNAL_HWP_DEG
        .iter()
        .flat_map(|&a| (0..=8).map(move |k| AnalyzerSettings::new(a, k as f64 * 22.5)))
        .collect()
}

/// Non-degenerate 774/850 nm pairs over 6 km per arm with a four-curve
/// visibility scan.
pub fn nondegenerate_12km() -> ExperimentConfig {
    let source = SourceConfig::nondegenerate(1e6);
    ExperimentConfig {
        seed: 2,
        duration_s: 10.0,
        segment_gap_ps: 1_000_000_000,
        symmetric: true,
        thinning: true,
        reflected_port_detection: false,
        output_dir: None,
        wdm: WdmSpec::for_source(&source, WDM_ISOLATION_DB),
        source,
        polarization: MEASURED_POLARIZATION,
        fiber_a: FiberSpec::g652d(6.0),
        fiber_b: FiberSpec::g652d(6.0),
        detector_a: DetectorSpec::si_apd(),
        detector_b: DetectorSpec::si_apd(),
        analysis: AnalysisConfig::default(),
        analyzer_scan: visibility_scan(),
    }
}

/// Rate-versus-distance comparison of the four source/detector systems over
/// 0–12 km, with the crossover distances used for fixed-loss calibration.
pub fn budget_fig4() -> BudgetConfig {
    let systems = comparison_systems(1e6);
    let crossover = |a: usize, b: usize, target_km: f64| CrossoverSpec {
        a: systems[a].label.clone(),
        b: systems[b].label.clone(),
        target_km: Some(target_km),
    };
    let crossovers = vec![crossover(0, 2, 6.0), crossover(1, 3, 2.4)];
    BudgetConfig {
        output_dir: None,
        report_lengths_km: vec![6.0, 12.0],
        grid: LengthGrid {
            start_km: 0.0,
            stop_km: 12.0,
            step_km: 0.1,
        },
        systems,
        crossovers,
    }
}
