//! Source to tags for one analyzer setting.
//!
//! With thinning enabled only pairs able to produce a click are drawn. Each
//! photon clicks with probability `s = η · T(λ)` for its arm, which is bounded
//! by `u`, the largest such value over arms and the source's wavelength
//! range. Giving every photon a uniform variate `U` and clicking when `U < s`,
//! only pairs with some `U < u` matter; they form a Poisson process of rate
//! `B · (1 − (1 − u)²)`, and conditioned on that their variates are drawn
//! exactly. Without thinning `u = 1` and every pair is drawn.

use rand::Rng;

use crate::detection::{detect_stream, AnalyzerSettings, DetectorSpec, Port, ProjectionSampler};
use crate::fiberprop::{arrive, db_to_ratio, FiberSpec, Photon};
use crate::pairgen::{Arm, EmissionSampler, PairEvent};
use crate::rng::{SeedTree, Stage};
use crate::PS_PER_S;

use super::config::ExperimentConfig;

/// Tags of one segment, local time `[0, duration)`, indexed by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTags {
    pub channels: Vec<Vec<u64>>,
    /// Pairs drawn from the (thinned) emission process.
    pub candidate_pairs: u64,
}

/// Per-photon click-probability bound `u` for thinning.
pub fn click_probability_bound(cfg: &ExperimentConfig) -> f64 {
    let (lo, hi) = cfg.source.wavelength_span_nm();
    [(&cfg.detector_a, &cfg.fiber_a), (&cfg.detector_b, &cfg.fiber_b)]
        .iter()
        .map(|(d, f)| d.efficiency * db_to_ratio(f.min_attenuation_over(lo, hi) * f.length_km))
        .fold(0.0, f64::max)
}

/// Rate of pairs actually drawn per second of acquisition.
pub fn candidate_rate(cfg: &ExperimentConfig) -> f64 {
    let u = if cfg.thinning {
        click_probability_bound(cfg)
    } else {
        1.0
    };
    cfg.source.brightness_pairs_per_s * (1.0 - (1.0 - u) * (1.0 - u))
}

struct ArmModel<'a> {
    fiber: &'a FiberSpec,
    efficiency: f64,
    /// Click probability when attenuation is flat over the source's lines.
    flat: Option<f64>,
}

impl<'a> ArmModel<'a> {
    fn new(fiber: &'a FiberSpec, efficiency: f64, span_nm: (f64, f64)) -> Self {
        let (lo, hi) = fiber.attenuation_bounds_over(span_nm.0, span_nm.1);
        ArmModel {
            fiber,
            efficiency,
            flat: (lo == hi).then(|| efficiency * db_to_ratio(lo * fiber.length_km)),
        }
    }

    #[inline]
    fn click_probability(&self, wavelength_nm: f64) -> f64 {
        self.flat.unwrap_or_else(|| {
            let att = self.fiber.attenuation_at(wavelength_nm).db_per_km;
            self.efficiency * db_to_ratio(att * self.fiber.length_km)
        })
    }
}

/// Simulates one segment of `cfg.duration_s` with the given analyzer
/// setting. `segment` selects the random substreams.
pub fn simulate_segment(cfg: &ExperimentConfig, analyzer: Option<AnalyzerSettings>, segment: u32) -> SegmentTags {
    let tree = SeedTree::new(cfg.seed);
    let mut rng_emit = tree.stream(Stage::Emission, segment, 0);
    let mut rng_wdm = tree.stream(Stage::Wdm, segment, 0);
    let mut rng_survival = tree.stream(Stage::Survival, segment, 0);
    let mut rng_analyzer = tree.stream(Stage::Analyzer, segment, 0);
    let mut rng_mode = tree.stream(Stage::Mode, segment, 0);

    let u = if cfg.thinning {
        click_probability_bound(cfg)
    } else {
        1.0
    };
    let q = 1.0 - (1.0 - u) * (1.0 - u);
    let (p_both, p_signal_only) = if q > 0.0 {
        (u * u / q, u * (1.0 - u) / q)
    } else {
        (0.0, 0.0)
    };
    let sampler = EmissionSampler::new(&cfg.source, cfg.source.brightness_pairs_per_s * q);
    let projector = analyzer.map(|s| {
        let (alpha, beta) = s.projection_angles();
        ProjectionSampler::new(&cfg.polarization, alpha, beta)
    });
    let span = cfg.source.wavelength_span_nm();
    let arms = [
        ArmModel::new(&cfg.fiber_a, cfg.detector_a.efficiency, span),
        ArmModel::new(&cfg.fiber_b, cfg.detector_b.efficiency, span),
    ];
    let router = cfg.wdm.router();
    let n_channels = cfg.channel_count() as usize;
    let end_ps = cfg.duration_ps() as f64;
    let mut arrivals: Vec<Vec<f64>> = vec![Vec::new(); n_channels];

    let mut t = 0.0;
    let mut candidates = 0u64;
    while let Some(dt) = sampler.next_interval_ps(&mut rng_emit) {
        t += dt;
        if t >= end_ps {
            break;
        }
        let (signal_nm, idler_nm) = sampler.wavelengths(&mut rng_emit);
        let event = PairEvent {
            pair_id: candidates,
            emission_time_ps: t,
            signal_nm,
            idler_nm,
        };
        candidates += 1;
        let routing = router.route(&event, &mut rng_wdm);

        let r: f64 = rng_survival.random();
        let (has_signal, has_idler) = if r < p_both {
            (true, true)
        } else if r < p_both + p_signal_only {
            (true, false)
        } else {
            (false, true)
        };
        let mut clicks = |has: bool, wavelength_nm: f64, arm: Arm| -> bool {
            has && u * rng_survival.random::<f64>() < arms[arm.index()].click_probability(wavelength_nm)
        };
        let signal_clicks = clicks(has_signal, signal_nm, routing.signal_arm);
        let idler_clicks = clicks(has_idler, idler_nm, routing.idler_arm);
        if !signal_clicks && !idler_clicks {
            continue;
        }

        let (signal_port, idler_port) = match &projector {
            None => (Port::Transmitted, Port::Transmitted),
            Some(p) if routing.is_split() => {
                let o = p.sample(&mut rng_analyzer);
                if routing.signal_arm == Arm::A {
                    (o.a, o.b)
                } else {
                    (o.b, o.a)
                }
            }
            Some(_) => {
                let port = |rng: &mut crate::rng::SimRng| {
                    if rng.random::<bool>() {
                        Port::Transmitted
                    } else {
                        Port::Reflected
                    }
                };
                (port(&mut rng_analyzer), port(&mut rng_analyzer))
            }
        };

        for (clicked, wavelength_nm, arm, port) in [
            (signal_clicks, signal_nm, routing.signal_arm, signal_port),
            (idler_clicks, idler_nm, routing.idler_arm, idler_port),
        ] {
            if !clicked {
                continue;
            }
            let channel = match port {
                Port::Transmitted => arm.index(),
                Port::Reflected if cfg.reflected_port_detection => 2 + arm.index(),
                Port::Reflected => continue,
            };
            let photon = Photon {
                pair_id: event.pair_id,
                emission_time_ps: t,
                wavelength_nm,
                arm,
            };
            let arrival = arrive(&photon, arms[arm.index()].fiber, &mut rng_mode);
            arrivals[channel].push(arrival.arrival_time_ps);
        }
    }

    let duration_s = end_ps / PS_PER_S;
    let channels = arrivals
        .iter()
        .enumerate()
        .map(|(ch, times)| {
            let det = DetectorSpec {
                efficiency: 1.0,
                ..cfg.detector_for_channel(ch as u16).clone()
            };
            let mut rng = tree.stream(Stage::Detection, segment, ch as u16);
            detect_stream(times, ch as u16, &det, duration_s, &mut rng).times()
        })
        .collect();
    SegmentTags {
        channels,
        candidate_pairs: candidates,
    }
}
