//! The `simulate`, `analyze` and `budget` runs and their output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{coincidence_probability, AnalyzerSettings, TimeTag};
use crate::error::{Error, Result};
use crate::fiberprop::ModeId;
use crate::linkbudget::{budget_curve, calibrate_fixed_loss, BudgetCurve, CrossoverMarker, LossBreakdown, SystemModel};
use crate::taganalysis::{
    accidentals_rate, count_coincidences, cross_correlation, find_peaks, visibility, Basis, DelayHistogram, PeakSet,
    VisibilityMethod, VisibilityResult,
};
use crate::tagio::{read_tags, write_tags, TagFormat};

use super::config::{AnalysisConfig, BudgetConfig, CenterDelayPolicy, ExperimentConfig, Segment};
use super::pipeline::simulate_segment;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const PEAKS_FILE: &str = "peaks.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const BUDGET_CURVE_FILE: &str = "budget_curve.csv";
pub const BUDGET_MARKERS_FILE: &str = "budget_markers.csv";
pub const BUDGET_MANIFEST_FILE: &str = "budget_manifest.toml";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub channel: u16,
    pub file: String,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub format: TagFormat,
    pub candidate_pairs: u64,
    pub files: Vec<ChannelFile>,
    pub segments: Vec<Segment>,
}

/// Written next to the tag files; holds everything needed to analyze or
/// reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run: RunInfo,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: RunManifest = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::config(line, format!("{}: {}", path.display(), e.message()))
        })?;
        manifest.config.validate()?;
        Ok(manifest)
    }
}

/// Simulates every segment of `cfg` and writes one tag file per channel plus
/// the manifest into `out_dir`.
pub fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path, format: TagFormat) -> Result<RunManifest> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let segments = cfg.segments();
    let n = cfg.channel_count();
    let mut per_channel: Vec<Vec<TimeTag>> = vec![Vec::new(); n as usize];
    let mut candidate_pairs = 0;
    for seg in &segments {
        let tags = simulate_segment(cfg, seg.analyzer, seg.index);
        candidate_pairs += tags.candidate_pairs;
        for (channel, times) in tags.channels.into_iter().enumerate() {
            per_channel[channel].extend(times.into_iter().map(|t| TimeTag {
                time_ps: seg.start_ps + t,
                channel: channel as u16,
            }));
        }
    }
    let mut files = Vec::with_capacity(n as usize);
    for (channel, records) in per_channel.iter().enumerate() {
        let file = format!("channel_{channel}.{}", format.extension());
        write_tags(&out_dir.join(&file), records, format)?;
        files.push(ChannelFile {
            channel: channel as u16,
            file,
            records: records.len() as u64,
        });
    }
    let manifest = RunManifest {
        run: RunInfo {
            format,
            candidate_pairs,
            files,
            segments,
        },
        config: cfg.clone(),
    };
    write_file(&out_dir.join(MANIFEST_FILE), &super::config::to_toml(&manifest)?)?;
    Ok(manifest)
}

/// Channel-0 and channel-1 tags of one segment, in local time.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentData {
    pub analyzer: Option<AnalyzerSettings>,
    pub duration_s: f64,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
}

/// One visibility curve: fixed signal HWP, idler HWP scanned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub hwp_a_deg: f64,
    pub basis: Basis,
    pub points: Vec<(f64, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minmax: Option<VisibilityResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<VisibilityResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub basis: Basis,
    pub curves: usize,
    pub minmax: f64,
    pub fit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub duration_s: f64,
    pub singles_a_per_s: f64,
    pub singles_b_per_s: f64,
    pub coincidences: u64,
    pub coincidences_per_s: f64,
    /// Expected accidental part of `coincidences_per_s`.
    pub accidentals_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub histogram: DelayHistogram,
    pub peaks: PeakSet,
    pub center_delay_ps: i64,
    /// Coincidences per segment, in segment order.
    pub segment_counts: Vec<u64>,
    pub curves: Vec<CurveReport>,
    pub bases: Vec<BasisReport>,
    /// Mean over curves, extrema and fitted estimates.
    pub average_visibility_minmax: Option<f64>,
    pub average_visibility_fit: Option<f64>,
    pub rates: RateReport,
    /// An analyzer scan was present but no curve had a defined visibility.
    pub visibility_undefined: bool,
}

/// Histogram, peaks, coincidences and visibilities over all segments.
///
/// `fallback_center_ps` is used when the policy is `fixed` without an explicit
/// delay, or when no fundamental peak is found.
pub fn analyze_segments(
    analysis: &AnalysisConfig,
    fallback_center_ps: i64,
    segments: &[SegmentData],
) -> Result<AnalysisReport> {
    analysis.validate()?;
    let mut histogram = DelayHistogram::new(analysis.bin_width_ps, analysis.range_ps)?;
    for seg in segments {
        histogram.accumulate(&cross_correlation(
            &seg.a,
            &seg.b,
            analysis.bin_width_ps,
            analysis.range_ps,
        )?)?;
    }
    let peaks = find_peaks(&histogram, &analysis.peaks);
    let fixed = analysis.center_delay_ps.unwrap_or(fallback_center_ps);
    let center_delay_ps = match analysis.center_delay {
        CenterDelayPolicy::Fixed => fixed,
        CenterDelayPolicy::FundamentalPeak => peaks.fundamental().map_or(fixed, |p| p.delay_ps.round() as i64),
    };

    let segment_counts: Vec<u64> = segments
        .iter()
        .map(|s| count_coincidences(&s.a, &s.b, analysis.window_ps, center_delay_ps))
        .collect();

    let mut rates = RateReport {
        duration_s: 0.0,
        singles_a_per_s: 0.0,
        singles_b_per_s: 0.0,
        coincidences: segment_counts.iter().sum(),
        coincidences_per_s: 0.0,
        accidentals_per_s: 0.0,
    };
    let (mut na, mut nb, mut acc) = (0u64, 0u64, 0.0);
    for s in segments.iter().filter(|s| s.duration_s > 0.0) {
        rates.duration_s += s.duration_s;
        na += s.a.len() as u64;
        nb += s.b.len() as u64;
        acc += accidentals_rate(
            s.a.len() as f64 / s.duration_s,
            s.b.len() as f64 / s.duration_s,
            analysis.window_ps,
        ) * s.duration_s;
    }
    if rates.duration_s > 0.0 {
        rates.singles_a_per_s = na as f64 / rates.duration_s;
        rates.singles_b_per_s = nb as f64 / rates.duration_s;
        rates.coincidences_per_s = rates.coincidences as f64 / rates.duration_s;
        rates.accidentals_per_s = acc / rates.duration_s;
    }

    let mut curves: Vec<CurveReport> = Vec::new();
    for (seg, &count) in segments.iter().zip(&segment_counts) {
        let Some(setting) = seg.analyzer else { continue };
        match curves.iter_mut().find(|c| c.hwp_a_deg == setting.hwp_a_deg) {
            Some(c) => c.points.push((setting.hwp_b_deg, count)),
            None => curves.push(CurveReport {
                hwp_a_deg: setting.hwp_a_deg,
                basis: Basis::from_signal_hwp(setting.hwp_a_deg),
                points: vec![(setting.hwp_b_deg, count)],
                minmax: None,
                fit: None,
                error: None,
            }),
        }
    }
    for c in &mut curves {
        match (
            visibility(&c.points, c.basis, VisibilityMethod::Minmax),
            visibility(&c.points, c.basis, VisibilityMethod::SinusoidFit),
        ) {
            (Ok(m), Ok(f)) => {
                c.minmax = Some(m);
                c.fit = Some(f);
            }
            (Err(e), _) | (_, Err(e)) => c.error = Some(e.to_string()),
        }
    }
    let defined: Vec<&CurveReport> = curves.iter().filter(|c| c.minmax.is_some()).collect();
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let bases = [Basis::HV, Basis::DA]
        .into_iter()
        .filter_map(|basis| {
            let of_basis: Vec<&&CurveReport> = defined.iter().filter(|c| c.basis == basis).collect();
            Some(BasisReport {
                basis,
                curves: of_basis.len(),
                minmax: mean(of_basis.iter().map(|c| c.minmax.expect("defined").v).collect())?,
                fit: mean(of_basis.iter().map(|c| c.fit.expect("defined").v).collect())?,
            })
        })
        .collect();
    Ok(AnalysisReport {
        average_visibility_minmax: mean(defined.iter().map(|c| c.minmax.expect("defined").v).collect()),
        average_visibility_fit: mean(defined.iter().map(|c| c.fit.expect("defined").v).collect()),
        visibility_undefined: !curves.is_empty() && defined.is_empty(),
        histogram,
        peaks,
        center_delay_ps,
        segment_counts,
        curves,
        bases,
        rates,
    })
}

/// Splits whole-run channel times into per-segment local times.
pub fn split_segments(segments: &[Segment], a: &[u64], b: &[u64]) -> Vec<SegmentData> {
    let slice = |times: &[u64], s: &Segment| -> Vec<u64> {
        let lo = times.partition_point(|&t| t < s.start_ps);
        let hi = times.partition_point(|&t| t < s.end_ps);
        times[lo..hi].iter().map(|t| t - s.start_ps).collect()
    };
    segments
        .iter()
        .map(|s| SegmentData {
            analyzer: s.analyzer,
            duration_s: s.duration_s(),
            a: slice(a, s),
            b: slice(b, s),
        })
        .collect()
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    center_delay_ps: i64,
    peak_count: usize,
    rates: &'a RateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_visibility_minmax: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_visibility_fit: Option<f64>,
    visibility_undefined: bool,
    bases: &'a [BasisReport],
    curves: Vec<CurveSummary<'a>>,
}

#[derive(Serialize)]
struct CurveSummary<'a> {
    hwp_a_deg: f64,
    basis: Basis,
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    minmax: Option<&'a VisibilityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<&'a VisibilityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn visibility_curve_file(index: usize) -> String {
    format!("visibility_curve_{index}.csv")
}

/// Reads the run in `run_dir`, analyzes it and writes the CSV and summary
/// files into `out_dir`. `analysis` replaces the manifest's parameters.
pub fn run_analyze(run_dir: &Path, out_dir: &Path, analysis: Option<AnalysisConfig>) -> Result<AnalysisReport> {
    let manifest = RunManifest::load(run_dir)?;
    let format = manifest.run.format;
    let channel_times = |channel: u16| -> Result<Vec<u64>> {
        let entry = manifest
            .run
            .files
            .iter()
            .find(|f| f.channel == channel)
            .ok_or_else(|| Error::config(None, format!("manifest lists no file for channel {channel}")))?;
        let path = run_dir.join(&entry.file);
        let tags = read_tags(&path, format)?;
        if let Some((i, t)) = tags.iter().enumerate().find(|(_, t)| t.channel != channel) {
            return Err(Error::Format {
                path,
                offset: match format {
                    TagFormat::Bin => (i * crate::tagio::RECORD_BYTES) as u64,
                    TagFormat::Csv => 0,
                },
                message: format!("record for channel {} in the channel {channel} file", t.channel),
            });
        }
        Ok(tags.into_iter().map(|t| t.time_ps).collect())
    };
    let a = channel_times(0)?;
    let b = channel_times(1)?;
    let cfg = &manifest.config;
    let analysis = analysis.unwrap_or(cfg.analysis);
    let segments = split_segments(&manifest.run.segments, &a, &b);
    let report = analyze_segments(&analysis, cfg.expected_delay_ps(), &segments)?;
    write_analysis(&report, out_dir)?;
    Ok(report)
}

/// Writes histogram, peak, curve and summary files for `report`.
pub fn write_analysis(report: &AnalysisReport, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let h = &report.histogram;
    let mut csv = String::from("delay_ps,counts\n");
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(csv, "{},{c}", h.bin_center_ps(i)).expect("string write");
    }
    write_file(&out_dir.join(HISTOGRAM_FILE), &csv)?;

    let mut csv = String::from("delay_ps,height,area,classification\n");
    for p in &report.peaks.peaks {
        writeln!(
            csv,
            "{:.1},{},{},{}",
            p.delay_ps,
            p.height,
            p.area,
            p.classification.as_str()
        )
        .expect("string write");
    }
    write_file(&out_dir.join(PEAKS_FILE), &csv)?;

    let mut curves = Vec::with_capacity(report.curves.len());
    for (k, c) in report.curves.iter().enumerate() {
        let mut csv = String::from("hwp_deg,counts\n");
        for (h, n) in &c.points {
            writeln!(csv, "{h},{n}").expect("string write");
        }
        let file = visibility_curve_file(k);
        write_file(&out_dir.join(&file), &csv)?;
        curves.push(CurveSummary {
            hwp_a_deg: c.hwp_a_deg,
            basis: c.basis,
            file,
            minmax: c.minmax.as_ref(),
            fit: c.fit.as_ref(),
            error: c.error.as_deref(),
        });
    }
    let summary = SummaryFile {
        center_delay_ps: report.center_delay_ps,
        peak_count: report.peaks.len(),
        rates: &report.rates,
        average_visibility_minmax: report.average_visibility_minmax,
        average_visibility_fit: report.average_visibility_fit,
        visibility_undefined: report.visibility_undefined,
        bases: &report.bases,
        curves,
    };
    write_file(&out_dir.join(SUMMARY_FILE), &super::config::to_toml(&summary)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub system_a: String,
    pub system_b: String,
    pub target_km: f64,
    pub fixed_loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBreakdown {
    pub label: String,
    pub breakdown: Vec<LossBreakdown>,
}

/// Contents of the budget manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetManifest {
    pub calibrated: bool,
    pub calibrations: Vec<Calibration>,
    pub markers: Vec<CrossoverMarker>,
    pub loss_breakdown: Vec<SystemBreakdown>,
    /// The resolved config, calibrated fixed losses included.
    pub config: BudgetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub curve: BudgetCurve,
    pub manifest: BudgetManifest,
}

/// Evaluates the budget, optionally calibrating fixed losses first, without
/// writing files.
pub fn evaluate_budget(cfg: &BudgetConfig, calibrate: bool) -> Result<BudgetReport> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let mut calibrations = Vec::new();
    if calibrate {
        for c in &cfg.crossovers {
            let Some(target_km) = c.target_km else { continue };
            let (ia, ib) = (
                cfg.system_index(&c.a).expect("validated"),
                cfg.system_index(&c.b).expect("validated"),
            );
            let fixed_loss_db = calibrate_fixed_loss(&cfg.systems[ia], &cfg.systems[ib], target_km)?;
            cfg.systems[ib].fixed_loss_db = fixed_loss_db;
            calibrations.push(Calibration {
                system_a: c.a.clone(),
                system_b: c.b.clone(),
                target_km,
                fixed_loss_db,
            });
        }
    }
    let pairs: Vec<(usize, usize)> = cfg
        .crossovers
        .iter()
        .map(|c| {
            (
                cfg.system_index(&c.a).expect("validated"),
                cfg.system_index(&c.b).expect("validated"),
            )
        })
        .collect();
    let curve = budget_curve(&cfg.systems, &cfg.grid.lengths(), &pairs)?;
    let loss_breakdown = cfg
        .systems
        .iter()
        .map(|s| SystemBreakdown {
            label: s.label.clone(),
            breakdown: cfg.report_lengths_km.iter().map(|&l| s.loss_breakdown(l)).collect(),
        })
        .collect();
    let manifest = BudgetManifest {
        calibrated: calibrate,
        calibrations,
        markers: curve.markers.clone(),
        loss_breakdown,
        config: cfg,
    };
    Ok(BudgetReport { curve, manifest })
}

/// Evaluates the budget and writes curve, marker and manifest files.
pub fn run_budget(cfg: &BudgetConfig, out_dir: &Path, calibrate: bool) -> Result<BudgetReport> {
    let report = evaluate_budget(cfg, calibrate)?;
    create_dir(out_dir)?;
    let c = &report.curve;
    let mut csv = String::from("length_km");
    for label in &c.labels {
        write!(csv, ",{label}").expect("string write");
    }
    csv.push('\n');
    for (i, l) in c.lengths_km.iter().enumerate() {
        write!(csv, "{l}").expect("string write");
        for rates in &c.rates {
            write!(csv, ",{:e}", rates[i]).expect("string write");
        }
        csv.push('\n');
    }
    write_file(&out_dir.join(BUDGET_CURVE_FILE), &csv)?;
    let mut csv = String::from("system_a,system_b,length_km\n");
    for m in &c.markers {
        writeln!(csv, "{},{},{}", m.system_a, m.system_b, m.length_km).expect("string write");
    }
    write_file(&out_dir.join(BUDGET_MARKERS_FILE), &csv)?;
    write_file(
        &out_dir.join(BUDGET_MANIFEST_FILE),
        &super::config::to_toml(&report.manifest)?,
    )?;
    Ok(report)
}

/// Probability that a Gaussian delay error of standard deviation `sigma_ps`
/// around `offset_ps` stays within `±window/2`.
pub fn window_capture(window_ps: f64, offset_ps: f64, sigma_ps: f64) -> f64 {
    let half = 0.5 * window_ps;
    if sigma_ps <= 0.0 {
        return if offset_ps.abs() <= half { 1.0 } else { 0.0 };
    }
    let s = sigma_ps * std::f64::consts::SQRT_2;
    0.5 * (libm::erf((half - offset_ps) / s) + libm::erf((half + offset_ps) / s))
}

/// Analytic description of the channel-0/channel-1 coincidence rate of `cfg`
/// as a link-budget system, for comparison with Monte-Carlo runs.
///
/// Arm A plays the source arm and arm B the fiber arm, so the rate is
/// `pair_rate(model, fiber_b.length_km)`. Arm A's fiber loss and the
/// analyzer projection go into the fixed loss; the mode fraction counts mode
/// combinations that land inside the coincidence window around the LP01
/// delay. Dark counts, dead time and accidentals are not included.
pub fn analytic_system(cfg: &ExperimentConfig, analyzer: Option<AnalyzerSettings>) -> SystemModel {
    let att_a = cfg.fiber_a.attenuation_at(cfg.wdm.channel_a_center_nm).db_per_km;
    let att_b = cfg.fiber_b.attenuation_at(cfg.wdm.channel_b_center_nm).db_per_km;
    let projection = analyzer.map_or(1.0, |s| {
        let (alpha, beta) = s.projection_angles();
        coincidence_probability(&cfg.polarization, alpha, beta)
    });
    let sigma = cfg.detector_a.jitter_sigma_ps.hypot(cfg.detector_b.jitter_sigma_ps);
    let mode_probs = |fiber: &crate::fiberprop::FiberSpec, wavelength_nm: f64| -> [(ModeId, f64, f64); 2] {
        let p = if fiber.lp11_guided(wavelength_nm) {
            fiber.lp11_excitation
        } else {
            0.0
        };
        [
            (ModeId::LP01, 1.0 - p, 0.0),
            (ModeId::LP11, p, fiber.lp11_extra_delay_ps()),
        ]
    };
    let mut mode_fraction = 0.0;
    for (_, pa, da) in mode_probs(&cfg.fiber_a, cfg.wdm.channel_a_center_nm) {
        for (_, pb, db) in mode_probs(&cfg.fiber_b, cfg.wdm.channel_b_center_nm) {
            mode_fraction += pa * pb * window_capture(cfg.analysis.window_ps as f64, db - da, sigma);
        }
    }
    SystemModel {
        label: "monte_carlo".into(),
        brightness_pairs_per_s: cfg.source.brightness_pairs_per_s,
        detector_efficiency_source_arm: cfg.detector_a.efficiency,
        detector_efficiency_fiber_arm: cfg.detector_b.efficiency,
        attenuation_db_per_km: att_b,
        fixed_loss_db: att_a * cfg.fiber_a.length_km - 10.0 * projection.log10(),
        wdm_split_factor: cfg.wdm.split_probability(),
        fundamental_mode_fraction: mode_fraction.min(1.0),
    }
}

/// Output directory: explicit, else the config's, else `default`.
pub fn output_dir(explicit: Option<&Path>, configured: Option<&Path>, default: &Path) -> PathBuf {
    explicit.or(configured).unwrap_or(default).to_path_buf()
}
