//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails or exceeds its time limit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nirlink::detection::{detect_stream, DetectorSpec};
use nirlink::experiment::{
    analyze_segments, candidate_rate, evaluate_budget, presets, run_analyze, run_budget, run_simulate,
    simulate_segment, ExperimentConfig, SegmentData,
};
use nirlink::fiberprop::transmission_db;
use nirlink::linkbudget::{calibrate_fixed_loss, comparison_systems, crossover};
use nirlink::pairgen::{idler_wavelength, phase_matched_wavelengths, SourceConfig};
use nirlink::rng::SimRng;
use nirlink::taganalysis::{accidentals_rate, count_coincidences, cross_correlation, Basis};
use nirlink::tagio::TagFormat;
use nirlink::FiberSpec;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn simulate(cfg: &ExperimentConfig) -> Vec<SegmentData> {
    cfg.segments()
        .iter()
        .map(|s| {
            let tags = simulate_segment(cfg, s.analyzer, s.index);
            let mut channels = tags.channels.into_iter();
            SegmentData {
                analyzer: s.analyzer,
                duration_s: s.duration_s(),
                a: channels.next().unwrap_or_default(),
                b: channels.next().unwrap_or_default(),
            }
        })
        .collect()
}

fn energy_conservation() -> Outcome {
    let oracle = 1.0 / (1.0 / 405.0 - 1.0 / 774.0);
    let idler = idler_wavelength(405.0, 774.0);
    ensure((idler - oracle).abs() < 1e-9, || {
        format!("idler {idler} nm, expected {oracle} nm")
    })?;
    ensure((idler - 850.0).abs() < 1.0, || {
        format!("idler {idler} nm not within 1 nm of 850")
    })?;
    let source = SourceConfig::nondegenerate(1e6);
    let (s, i) = phase_matched_wavelengths(34.0, &source).map_err(|e| e.to_string())?;
    ensure((s - 774.0).abs() < 1e-9 && (i - oracle).abs() < 1e-9, || {
        format!("phase matching at 34 °C gave ({s}, {i}) nm")
    })?;
    Ok(format!("idler {idler:.3} nm"))
}

fn v_number() -> Outcome {
    let fiber = FiberSpec::g652d(1.0);
    let oracle = 2.0 * std::f64::consts::PI * 4.1 * 0.14 / 0.81;
    let v = fiber.v_number_at(810.0).map_err(|e| e.to_string())?;
    ensure((v - oracle).abs() < 1e-12, || {
        format!("V(810) = {v}, expected {oracle}")
    })?;
    ensure((v - 4.45).abs() < 0.005, || {
        format!("V(810) = {v} does not round to 4.45")
    })?;
    ensure((v - 4.3).abs() / 4.3 < 0.05, || {
        format!("V(810) = {v} not within 5% of 4.3")
    })?;
    let v1550 = fiber.v_number_at(1550.0).map_err(|e| e.to_string())?;
    ensure(v1550 < 2.405, || format!("V(1550) = {v1550} is not single-mode"))?;
    Ok(format!("V(810) = {v:.4}, V(1550) = {v1550:.4}"))
}

fn loss_arithmetic() -> Outcome {
    let fiber = FiberSpec::g652d(0.0);
    let l12 = transmission_db(&fiber, 810.0, 12.0).map_err(|e| e.to_string())?.loss_db;
    let l6 = transmission_db(&fiber, 810.0, 6.0).map_err(|e| e.to_string())?.loss_db;
    ensure(l12 == 36.0, || format!("12 km loss {l12} dB"))?;
    ensure(l6 == 18.0, || format!("6 km loss {l6} dB"))?;
    Ok(format!("{l12} dB at 12 km, {l6} dB at 6 km"))
}

/// Scales `cfg`'s duration so about `pairs` candidate pairs are drawn.
fn with_pairs(mut cfg: ExperimentConfig, pairs: f64) -> ExperimentConfig {
    cfg.duration_s = pairs / candidate_rate(&cfg);
    cfg
}

fn cross_correlation_structure() -> Outcome {
    let mut notes = Vec::new();
    for length_km in [2.0, 4.0, 6.0] {
        let mut cfg = presets::degenerate_6km();
        cfg.fiber_a.length_km = length_km;
        cfg.fiber_b.length_km = length_km;
        let cfg = with_pairs(cfg, 1e6);
        let report =
            analyze_segments(&cfg.analysis, cfg.expected_delay_ps(), &simulate(&cfg)).map_err(|e| e.to_string())?;
        let peaks = &report.peaks;
        ensure(peaks.len() == 3, || {
            format!("degenerate {length_km} km: {} peaks", peaks.len())
        })?;
        let fundamental = peaks.fundamental().ok_or("no fundamental peak")?;
        let expected = cfg.fiber_a.dgd_ns_per_km * 1e3 * length_km;
        let bin = cfg.analysis.bin_width_ps as f64;
        let offsets: Vec<f64> = peaks.side_peaks().map(|p| p.delay_ps - fundamental.delay_ps).collect();
        ensure(offsets.len() == 2, || {
            format!("degenerate {length_km} km: {} side peaks", offsets.len())
        })?;
        for off in &offsets {
            ensure((off.abs() - expected).abs() <= bin, || {
                format!("degenerate {length_km} km: side peak at {off:.0} ps, expected ±{expected:.0} ps")
            })?;
        }
        ensure(offsets[0] < 0.0 && offsets[1] > 0.0, || {
            format!("side peaks not on both sides: {offsets:?}")
        })?;
        notes.push(format!("{length_km} km ±{:.0}/{:.0} ps", -offsets[0], offsets[1]));

        let mut cfg = presets::nondegenerate_12km();
        cfg.analyzer_scan.clear();
        cfg.fiber_a.length_km = length_km;
        cfg.fiber_b.length_km = length_km;
        let cfg = with_pairs(cfg, 1e6);
        let report =
            analyze_segments(&cfg.analysis, cfg.expected_delay_ps(), &simulate(&cfg)).map_err(|e| e.to_string())?;
        ensure(report.peaks.len() == 1, || {
            format!("non-degenerate {length_km} km: {} peaks", report.peaks.len())
        })?;
    }
    Ok(format!("3 peaks ({}), non-degenerate 1 peak", notes.join(", ")))
}

fn visibility_recovery() -> Outcome {
    let mut cfg = presets::nondegenerate_12km();
    cfg.duration_s = 500.0;
    ensure(cfg.analysis.window_ps == 1000, || "analysis window is not 1 ns".into())?;
    let report =
        analyze_segments(&cfg.analysis, cfg.expected_delay_ps(), &simulate(&cfg)).map_err(|e| e.to_string())?;
    let configured = |b: Basis| match b {
        Basis::HV => cfg.polarization.v_hv,
        Basis::DA => cfg.polarization.v_da,
    };
    ensure(report.bases.len() == 2, || {
        format!("{} bases analyzed", report.bases.len())
    })?;
    let mut notes = Vec::new();
    for b in &report.bases {
        let v0 = configured(b.basis);
        for (method, v) in [("minmax", b.minmax), ("fit", b.fit)] {
            ensure((v - v0).abs() <= 0.01, || {
                format!("{} {method} visibility {v:.4}, configured {v0}", b.basis.as_str())
            })?;
        }
        notes.push(format!("{} {:.4}/{:.4}", b.basis.as_str(), b.minmax, b.fit));
    }
    for (method, avg) in [
        ("minmax", report.average_visibility_minmax),
        ("fit", report.average_visibility_fit),
    ] {
        let avg = avg.ok_or_else(|| format!("no {method} average"))?;
        ensure((avg - 0.948).abs() <= 0.01, || format!("{method} average {avg:.4}"))?;
        notes.push(format!("avg {method} {avg:.4}"));
    }
    Ok(notes.join(", "))
}

fn crossover_reproduction() -> Outcome {
    let systems = comparison_systems(1e6);
    let rate = |eta_s: f64, eta_f: f64, wdm: f64, mode: f64| eta_s * eta_f * wdm * mode;
    let cases = [
        (0, 2, 6.0, 13.7, rate(0.5, 0.5, 1.0, 1.0), rate(0.5, 0.25, 1.0, 1.0)),
        (
            1,
            3,
            2.4,
            5.4,
            rate(0.5, 0.5, 0.5, 2.0 / 3.0),
            rate(0.5, 0.25, 0.5, 1.0),
        ),
    ];
    let mut notes = Vec::new();
    for (ia, ib, target, stated, ka, kb) in cases {
        let (a, b) = (&systems[ia], &systems[ib]);
        let oracle = 10.0 * (kb / ka).log10() + (3.0 - 0.22) * target;
        let fixed = calibrate_fixed_loss(a, b, target).map_err(|e| e.to_string())?;
        ensure((fixed - oracle).abs() < 1e-9, || {
            format!("calibration {fixed} dB, expected {oracle} dB")
        })?;
        ensure((fixed - stated).abs() < 0.1, || {
            format!("calibration {fixed:.4} dB, stated {stated} dB")
        })?;
        let b = nirlink::SystemModel {
            fixed_loss_db: fixed,
            ..b.clone()
        };
        let l = crossover(a, &b, (0.0, 12.0)).map_err(|e| e.to_string())?;
        ensure((l - target).abs() <= 0.1, || {
            format!("crossover {l} km, expected {target} km")
        })?;
        notes.push(format!("{fixed:.4} dB -> {l:.3} km"));
    }
    let report = evaluate_budget(&presets::budget_fig4(), true).map_err(|e| e.to_string())?;
    let markers: Vec<f64> = report.curve.markers.iter().map(|m| m.length_km).collect();
    ensure(
        markers.len() == 2 && (markers[0] - 6.0).abs() <= 0.1 && (markers[1] - 2.4).abs() <= 0.1,
        || format!("budget preset markers {markers:?}"),
    )?;
    Ok(notes.join(", "))
}

fn random_stream(rng: &mut SimRng, span_ps: u64) -> Vec<u64> {
    let n = rng.random_range(0..=10_000usize);
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..=span_ps)).collect();
    v.sort_unstable();
    v
}

/// Nearest bin center `k·w`, ties away from zero, by direct comparison.
fn nearest_bin(delay_ps: i64, w: i64) -> i64 {
    let lo = delay_ps.div_euclid(w);
    let (d_lo, d_hi) = (delay_ps - lo * w, (lo + 1) * w - delay_ps);
    match d_lo.cmp(&d_hi) {
        std::cmp::Ordering::Less => lo,
        std::cmp::Ordering::Greater => lo + 1,
        std::cmp::Ordering::Equal => {
            if lo.abs() > (lo + 1).abs() {
                lo
            } else {
                lo + 1
            }
        }
    }
}

fn histogram_oracle(a: &[u64], b: &[u64], w: u64, range: u64, same: bool) -> BTreeMap<i64, u64> {
    let half = (range / w) as i64;
    let mut counts = BTreeMap::new();
    for (i, &ta) in a.iter().enumerate() {
        for (j, &tb) in b.iter().enumerate() {
            if same && i == j {
                continue;
            }
            let d = tb as i64 - ta as i64;
            if d.unsigned_abs() > (half as u64 + 1) * w {
                continue;
            }
            let k = nearest_bin(d, w as i64);
            if k.abs() <= half {
                *counts.entry(k).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Each `a` in time order takes the earliest unused `b` within the window.
fn coincidence_oracle(a: &[u64], b: &[u64], window: u64, center: i64) -> u64 {
    let mut used = vec![false; b.len()];
    let mut count = 0;
    for &ta in a {
        let target = ta as f64 + center as f64;
        let half = window as f64 / 2.0;
        if let Some(j) = (0..b.len()).find(|&j| !used[j] && (b[j] as f64 - target).abs() <= half) {
            used[j] = true;
            count += 1;
        }
    }
    count
}

fn oracle_equivalence() -> Outcome {
    let mut rng = SimRng::seed_from_u64(7);
    let mut pairs_checked = 0u64;
    for case in 0..100 {
        let span = rng.random_range(1_000..=2_000_000_000u64);
        let a = random_stream(&mut rng, span);
        let same = case % 10 == 0;
        let b = if same { a.clone() } else { random_stream(&mut rng, span) };
        let w = rng.random_range(1..=1_000u64);
        let range = rng.random_range(0..=100_000u64);
        let hist = if same {
            cross_correlation(&a, &a, w, range)
        } else {
            cross_correlation(&a, &b, w, range)
        }
        .map_err(|e| e.to_string())?;
        let oracle = histogram_oracle(&a, &b, w, range, same);
        for (i, &c) in hist.counts.iter().enumerate() {
            let k = hist.bin_center_ps(i) / w as i64;
            let expected = oracle.get(&k).copied().unwrap_or(0);
            ensure(c == expected, || {
                format!("case {case}: bin {k} has {c}, oracle {expected}")
            })?;
        }
        ensure(hist.counts.len() as u64 == 2 * (range / w) + 1, || {
            format!("case {case}: bin count")
        })?;

        let window = rng.random_range(0..=20_000u64);
        let center = rng.random_range(-20_000..=20_000i64);
        let got = count_coincidences(&a, &b, window, center);
        let expected = coincidence_oracle(&a, &b, window, center);
        ensure(got == expected, || {
            format!("case {case}: {got} coincidences, oracle {expected}")
        })?;
        pairs_checked += (a.len() * b.len()) as u64;
    }
    Ok(format!("100 cases, {pairs_checked} tag pairs"))
}

fn dark_only(rate_per_s: f64) -> DetectorSpec {
    DetectorSpec {
        dark_rate_per_s: rate_per_s,
        dead_time_ns: 0.0,
        jitter_sigma_ps: 0.0,
        ..DetectorSpec::si_apd()
    }
}

fn accidental_floor() -> Outcome {
    let duration_s = 1.0;
    let mut rng_a = SimRng::seed_from_u64(11);
    let mut rng_b = SimRng::seed_from_u64(12);
    let a = detect_stream(&[], 0, &dark_only(1e6), duration_s, &mut rng_a).times();
    let b = detect_stream(&[], 1, &dark_only(8e5), duration_s, &mut rng_b).times();
    ensure(a.len() >= 100_000 && b.len() >= 100_000, || {
        format!("streams too short: {} / {}", a.len(), b.len())
    })?;
    let (w, range) = (128u64, 50_000u64);
    let hist = cross_correlation(&a, &b, w, range).map_err(|e| e.to_string())?;
    let (ra, rb) = (a.len() as f64 / duration_s, b.len() as f64 / duration_s);
    let expected = ra * rb * w as f64 * 1e-12 * duration_s;
    let via_accidentals = accidentals_rate(ra, rb, w) * duration_s;
    ensure((expected - via_accidentals).abs() < 1e-9 * expected, || {
        "accidentals_rate disagrees".into()
    })?;
    let level = hist.total() as f64 / hist.len() as f64;
    let rel = (level - expected) / expected;
    ensure(rel.abs() <= 0.05, || {
        format!("floor {level:.2} per bin, expected {expected:.2}")
    })?;
    Ok(format!(
        "floor {level:.2} per bin vs {expected:.2} ({:+.2}%)",
        100.0 * rel
    ))
}

fn min_gap(times: &[u64]) -> Option<u64> {
    times.windows(2).map(|w| w[1] - w[0]).min()
}

fn detector_invariants() -> Outcome {
    let mut configs = Vec::new();
    let mut deg = presets::degenerate_6km();
    deg.duration_s = 5.0;
    configs.push(deg);
    let mut nondeg = presets::nondegenerate_12km();
    nondeg.duration_s = 0.5;
    nondeg.reflected_port_detection = true;
    configs.push(nondeg);
    let mut stress = presets::degenerate_6km();
    stress.source.brightness_pairs_per_s = 2e7;
    stress.fiber_a.length_km = 0.0;
    stress.fiber_b.length_km = 0.0;
    stress.detector_b = DetectorSpec::ingaas_apd();
    stress.duration_s = 0.2;
    configs.push(stress);

    let mut checked = 0usize;
    for (i, cfg) in configs.iter().enumerate() {
        for seg in cfg.segments() {
            let tags = simulate_segment(cfg, seg.analyzer, seg.index);
            for (ch, times) in tags.channels.iter().enumerate() {
                let dead = cfg.detector_for_channel(ch as u16).dead_time_ps();
                if let Some(g) = min_gap(times) {
                    ensure(g >= dead, || {
                        format!("config {i} channel {ch}: tags {g} ps apart, dead time {dead} ps")
                    })?;
                }
                checked += times.len();
            }
        }
    }

    let mut dark = presets::degenerate_6km();
    dark.source.brightness_pairs_per_s = 0.0;
    dark.detector_b = DetectorSpec::ingaas_apd();
    dark.duration_s = 100.0;
    let tags = simulate_segment(&dark, None, 0);
    let mut notes = Vec::new();
    for (ch, times) in tags.channels.iter().enumerate() {
        let det = dark.detector_for_channel(ch as u16);
        // A non-paralyzable detector records λ/(1 + λτ) of a Poisson rate λ.
        let lambda = det.dark_rate_per_s;
        let mean = lambda * dark.duration_s / (1.0 + lambda * det.dead_time_ns * 1e-9);
        let z = (times.len() as f64 - mean) / mean.sqrt();
        ensure(z.abs() <= 5.0, || {
            format!("channel {ch}: {} dark counts, expected {mean}", times.len())
        })?;
        notes.push(format!("ch{ch} {} dark ({z:+.2}σ)", times.len()));
    }
    Ok(format!("{checked} tags respect dead time, {}", notes.join(", ")))
}

fn dir_bytes(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            continue;
        }
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path())?,
        );
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let root = tmp.path().join(tag);
        let mut all = BTreeMap::new();
        for (name, format) in [
            ("degenerate_6km", TagFormat::Bin),
            ("nondegenerate_12km", TagFormat::Bin),
            ("degenerate_6km", TagFormat::Csv),
        ] {
            let cfg = ExperimentConfig::resolve(Some(name), None).map_err(|e| e.to_string())?;
            let sim = root.join(format!("{name}_{}", format.extension()));
            let ana = sim.join("analysis");
            run_simulate(&cfg, &sim, format).map_err(|e| e.to_string())?;
            run_analyze(&sim, &ana, None).map_err(|e| e.to_string())?;
            for dir in [&sim, &ana] {
                for (f, bytes) in dir_bytes(dir).map_err(|e| e.to_string())? {
                    all.insert(
                        format!("{}/{f}", dir.display()).replace(&root.display().to_string(), ""),
                        bytes,
                    );
                }
            }
        }
        let budget = root.join("budget");
        let cfg = nirlink::BudgetConfig::resolve(Some("budget_fig4"), None).map_err(|e| e.to_string())?;
        run_budget(&cfg, &budget, true).map_err(|e| e.to_string())?;
        for (f, bytes) in dir_bytes(&budget).map_err(|e| e.to_string())? {
            all.insert(format!("budget/{f}"), bytes);
        }
        Ok(all)
    };
    let first = run("first")?;
    let second = run("second")?;
    ensure(first.keys().eq(second.keys()), || {
        "runs produced different file sets".into()
    })?;
    for (name, bytes) in &first {
        ensure(second[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    let tag_files = first.keys().filter(|k| k.contains("channel_")).count();
    Ok(format!("{} files identical ({tag_files} tag files)", first.len()))
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            name: "energy conservation",
            limit: secs(1),
            check: energy_conservation,
        },
        Criterion {
            name: "V-number",
            limit: secs(1),
            check: v_number,
        },
        Criterion {
            name: "loss arithmetic",
            limit: secs(1),
            check: loss_arithmetic,
        },
        Criterion {
            name: "cross-correlation structure",
            limit: secs(60),
            check: cross_correlation_structure,
        },
        Criterion {
            name: "visibility recovery",
            limit: secs(120),
            check: visibility_recovery,
        },
        Criterion {
            name: "crossover reproduction",
            limit: secs(1),
            check: crossover_reproduction,
        },
        Criterion {
            name: "oracle equivalence",
            limit: secs(60),
            check: oracle_equivalence,
        },
        Criterion {
            name: "accidental floor",
            limit: secs(30),
            check: accidental_floor,
        },
        Criterion {
            name: "detector invariants",
            limit: secs(30),
            check: detector_invariants,
        },
        Criterion {
            name: "determinism",
            limit: secs(60),
            check: determinism,
        },
    ];
    let mut failures = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; exceeded time limit")),
            other => other,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += usize::from(outcome.is_err());
        println!(
            "criterion {:>2} [{status}] {}: {detail} ({:.2}s / {}s)",
            i + 1,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failures == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
