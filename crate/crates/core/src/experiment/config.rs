//! Experiment and budget configuration files.
//!
//! Configs are TOML. Every dimensioned key carries its unit in the name
//! (`_ps`, `_nm`, `_km`, `_db`, `_s`, ...). A top-level `preset = "<name>"`
//! key starts from a built-in preset; the remaining keys override it, with
//! nested tables merged key by key and arrays replaced whole.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

use crate::detection::{AnalyzerSettings, DetectorSpec};
use crate::error::{Error, Result};
use crate::fiberprop::FiberSpec;
use crate::linkbudget::SystemModel;
use crate::pairgen::{PolarizationModel, SourceConfig, WdmSpec};
use crate::taganalysis::PeakOptions;
use crate::PS_PER_S;

use super::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterDelayPolicy {
    /// `center_delay_ps`, or the LP01 transit difference of the two arms.
    Fixed,
    /// Centroid of the fundamental peak, falling back to `Fixed`.
    FundamentalPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bin_width_ps: u64,
    pub range_ps: u64,
    pub window_ps: u64,
    pub center_delay: CenterDelayPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_delay_ps: Option<i64>,
    pub peaks: PeakOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width_ps: 128,
            range_ps: 50_000,
            window_ps: 1_000,
            center_delay: CenterDelayPolicy::FundamentalPeak,
            center_delay_ps: None,
            peaks: PeakOptions::default(),
        }
    }
}

impl AnalysisConfig {
    /// `base` with the keys of `text` overriding it; tables merge key by key.
    pub fn resolve_over(base: &AnalysisConfig, text: &str) -> Result<Self> {
        let located = Located { text, table: None };
        let user = DeTable::parse(text).map_err(|e| parse_error(&located, &e))?;
        let root_span = user.span();
        let (cfg, located): (AnalysisConfig, _) = merge_over(Some(base), located, user.into_inner(), root_span)?;
        if let Err(e) = cfg.validate() {
            let message = plain_message(&e);
            let key = message
                .split(|c: char| !(c.is_alphanumeric() || c == '_'))
                .next()
                .unwrap_or("");
            return Err(located.error_at(key, &message));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.bin_width_ps == 0 {
            return bad("bin_width_ps must be > 0");
        }
        if self.range_ps < self.bin_width_ps {
            return bad("range_ps must be at least one bin_width_ps");
        }
        if self.window_ps == 0 {
            return bad("window_ps must be > 0");
        }
        if !(self.peaks.threshold_sigma > 0.0) {
            return bad("peaks.threshold_sigma must be > 0");
        }
        if !(self.peaks.valley_fraction > 0.0 && self.peaks.valley_fraction <= 1.0) {
            return bad("peaks.valley_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// One Monte-Carlo experiment: source, link, detectors, analyzer scan and
/// analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Top-level seed; every random stream is derived from it.
    pub seed: u64,
    /// Acquisition time per analyzer setting.
    pub duration_s: f64,
    /// Idle time between consecutive settings in the tag files.
    pub segment_gap_ps: u64,
    /// Require equal fiber length in both arms.
    pub symmetric: bool,
    /// Only draw pairs that can produce at least one click (exact, faster).
    pub thinning: bool,
    /// Also detect the reflected PBS ports (channels 2 and 3).
    pub reflected_port_detection: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub source: SourceConfig,
    pub polarization: PolarizationModel,
    pub wdm: WdmSpec,
    pub fiber_a: FiberSpec,
    pub fiber_b: FiberSpec,
    pub detector_a: DetectorSpec,
    pub detector_b: DetectorSpec,
    pub analysis: AnalysisConfig,
    /// Analyzer settings, one segment each. Empty: no polarization analysis.
    #[serde(default)]
    pub analyzer_scan: Vec<AnalyzerSettings>,
}

/// Time slot of one analyzer setting inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub index: u32,
    pub start_ps: u64,
    pub end_ps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<AnalyzerSettings>,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        (self.end_ps - self.start_ps) as f64 / PS_PER_S
    }
}

impl ExperimentConfig {
    pub fn duration_ps(&self) -> u64 {
        (self.duration_s * PS_PER_S).round() as u64
    }

    pub fn channel_count(&self) -> u16 {
        if self.reflected_port_detection {
            4
        } else {
            2
        }
    }

    pub fn detector_for_channel(&self, channel: u16) -> &DetectorSpec {
        if channel.is_multiple_of(2) {
            &self.detector_a
        } else {
            &self.detector_b
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        let d = self.duration_ps();
        let settings: Vec<Option<AnalyzerSettings>> = if self.analyzer_scan.is_empty() {
            vec![None]
        } else {
            self.analyzer_scan.iter().copied().map(Some).collect()
        };
        settings
            .into_iter()
            .enumerate()
            .map(|(i, analyzer)| {
                let start_ps = i as u64 * (d + self.segment_gap_ps);
                Segment {
                    index: i as u32,
                    start_ps,
                    end_ps: start_ps + d,
                    analyzer,
                }
            })
            .collect()
    }

    /// LP01 arrival-time difference, arm B minus arm A.
    pub fn expected_delay_ps(&self) -> i64 {
        (self.fiber_b.base_delay_ps() - self.fiber_a.base_delay_ps()).round() as i64
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_located().map_err(|(_, e)| e)
    }

    /// Like `validate`, also naming the top-level key the problem sits under.
    fn validate_located(&self) -> std::result::Result<(), (&'static str, Error)> {
        let at = |key: &'static str| move |e: Error| (key, e);
        let bad = |key: &'static str, m: String| Err((key, Error::InvalidParameter(m)));
        if self.seed > i64::MAX as u64 {
            return bad("seed", format!("seed must be ≤ {}", i64::MAX));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(
                "duration_s",
                format!("duration_s must be ≥ 0 (got {})", self.duration_s),
            );
        }
        self.source.validate().map_err(at("source"))?;
        self.polarization.validate().map_err(at("polarization"))?;
        self.wdm.validate().map_err(at("wdm"))?;
        self.fiber_a.validate().map_err(at("fiber_a"))?;
        self.fiber_b.validate().map_err(at("fiber_b"))?;
        self.detector_a.validate().map_err(at("detector_a"))?;
        self.detector_b.validate().map_err(at("detector_b"))?;
        self.analysis.validate().map_err(at("analysis"))?;
        if self.symmetric && self.fiber_a.length_km != self.fiber_b.length_km {
            return bad(
                "fiber_b",
                format!(
                    "symmetric run needs equal arm lengths (fiber_a.length_km = {}, fiber_b.length_km = {})",
                    self.fiber_a.length_km, self.fiber_b.length_km
                ),
            );
        }
        let dead = self.detector_a.dead_time_ps().max(self.detector_b.dead_time_ps());
        if self.segment_gap_ps < dead {
            return bad(
                "segment_gap_ps",
                format!("segment_gap_ps must cover the detector dead time ({dead} ps)"),
            );
        }
        if self
            .analyzer_scan
            .iter()
            .any(|s| !s.hwp_a_deg.is_finite() || !s.hwp_b_deg.is_finite())
        {
            return bad("analyzer_scan", "analyzer angles must be finite".into());
        }
        if self.analyzer_scan.len() > u32::MAX as usize {
            return bad("analyzer_scan", "too many analyzer settings".into());
        }
        Ok(())
    }

    /// Parses a config document, resolving `preset = "<name>"` if present.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::resolve(None, Some(text))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Resolves a preset (from `preset` or the document's own `preset` key)
    /// with optional overrides.
    pub fn resolve(preset: Option<&str>, overrides: Option<&str>) -> Result<Self> {
        let (cfg, located) = load_layered(preset, overrides.unwrap_or(""), |name| match presets::preset(name) {
            Some(presets::Preset::Experiment(c)) => Ok(*c),
            Some(presets::Preset::Budget(_)) => Err(format!("preset `{name}` is a budget preset")),
            None => Err(unknown_preset(name)),
        })?;
        if let Err((key, e)) = cfg.validate_located() {
            return Err(located.error_at(key, &plain_message(&e)));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        to_toml(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthGrid {
    pub start_km: f64,
    pub stop_km: f64,
    pub step_km: f64,
}

impl LengthGrid {
    pub fn lengths(&self) -> Vec<f64> {
        let n = ((self.stop_km - self.start_km) / self.step_km + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start_km + i as f64 * self.step_km).collect()
    }
}

/// A pair of systems whose crossover is marked; `target_km` is used when
/// fixed losses are calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossoverSpec {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Lengths at which the manifest lists a per-factor loss breakdown.
    #[serde(default)]
    pub report_lengths_km: Vec<f64>,
    pub grid: LengthGrid,
    pub systems: Vec<SystemModel>,
    #[serde(default)]
    pub crossovers: Vec<CrossoverSpec>,
}

impl BudgetConfig {
    pub fn system_index(&self, label: &str) -> Option<usize> {
        self.systems.iter().position(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_located().map_err(|(_, e)| e)
    }

    fn validate_located(&self) -> std::result::Result<(), (&'static str, Error)> {
        let bad = |key: &'static str, m: String| Err((key, Error::InvalidParameter(m)));
        let g = &self.grid;
        if !(g.start_km >= 0.0 && g.stop_km >= g.start_km && g.step_km > 0.0 && g.stop_km.is_finite()) {
            return bad("grid", "grid needs 0 ≤ start_km ≤ stop_km and step_km > 0".into());
        }
        if g.lengths().len() > 1_000_000 {
            return bad("grid", "grid has more than a million points".into());
        }
        if self.systems.is_empty() {
            return bad("systems", "at least one system is required".into());
        }
        for s in &self.systems {
            s.validate().map_err(|e| ("systems", e))?;
        }
        for (i, s) in self.systems.iter().enumerate() {
            if self.systems[..i].iter().any(|o| o.label == s.label) {
                return bad("systems", format!("duplicate system label `{}`", s.label));
            }
        }
        for c in &self.crossovers {
            for label in [&c.a, &c.b] {
                if self.system_index(label).is_none() {
                    return bad("crossovers", format!("crossover refers to unknown system `{label}`"));
                }
            }
            if c.target_km.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
                return bad("crossovers", "crossover target_km must be ≥ 0".into());
            }
        }
        if self.report_lengths_km.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("report_lengths_km", "report lengths must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::resolve(None, Some(text))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn resolve(preset: Option<&str>, overrides: Option<&str>) -> Result<Self> {
        let (cfg, located) = load_layered(preset, overrides.unwrap_or(""), |name| match presets::preset(name) {
            Some(presets::Preset::Budget(c)) => Ok(c),
            Some(presets::Preset::Experiment(_)) => Err(format!("preset `{name}` is an experiment preset")),
            None => Err(unknown_preset(name)),
        })?;
        if let Err((key, e)) = cfg.validate_located() {
            return Err(located.error_at(key, &plain_message(&e)));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        to_toml(self)
    }
}

fn plain_message(e: &Error) -> String {
    match e {
        Error::InvalidParameter(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

fn unknown_preset(name: &str) -> String {
    format!(
        "unknown preset `{name}` (available: {})",
        presets::PRESET_NAMES.join(", ")
    )
}

pub(crate) fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::config(None, e.to_string()))
}

/// The user document, kept for mapping keys back to line numbers.
struct Located<'a> {
    text: &'a str,
    table: Option<DeTable<'a>>,
}

impl Located<'_> {
    fn line_of(&self, span: &Range<usize>) -> Option<usize> {
        (span.start <= self.text.len()).then(|| self.text[..span.start].matches('\n').count() + 1)
    }

    /// Config error on the line of `key`, or of the key inside it that the
    /// message names.
    fn error_at(&self, key: &str, message: &str) -> Error {
        let Some(table) = &self.table else {
            return Error::config(None, message);
        };
        let fallbacks: &[&str] = match key {
            "fiber_b" => &["fiber_b", "fiber_a", "symmetric"],
            _ => &[],
        };
        let found = std::iter::once(key)
            .chain(fallbacks.iter().copied())
            .find_map(|k| table.get_key_value(k));
        let Some((k, v)) = found else {
            return Error::config(None, message);
        };
        let mut span = k.span();
        if let DeValue::Table(inner) = v.get_ref() {
            let named = inner
                .iter()
                .filter(|(ik, _)| message.contains(ik.get_ref().as_ref()))
                .max_by_key(|(ik, _)| ik.get_ref().len());
            if let Some((ik, _)) = named {
                span = ik.span();
            }
        }
        Error::config(self.line_of(&span), message)
    }
}

/// Sentinel span for values that do not come from the user document.
const NO_SPAN: Range<usize> = usize::MAX..usize::MAX;

fn respan<'i>(value: Spanned<DeValue<'i>>) -> Spanned<DeValue<'i>> {
    let inner = match value.into_inner() {
        DeValue::Table(t) => DeValue::Table(respan_table(t)),
        DeValue::Array(a) => DeValue::Array(a.into_iter().map(respan).collect()),
        other => other,
    };
    Spanned::new(NO_SPAN, inner)
}

fn respan_table<'i>(table: DeTable<'i>) -> DeTable<'i> {
    table
        .into_iter()
        .map(|(k, v)| (Spanned::new(NO_SPAN, k.into_inner()), respan(v)))
        .collect()
}

/// Merges `over` into `base`: tables recursively, everything else replaced.
fn overlay<'i>(base: &mut DeTable<'i>, over: DeTable<'i>) {
    for (k, v) in over {
        let both_tables = matches!(
            (base.get(k.get_ref().as_ref()).map(Spanned::get_ref), v.get_ref()),
            (Some(DeValue::Table(_)), DeValue::Table(_))
        );
        if both_tables {
            let (mut key, mut existing) = base.remove_entry(k.get_ref().as_ref()).expect("checked above");
            let span = v.span();
            if let (DeValue::Table(dst), DeValue::Table(src)) = (existing.get_mut(), v.into_inner()) {
                overlay(dst, src);
            }
            key = Spanned::new(k.span(), key.into_inner());
            base.insert(key, Spanned::new(span, existing.into_inner()));
        } else {
            base.insert(k, v);
        }
    }
}

fn parse_error(located: &Located<'_>, e: &toml::de::Error) -> Error {
    let line = e.span().and_then(|s| located.line_of(&s));
    Error::config(line, e.message().trim_end().to_string())
}

/// Parses `text` over an optional preset and deserializes the merged table.
fn load_layered<'a, T, F>(preset: Option<&str>, text: &'a str, lookup: F) -> Result<(T, Located<'a>)>
where
    T: Serialize + DeserializeOwned,
    F: Fn(&str) -> std::result::Result<T, String>,
{
    let located = Located { text, table: None };
    let user = DeTable::parse(text).map_err(|e| parse_error(&located, &e))?;
    let root_span = user.span();
    let mut user: DeTable<'a> = user.into_inner();

    let named = match user.remove_entry("preset") {
        None => None,
        Some((k, v)) => match v.get_ref() {
            DeValue::String(s) => Some((s.to_string(), k.span())),
            _ => return Err(Error::config(located.line_of(&k.span()), "`preset` must be a string")),
        },
    };
    let chosen = match (&named, preset) {
        (Some((a, span)), Some(b)) if a != b => {
            return Err(Error::config(
                located.line_of(span),
                format!("config names preset `{a}` but `{b}` was requested"),
            ))
        }
        (Some((a, span)), _) => Some((a.clone(), located.line_of(span))),
        (None, Some(b)) => Some((b.to_string(), None)),
        (None, None) => None,
    };
    let base = chosen
        .map(|(name, line)| lookup(&name).map_err(|m| Error::config(line, m)))
        .transpose()?;
    merge_over(base.as_ref(), located, user, root_span)
}

/// Deserializes `user` overlaid on `base`, or on nothing.
fn merge_over<'a, T>(
    base: Option<&T>,
    mut located: Located<'a>,
    user: DeTable<'a>,
    root_span: Range<usize>,
) -> Result<(T, Located<'a>)>
where
    T: Serialize + DeserializeOwned,
{
    located.table = Some(user.clone());
    let base_text = base.map(to_toml).transpose()?.unwrap_or_default();
    let merged: DeTable<'_> = if base.is_none() {
        user
    } else {
        let base = DeTable::parse(&base_text)
            .map_err(|e| Error::config(None, format!("base config does not round-trip: {e}")))?
            .into_inner();
        let mut base = respan_table(base);
        overlay(&mut base, user);
        base
    };
    let de = toml::de::Deserializer::from(Spanned::new(root_span, merged));
    let value = T::deserialize(de).map_err(|e| parse_error(&located, &e))?;
    Ok((value, located))
}
