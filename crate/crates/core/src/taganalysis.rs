//! Cross-correlation, peak finding, coincidence counting and visibility
//! extraction from time tags.
//!
//! All functions take sorted tag times in ps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delay histogram with bins centered on multiples of `bin_width_ps`.
///
/// Bin `i` is centered at `(i − half_bins) · bin_width_ps`; a delay is
/// assigned to the nearest center, with ties broken away from zero so the
/// binning is symmetric under `d → −d`. Only delays whose bin center lies
/// within `± half_bins · bin_width_ps` are counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayHistogram {
    pub bin_width_ps: u64,
    pub half_bins: usize,
    pub counts: Vec<u64>,
    pub total_pairs_considered: u64,
}

impl DelayHistogram {
    /// Empty histogram covering `±range_ps`.
    pub fn new(bin_width_ps: u64, range_ps: u64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::InvalidParameter("bin width must be > 0 ps".into()));
        }
        let half_bins = (range_ps / bin_width_ps) as usize;
        Ok(DelayHistogram {
            bin_width_ps,
            half_bins,
            counts: vec![0; 2 * half_bins + 1],
            total_pairs_considered: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_center_ps(&self, index: usize) -> i64 {
        (index as i64 - self.half_bins as i64) * self.bin_width_ps as i64
    }

    /// Outer edges `(min_delay, max_delay)` in ps.
    pub fn range_ps(&self) -> (f64, f64) {
        let edge = (self.half_bins as f64 + 0.5) * self.bin_width_ps as f64;
        (-edge, edge)
    }

    /// Bin holding `delay_ps`, if any.
    #[inline]
    pub fn bin_index(&self, delay_ps: i64) -> Option<usize> {
        let w = self.bin_width_ps as i128;
        let d = delay_ps as i128;
        let k = d.signum() * ((2 * d.abs() + w) / (2 * w));
        (k.unsigned_abs() <= self.half_bins as u128).then(|| (k + self.half_bins as i128) as usize)
    }

    /// Largest |delay| that can land in a bin, rounded up.
    fn reach_ps(&self) -> u64 {
        (self.half_bins as u64 + 1) * self.bin_width_ps
    }

    #[inline]
    pub fn add(&mut self, delay_ps: i64) {
        if let Some(i) = self.bin_index(delay_ps) {
            self.counts[i] += 1;
            self.total_pairs_considered += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Histogram with delays negated.
    pub fn reversed(&self) -> DelayHistogram {
        let mut h = self.clone();
        h.counts.reverse();
        h
    }

    /// Adds `other` bin-wise; layouts must match.
    pub fn accumulate(&mut self, other: &DelayHistogram) -> Result<()> {
        if other.bin_width_ps != self.bin_width_ps || other.half_bins != self.half_bins {
            return Err(Error::InvalidParameter("histogram layouts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pairs_considered += other.total_pairs_considered;
        Ok(())
    }
}

fn check_sorted(name: &str, times: &[u64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(format!("stream {name} is not time-ordered")));
    }
    Ok(())
}

/// Histogram of `t_b − t_a` over all tag pairs within `±range_ps`.
///
/// Sliding two-pointer window: each `a` tag only visits the `b` tags inside
/// its delay range. When `a` and `b` are the same slice the zero-lag
/// self-pairs are skipped.
pub fn cross_correlation(a: &[u64], b: &[u64], bin_width_ps: u64, range_ps: u64) -> Result<DelayHistogram> {
    let mut hist = DelayHistogram::new(bin_width_ps, range_ps)?;
    check_sorted("a", a)?;
    check_sorted("b", b)?;
    let same = std::ptr::eq(a, b);
    let reach = hist.reach_ps();
    let mut start = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        let lo = ta.saturating_sub(reach);
        let hi = ta.saturating_add(reach);
        while start < b.len() && b[start] < lo {
            start += 1;
        }
        for (j, &tb) in b[start..].iter().enumerate() {
            if tb > hi {
                break;
            }
            if same && start + j == i {
                continue;
            }
            hist.add(tb as i64 - ta as i64);
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakClass {
    Fundamental,
    SideLeft,
    SideRight,
    Unknown,
}

impl PeakClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PeakClass::Fundamental => "fundamental",
            PeakClass::SideLeft => "side_left",
            PeakClass::SideRight => "side_right",
            PeakClass::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Floor-subtracted centroid.
    pub delay_ps: f64,
    /// Tallest bin.
    pub height: u64,
    /// Sum of the counts in the peak's bins.
    pub area: u64,
    pub classification: PeakClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    /// Ordered by delay.
    pub peaks: Vec<Peak>,
    /// Floor level of the smoothed histogram.
    pub floor: f64,
    /// Smoothed level a bin had to exceed.
    pub threshold: f64,
}

impl PeakSet {
    pub fn fundamental(&self) -> Option<&Peak> {
        self.peaks.iter().find(|p| p.classification == PeakClass::Fundamental)
    }

    pub fn side_peaks(&self) -> impl Iterator<Item = &Peak> {
        self.peaks
            .iter()
            .filter(|p| matches!(p.classification, PeakClass::SideLeft | PeakClass::SideRight))
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakOptions {
    /// Multiples of the floor spread a smoothed bin must exceed.
    pub threshold_sigma: f64,
    /// Box-car width applied before thresholding.
    pub smoothing_ps: u64,
    /// Clusters separated by at most this many ps are one peak.
    pub merge_gap_ps: u64,
    /// A cluster is split between two maxima when the dip between them falls
    /// below this fraction of the lower maximum (both above the floor).
    pub valley_fraction: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        PeakOptions {
            threshold_sigma: 5.0,
            smoothing_ps: 1000,
            merge_gap_ps: 2000,
            valley_fraction: 0.5,
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Finds peaks standing above the accidental floor.
///
/// The histogram is box-car smoothed; the floor and its spread are the median
/// and scaled MAD of the smoothed bins, with the spread never taken below the
/// Poisson value `√floor` (or 1). Runs of bins above `floor + k·spread` form
/// peaks, the tallest is the fundamental and the nearest peak on either side
/// of it is a side peak.
pub fn find_peaks(h: &DelayHistogram, options: &PeakOptions) -> PeakSet {
    let n = h.counts.len();
    let w = h.bin_width_ps;
    let mut m = ((options.smoothing_ps as f64 / w as f64).round() as usize).max(1);
    if m.is_multiple_of(2) {
        m += 1;
    }
    let half = m / 2;
    let mut prefix = vec![0u64; n + 1];
    for (i, &c) in h.counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let smoothed: Vec<f64> = (0..n)
        .map(|i| (prefix[(i + half + 1).min(n)] - prefix[i.saturating_sub(half)]) as f64)
        .collect();

    let mut sorted = smoothed.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = median(&sorted);
    let mut dev: Vec<f64> = smoothed.iter().map(|s| (s - floor).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let spread = (1.4826 * median(&dev)).max(floor.max(1.0).sqrt());
    let threshold = floor + options.threshold_sigma * spread;

    let merge_bins = (options.merge_gap_ps as f64 / w as f64).round() as usize;
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for (i, &s) in smoothed.iter().enumerate() {
        if s <= threshold {
            continue;
        }
        match clusters.last_mut() {
            Some((_, end)) if i - *end <= merge_bins + 1 => *end = i,
            _ => clusters.push((i, i)),
        }
    }

    let clusters: Vec<(usize, usize)> = clusters
        .into_iter()
        .flat_map(|(lo, hi)| {
            split_at_valleys(&smoothed[lo..=hi], floor, options.valley_fraction)
                .into_iter()
                .map(move |(a, b)| (lo + a, lo + b))
        })
        .collect();

    let mut raw_sorted: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    raw_sorted.sort_by(f64::total_cmp);
    let raw_floor = median(&raw_sorted);

    let mut peaks: Vec<Peak> = clusters
        .into_iter()
        .map(|(lo, hi)| {
            let bins = lo..=hi;
            let (mut wsum, mut tsum) = (0.0, 0.0);
            let mut height = 0;
            let mut area = 0;
            let mut argmax = lo;
            for i in bins {
                let c = h.counts[i];
                area += c;
                if c > height {
                    height = c;
                    argmax = i;
                }
                let weight = (c as f64 - raw_floor).max(0.0);
                wsum += weight;
                tsum += weight * h.bin_center_ps(i) as f64;
            }
            let delay_ps = if wsum > 0.0 {
                tsum / wsum
            } else {
                h.bin_center_ps(argmax) as f64
            };
            Peak {
                delay_ps,
                height,
                area,
                classification: PeakClass::Unknown,
            }
        })
        .collect();

    if let Some(fi) = (0..peaks.len()).max_by(|&i, &j| {
        (peaks[i].height, peaks[i].area)
            .cmp(&(peaks[j].height, peaks[j].area))
            .then(j.cmp(&i))
    }) {
        peaks[fi].classification = PeakClass::Fundamental;
        if fi > 0 {
            peaks[fi - 1].classification = PeakClass::SideLeft;
        }
        if fi + 1 < peaks.len() {
            peaks[fi + 1].classification = PeakClass::SideRight;
        }
    }
    PeakSet {
        peaks,
        floor,
        threshold,
    }
}

/// Splits one above-threshold cluster into sub-ranges around its prominent
/// maxima. A maximum is prominent when it rises above the higher of its two
/// bounding dips by at least `1 − valley_fraction` of its height over `floor`.
fn split_at_valleys(s: &[f64], floor: f64, valley_fraction: f64) -> Vec<(usize, usize)> {
    let n = s.len();
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || s[i] > s[i - 1]) && (i + 1 == n || s[i] >= s[i + 1]))
        .collect();
    let prominent: Vec<usize> = maxima
        .into_iter()
        .filter(|&m| {
            let height = s[m] - floor;
            let col = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
                let mut low = s[m];
                for j in range {
                    if s[j] > s[m] {
                        return Some(low);
                    }
                    low = low.min(s[j]);
                }
                None
            };
            let left = col(&mut (0..m).rev());
            let right = col(&mut (m + 1..n));
            match left.into_iter().chain(right).reduce(f64::max) {
                None => true,
                Some(c) => c - floor <= valley_fraction * height,
            }
        })
        .collect();
    if prominent.len() <= 1 {
        return vec![(0, n - 1)];
    }
    let mut cuts = Vec::with_capacity(prominent.len() - 1);
    for w in prominent.windows(2) {
        let dip = (w[0]..=w[1]).min_by(|&i, &j| s[i].total_cmp(&s[j])).expect("nonempty");
        cuts.push(dip);
    }
    let mut ranges = Vec::with_capacity(prominent.len());
    let mut start = 0;
    for c in cuts {
        ranges.push((start, c));
        start = c + 1;
    }
    ranges.push((start, n - 1));
    ranges
}

/// Number of `a` tags matched to a `b` tag with
/// `t_b − t_a − center_delay_ps ∈ [−window/2, +window/2]`.
///
/// Matching is one-to-one and greedy in time order: each `a` tag takes the
/// earliest unused `b` tag inside its window.
pub fn count_coincidences(a: &[u64], b: &[u64], window_ps: u64, center_delay_ps: i64) -> u64 {
    let w = window_ps as i128;
    let c2 = 2 * center_delay_ps as i128;
    let mut j = 0usize;
    let mut count = 0u64;
    for &ta in a {
        let mid2 = 2 * ta as i128 + c2;
        let (lo2, hi2) = (mid2 - w, mid2 + w);
        while j < b.len() && 2 * (b[j] as i128) < lo2 {
            j += 1;
        }
        if j < b.len() && 2 * (b[j] as i128) <= hi2 {
            count += 1;
            j += 1;
        }
    }
    count
}

/// Expected accidental coincidence rate `r_a · r_b · τ` in counts/s.
pub fn accidentals_rate(rate_a_per_s: f64, rate_b_per_s: f64, window_ps: u64) -> f64 {
    rate_a_per_s * rate_b_per_s * window_ps as f64 * 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    HV,
    DA,
}

impl Basis {
    /// Basis selected by the HWP angle of the fixed (signal) arm.
    pub fn from_signal_hwp(hwp_deg: f64) -> Basis {
        let r = (2.0 * hwp_deg).rem_euclid(90.0);
        if (22.5..67.5).contains(&r) {
            Basis::DA
        } else {
            Basis::HV
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Basis::HV => "HV",
            Basis::DA => "DA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMethod {
    Minmax,
    SinusoidFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityResult {
    pub basis: Basis,
    pub v: f64,
    pub max_counts: u64,
    pub min_counts: u64,
    pub method: VisibilityMethod,
    /// The raw estimate fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Visibility of a coincidence curve `(idler HWP angle °, counts)`.
///
/// `Minmax` uses the curve extrema. `SinusoidFit` fits
/// `c₀·[1 + v·cos(4(h − h₀))]` by linear least squares on
/// `{1, cos 4h, sin 4h}`.
pub fn visibility(curve: &[(f64, u64)], basis: Basis, method: VisibilityMethod) -> Result<VisibilityResult> {
    let span = curve.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - curve.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if curve.len() < 8 || !(span >= 180.0 - 1e-9) {
        return Err(Error::InsufficientScan {
            samples: curve.len(),
            span_deg: if span.is_finite() { span } else { 0.0 },
        });
    }
    let max_counts = curve.iter().map(|p| p.1).max().unwrap_or(0);
    let min_counts = curve.iter().map(|p| p.1).min().unwrap_or(0);
    if max_counts == 0 {
        return Err(Error::UndefinedVisibility("all coincidence counts are zero".into()));
    }
    let raw = match method {
        VisibilityMethod::Minmax => (max_counts - min_counts) as f64 / (max_counts + min_counts) as f64,
        VisibilityMethod::SinusoidFit => fit_sinusoid(curve)?.0,
    };
    let v = raw.clamp(0.0, 1.0);
    Ok(VisibilityResult {
        basis,
        v,
        max_counts,
        min_counts,
        method,
        clamped: v != raw,
    })
}

/// Least-squares `(v, h₀ in degrees, c₀)` of `c₀·[1 + v·cos(4(h − h₀))]`.
pub fn fit_sinusoid(curve: &[(f64, u64)]) -> Result<(f64, f64, f64)> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for &(h, c) in curve {
        let x = 4.0 * h.to_radians();
        let row = [1.0, x.cos(), x.sin()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * c as f64;
        }
    }
    let [c0, cc, cs] = solve3(ata, aty)
        .ok_or_else(|| Error::UndefinedVisibility("scan angles do not constrain the sinusoid".into()))?;
    if !(c0 > 0.0) {
        return Err(Error::UndefinedVisibility("fitted mean count is not positive".into()));
    }
    let amplitude = (cc * cc + cs * cs).sqrt();
    let phase_deg = cs.atan2(cc).to_degrees() / 4.0;
    Ok((amplitude / c0, phase_deg, c0))
}

fn solve3(mut m: [[f64; 3]; 3], mut y: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        y.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                let pivot_row = m[col];
                for (v, p) in m[r].iter_mut().zip(pivot_row).skip(col) {
                    *v -= f * p;
                }
                y[r] -= f * y[col];
            }
        }
    }
    Some([y[0] / m[0][0], y[1] / m[1][1], y[2] / m[2][2]])
}
