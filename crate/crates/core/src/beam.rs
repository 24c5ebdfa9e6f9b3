//! Array geometry, steering, far-field pattern synthesis and scan metrics.
//!
//! Angles follow the antenna convention: θ is measured from broadside (the
//! array normal, +z) and φ is the azimuth in the array plane. Pattern cuts
//! use a signed θ so that a principal-plane cut at φ covers −90°..90°.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationTable;
use crate::constants::SPEED_OF_LIGHT;
use crate::units::{db_to_amplitude, lin_to_db, wrap_deg_180, wrap_deg_360};

/// Floor applied to pattern values where the gain is exactly zero.
pub const MIN_GAIN_DBI: f64 = -200.0;
/// Coarsest θ spacing accepted by [`scan_metrics`], degrees.
pub const MAX_SCAN_STEP_DEG: f64 = 0.5;
/// A sidelobe within this many dB of the main lobe counts as a grating lobe.
pub const GRATING_LOBE_MARGIN_DB: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum BeamError {
    #[error("array has no elements")]
    NoElements,
    #[error("elements {0} and {1} share a position")]
    DuplicateElement(usize, usize),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("steering angle {0}° outside (−90°, 90°)")]
    ThetaOutOfRange(f64),
    #[error("{got} weights for {expected} elements")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("calibration table is empty")]
    EmptyTable,
    #[error("pattern grid is empty")]
    EmptyGrid,
    #[error("θ spacing {0}° is coarser than 0.5°")]
    ResolutionTooCoarse(f64),
    #[error("requested peak at {0}° cannot be reached")]
    Unreachable(f64),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> BeamError {
    BeamError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Radiation pattern of a single element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementPattern {
    Isotropic,
    /// `D·cos^q θ` on the front hemisphere with `q = D/2 − 1`, which makes
    /// the broadside directivity equal to `D`.
    CosinePower { peak_gain_dbi: f64 },
}

impl Default for ElementPattern {
    fn default() -> Self {
        ElementPattern::CosinePower { peak_gain_dbi: 4.4 }
    }
}

impl ElementPattern {
    pub fn peak_gain_dbi(&self) -> f64 {
        match *self {
            ElementPattern::Isotropic => 0.0,
            ElementPattern::CosinePower { peak_gain_dbi } => peak_gain_dbi,
        }
    }

    /// Exponent `q` of the cosine model (0 for isotropic).
    pub fn cosine_exponent(&self) -> f64 {
        match *self {
            ElementPattern::Isotropic => 0.0,
            ElementPattern::CosinePower { peak_gain_dbi } => 0.5 * 10f64.powf(peak_gain_dbi / 10.0) - 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), BeamError> {
        if let ElementPattern::CosinePower { peak_gain_dbi } = *self {
            if !peak_gain_dbi.is_finite() || self.cosine_exponent() < 0.0 {
                return Err(invalid(
                    "element_pattern.peak_gain_dbi",
                    "must be ≥ 3.01 dBi (hemispherical minimum)",
                ));
            }
        }
        Ok(())
    }

    /// Linear power gain at polar angle θ (radians).
    pub fn gain_linear(&self, theta: f64) -> f64 {
        match *self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::CosinePower { peak_gain_dbi } => {
                let c = theta.cos();
                if c <= 0.0 {
                    0.0
                } else {
                    10f64.powf(peak_gain_dbi / 10.0) * c.powf(self.cosine_exponent())
                }
            }
        }
    }

    /// Full −3 dB beamwidth, degrees.
    pub fn hpbw_deg(&self) -> Option<f64> {
        match self {
            ElementPattern::Isotropic => None,
            ElementPattern::CosinePower { .. } => {
                let q = self.cosine_exponent();
                if q == 0.0 {
                    return None;
                }
                Some(2.0 * 0.5f64.powf(1.0 / q).acos().to_degrees())
            }
        }
    }
}

/// Element positions and operating frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// (x, y) positions in meters.
    pub elements: Vec<[f64; 2]>,
    pub design_frequency_hz: f64,
    pub element_pattern: ElementPattern,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::grid(2, 2, 5.6e-3, 28e9, ElementPattern::default())
    }
}

impl ArrayGeometry {
    /// `nx × ny` rectangular grid centered on the origin.
    pub fn grid(nx: usize, ny: usize, pitch_m: f64, frequency_hz: f64, pattern: ElementPattern) -> Self {
        let cx = (nx as f64 - 1.0) / 2.0;
        let cy = (ny as f64 - 1.0) / 2.0;
        let mut elements = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                elements.push([(ix as f64 - cx) * pitch_m, (iy as f64 - cy) * pitch_m]);
            }
        }
        Self {
            elements,
            design_frequency_hz: frequency_hz,
            element_pattern: pattern,
        }
    }

    /// Uniform line along x.
    pub fn line(n: usize, pitch_m: f64, frequency_hz: f64, pattern: ElementPattern) -> Self {
        Self::grid(n, 1, pitch_m, frequency_hz, pattern)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.design_frequency_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    pub fn validate(&self) -> Result<(), BeamError> {
        if self.elements.is_empty() {
            return Err(BeamError::NoElements);
        }
        if !(self.design_frequency_hz.is_finite() && self.design_frequency_hz > 0.0) {
            return Err(invalid("design_frequency_hz", "must be > 0"));
        }
        if self.elements.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("elements", "positions must be finite"));
        }
        for a in 0..self.elements.len() {
            for b in a + 1..self.elements.len() {
                let [xa, ya] = self.elements[a];
                let [xb, yb] = self.elements[b];
                if (xa - xb).hypot(ya - yb) < 1e-12 {
                    return Err(BeamError::DuplicateElement(a, b));
                }
            }
        }
        self.element_pattern.validate()
    }

    /// Phase `k·r·û` of each element toward (θ, φ), radians.
    fn path_phases(&self, theta: f64, phi: f64) -> impl Iterator<Item = f64> + '_ {
        let k = self.wavenumber();
        let (ux, uy) = (theta.sin() * phi.cos(), theta.sin() * phi.sin());
        self.elements.iter().map(move |[x, y]| k * (x * ux + y * uy))
    }
}

/// Complex excitation of each element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementWeights {
    pub weights: Vec<Complex64>,
    /// Phase error of each element versus the ideal weight after snapping
    /// to a calibration table; empty for ideal weights.
    pub residual_phase_deg: Vec<f64>,
}

impl ElementWeights {
    pub fn from_polar_deg(phases_deg: &[f64], gains_db: &[f64]) -> Self {
        let weights = phases_deg
            .iter()
            .zip(gains_db)
            .map(|(p, g)| Complex64::from_polar(db_to_amplitude(*g), p.to_radians()))
            .collect();
        Self {
            weights,
            residual_phase_deg: Vec::new(),
        }
    }

    pub fn from_phases_deg(phases_deg: &[f64]) -> Self {
        Self::from_polar_deg(phases_deg, &vec![0.0; phases_deg.len()])
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_phases_deg(&vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Phases in [0°, 360°).
    pub fn phases_deg(&self) -> Vec<f64> {
        self.weights.iter().map(|w| wrap_deg_360(w.arg().to_degrees())).collect()
    }

    pub fn gains_db(&self) -> Vec<f64> {
        self.weights.iter().map(|w| 20.0 * w.norm().log10()).collect()
    }
}

/// Per-element steering phases toward (θ, φ), degrees in [0, 360).
pub fn steering_phases(geometry: &ArrayGeometry, theta_deg: f64, phi_deg: f64) -> Result<Vec<f64>, BeamError> {
    if !(theta_deg.abs() < 90.0) {
        return Err(BeamError::ThetaOutOfRange(theta_deg));
    }
    Ok(geometry
        .path_phases(theta_deg.to_radians(), phi_deg.to_radians())
        .map(|p| wrap_deg_360(-p.to_degrees()))
        .collect())
}

/// Unit-magnitude weights steering the array factor toward (θ, φ).
pub fn steering_weights(geometry: &ArrayGeometry, theta_deg: f64, phi_deg: f64) -> Result<ElementWeights, BeamError> {
    steering_phases(geometry, theta_deg, phi_deg).map(|p| ElementWeights::from_phases_deg(&p))
}

/// Sample axes of a pattern evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Signed polar angles, degrees.
    pub theta_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
}

impl GridSpec {
    /// θ from `start` to `stop` inclusive in `step` increments for each φ.
    pub fn cuts(phi_deg: &[f64], start: f64, stop: f64, step: f64) -> Self {
        let n = ((stop - start) / step).round() as usize;
        Self {
            theta_deg: (0..=n).map(|i| start + i as f64 * step).collect(),
            phi_deg: phi_deg.to_vec(),
        }
    }

    /// The two principal-plane cuts (φ = 0° and 90°) over −90°..90°.
    pub fn principal(step: f64) -> Self {
        Self::cuts(&[0.0, 90.0], -90.0, 90.0, step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMetadata {
    pub steering_theta_deg: Option<f64>,
    pub steering_phi_deg: Option<f64>,
    pub quantization: String,
}

impl Default for PatternMetadata {
    fn default() -> Self {
        Self {
            steering_theta_deg: None,
            steering_phi_deg: None,
            quantization: "ideal".to_string(),
        }
    }
}

/// Gain samples on a θ × φ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGrid {
    pub theta_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
    /// `gain_dbi[phi_index][theta_index]`.
    pub gain_dbi: Vec<Vec<f64>>,
    pub metadata: PatternMetadata,
}

#[derive(Serialize)]
struct CsvRow {
    theta_deg: f64,
    phi_deg: f64,
    gain_dbi: f64,
}

#[derive(Serialize)]
struct PolarCut<'a> {
    phi_deg: f64,
    theta_deg: &'a [f64],
    gain_dbi: &'a [f64],
}

#[derive(Serialize)]
struct PolarJson<'a> {
    metadata: &'a PatternMetadata,
    peak_gain_dbi: f64,
    cuts: Vec<PolarCut<'a>>,
}

impl PatternGrid {
    pub fn max_gain_dbi(&self) -> f64 {
        self.gain_dbi
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// θ cut at the given φ index.
    pub fn cut(&self, phi_index: usize) -> &[f64] {
        &self.gain_dbi[phi_index]
    }

    pub fn with_metadata(mut self, metadata: PatternMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for (phi, row) in self.phi_deg.iter().zip(&self.gain_dbi) {
            for (theta, g) in self.theta_deg.iter().zip(row) {
                w.serialize(CsvRow {
                    theta_deg: *theta,
                    phi_deg: *phi,
                    gain_dbi: *g,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One object per φ cut, ready for a polar plot.
    pub fn to_polar_json(&self) -> Result<String, serde_json::Error> {
        let cuts = self
            .phi_deg
            .iter()
            .zip(&self.gain_dbi)
            .map(|(phi, row)| PolarCut {
                phi_deg: *phi,
                theta_deg: &self.theta_deg,
                gain_dbi: row,
            })
            .collect();
        serde_json::to_string_pretty(&PolarJson {
            metadata: &self.metadata,
            peak_gain_dbi: self.max_gain_dbi(),
            cuts,
        })
    }
}

fn check_weights(geometry: &ArrayGeometry, weights: &ElementWeights) -> Result<(), BeamError> {
    geometry.validate()?;
    if weights.len() != geometry.len() {
        return Err(BeamError::WeightCountMismatch {
            expected: geometry.len(),
            got: weights.len(),
        });
    }
    Ok(())
}

/// Gain (dBi) in one direction; assumes validated inputs.
fn gain_at(geometry: &ArrayGeometry, weights: &ElementWeights, theta_deg: f64, phi_deg: f64) -> f64 {
    let theta = theta_deg.to_radians();
    let af: Complex64 = geometry
        .path_phases(theta, phi_deg.to_radians())
        .zip(&weights.weights)
        .map(|(p, w)| w * Complex64::from_polar(1.0, p))
        .sum();
    let g = geometry.element_pattern.gain_linear(theta) * af.norm_sqr() / geometry.len() as f64;
    if g > 0.0 {
        lin_to_db(g).max(MIN_GAIN_DBI)
    } else {
        MIN_GAIN_DBI
    }
}

/// Far-field gain normalized so uniform in-phase weights give
/// `element peak + 10·log₁₀(N)` at broadside.
pub fn radiation_pattern(
    geometry: &ArrayGeometry,
    weights: &ElementWeights,
    grid: &GridSpec,
) -> Result<PatternGrid, BeamError> {
    check_weights(geometry, weights)?;
    if grid.theta_deg.is_empty() || grid.phi_deg.is_empty() {
        return Err(BeamError::EmptyGrid);
    }
    let gain_dbi = grid
        .phi_deg
        .par_iter()
        .map(|&phi| {
            grid.theta_deg
                .iter()
                .map(|&theta| gain_at(geometry, weights, theta, phi))
                .collect()
        })
        .collect();
    Ok(PatternGrid {
        theta_deg: grid.theta_deg.clone(),
        phi_deg: grid.phi_deg.clone(),
        gain_dbi,
        metadata: PatternMetadata::default(),
    })
}

/// Beam parameters extracted from a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub peak_theta_deg: f64,
    pub peak_phi_deg: f64,
    pub peak_gain_dbi: f64,
    /// Half-power width; absent when the main lobe does not drop 3 dB inside the grid.
    pub hpbw_deg: Option<f64>,
    /// Highest sidelobe relative to the peak, dB.
    pub first_sidelobe_db: Option<f64>,
    pub sidelobe_theta_deg: Option<f64>,
}

impl ScanMetrics {
    pub fn has_grating_lobe(&self) -> bool {
        self.first_sidelobe_db
            .is_some_and(|s| s >= -GRATING_LOBE_MARGIN_DB)
    }
}

/// Vertex of the parabola through three equally spaced samples, as an
/// offset in samples and the interpolated value.
fn parabolic(a: f64, b: f64, c: f64) -> (f64, f64) {
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return (0.0, b);
    }
    let d = 0.5 * (a - c) / den;
    (d, b - 0.25 * (a - c) * d)
}

/// Crossing of `level` between samples `i` and `j`, in θ.
fn crossing(theta: &[f64], g: &[f64], i: usize, j: usize, level: f64) -> f64 {
    let t = (level - g[i]) / (g[j] - g[i]);
    theta[i] + t * (theta[j] - theta[i])
}

/// Peak, beamwidth and highest sidelobe of the φ cut that holds the
/// pattern maximum.
pub fn scan_metrics(pattern: &PatternGrid) -> Result<ScanMetrics, BeamError> {
    let theta = &pattern.theta_deg;
    if theta.len() < 3 || pattern.gain_dbi.is_empty() {
        return Err(BeamError::EmptyGrid);
    }
    let step = theta
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    if step > MAX_SCAN_STEP_DEG + 1e-9 {
        return Err(BeamError::ResolutionTooCoarse(step));
    }
    let (phi_idx, peak_idx, _) = pattern
        .gain_dbi
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(t, g)| (p, t, *g)))
        .fold((0, 0, f64::NEG_INFINITY), |best, cur| if cur.2 > best.2 { cur } else { best });
    let g = pattern.cut(phi_idx);
    let n = g.len();

    let (peak_theta, peak_gain) = if peak_idx > 0 && peak_idx + 1 < n {
        let (d, v) = parabolic(g[peak_idx - 1], g[peak_idx], g[peak_idx + 1]);
        let h = theta[peak_idx + 1] - theta[peak_idx];
        (theta[peak_idx] + d * h, v)
    } else {
        (theta[peak_idx], g[peak_idx])
    };

    // Main lobe: descend from the peak to the first minimum on each side.
    let mut left = peak_idx;
    while left > 0 && g[left - 1] <= g[left] {
        left -= 1;
    }
    let mut right = peak_idx;
    while right + 1 < n && g[right + 1] <= g[right] {
        right += 1;
    }

    let half = peak_gain - 10.0 * 2f64.log10();
    let lo = (left..peak_idx).rev().find(|&i| g[i] < half);
    let hi = (peak_idx + 1..=right).find(|&i| g[i] < half);
    let hpbw_deg = match (lo, hi) {
        (Some(lo), Some(hi)) => {
            Some(crossing(theta, g, hi - 1, hi, half) - crossing(theta, g, lo, lo + 1, half))
        }
        _ => None,
    };

    let mut sidelobe: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        if (left..=right).contains(&i) {
            continue;
        }
        let is_max = g[i] >= g[i - 1] && g[i] >= g[i + 1] && (g[i] > g[i - 1] || g[i] > g[i + 1]);
        if is_max && g[i] > MIN_GAIN_DBI && sidelobe.is_none_or(|(_, v)| g[i] > v) {
            sidelobe = Some((i, g[i]));
        }
    }
    let sidelobe = sidelobe.map(|(i, _)| {
        let (d, v) = parabolic(g[i - 1], g[i], g[i + 1]);
        (theta[i] + d * (theta[i + 1] - theta[i]), v - peak_gain)
    });

    Ok(ScanMetrics {
        peak_theta_deg: peak_theta,
        peak_phi_deg: pattern.phi_deg[phi_idx],
        peak_gain_dbi: peak_gain,
        hpbw_deg,
        first_sidelobe_db: sidelobe.map(|s| s.1),
        sidelobe_theta_deg: sidelobe.map(|s| s.0),
    })
}

/// Location of the total-pattern peak in a φ cut, searched on a 0.05° grid
/// within ±`span` of `center` and refined parabolically.
fn cut_peak(geometry: &ArrayGeometry, weights: &ElementWeights, phi_deg: f64, center: f64, span: f64) -> f64 {
    let step = 0.05;
    let n = (2.0 * span / step).round() as usize;
    let thetas: Vec<f64> = (0..=n)
        .map(|i| (center - span + i as f64 * step).clamp(-89.99, 89.99))
        .collect();
    let g: Vec<f64> = thetas.iter().map(|&t| gain_at(geometry, weights, t, phi_deg)).collect();
    let k = (0..g.len()).fold(0, |b, i| if g[i] > g[b] { i } else { b });
    if k == 0 || k + 1 == g.len() {
        return thetas[k];
    }
    thetas[k] + parabolic(g[k - 1], g[k], g[k + 1]).0 * step
}

/// Array-factor steering angle at which the total pattern (element pattern
/// included) peaks at `theta_deg` in the φ plane. The element pattern pulls
/// the beam toward broadside, so the returned angle lies further out.
pub fn steer_for_peak(geometry: &ArrayGeometry, theta_deg: f64, phi_deg: f64) -> Result<f64, BeamError> {
    geometry.validate()?;
    if !(theta_deg.abs() < 90.0) {
        return Err(BeamError::ThetaOutOfRange(theta_deg));
    }
    if theta_deg == 0.0 || matches!(geometry.element_pattern, ElementPattern::Isotropic) {
        return Ok(theta_deg);
    }
    let sign = theta_deg.signum();
    let target = theta_deg.abs();
    let peak_of = |s: f64| -> Result<f64, BeamError> {
        let w = steering_weights(geometry, sign * s, phi_deg)?;
        Ok(sign * cut_peak(geometry, &w, phi_deg, sign * target, 30.0))
    };
    let (mut lo, mut hi) = (target, 89.0);
    if peak_of(hi)? < target {
        return Err(BeamError::Unreachable(theta_deg));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if peak_of(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

/// Snaps each ideal weight to the table entry whose achieved phase (common
/// insertion phase removed) is nearest, and applies that entry's gain
/// relative to the table mean.
pub fn quantize_weights(ideal: &ElementWeights, table: &CalibrationTable) -> Result<ElementWeights, BeamError> {
    if table.is_empty() {
        return Err(BeamError::EmptyTable);
    }
    let offset = if table.len() > 1 { table.common_offset_deg() } else { 0.0 };
    let mean_db = 20.0 * table.mean_amplitude().log10();
    let mut weights = Vec::with_capacity(ideal.len());
    let mut residual = Vec::with_capacity(ideal.len());
    for w in &ideal.weights {
        let want = w.arg().to_degrees();
        let (err, e) = table
            .entries
            .iter()
            .map(|e| (wrap_deg_180(e.achieved_deg - offset - want), e))
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
            .expect("table is non-empty");
        let phase = want + err;
        let gain = db_to_amplitude(e.achieved_db - mean_db) * w.norm();
        weights.push(Complex64::from_polar(gain, phase.to_radians()));
        residual.push(err);
    }
    Ok(ElementWeights {
        weights,
        residual_phase_deg: residual,
    })
}

/// Like [`quantize_weights`], but first rotates all ideal phases by the
/// common angle that minimizes the summed squared residuals. A common phase
/// does not change the pattern, while snapping each element independently
/// can double the error of the inter-element phase step.
pub fn quantize_weights_aligned(ideal: &ElementWeights, table: &CalibrationTable) -> Result<ElementWeights, BeamError> {
    let mut best = quantize_weights(ideal, table)?;
    let cost = |w: &ElementWeights| w.residual_phase_deg.iter().map(|r| r * r).sum::<f64>();
    let mut best_cost = cost(&best);
    let offset = if table.len() > 1 { table.common_offset_deg() } else { 0.0 };
    for w in &ideal.weights {
        let want = w.arg().to_degrees();
        for e in &table.entries {
            let shift = Complex64::from_polar(1.0, (e.achieved_deg - offset - want).to_radians());
            let rotated = ElementWeights {
                weights: ideal.weights.iter().map(|x| x * shift).collect(),
                residual_phase_deg: ideal.residual_phase_deg.clone(),
            };
            let q = quantize_weights(&rotated, table)?;
            let c = cost(&q);
            if c < best_cost - 1e-12 {
                best_cost = c;
                best = ElementWeights {
                    weights: q.weights.iter().map(|x| x / shift).collect(),
                    residual_phase_deg: q.residual_phase_deg,
                };
            }
        }
    }
    Ok(best)
}

/// VGA gain trim used to equalize element amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgaCompensation {
    /// Largest correction in either direction, dB.
    pub range_db: f64,
    /// Insertion-phase change per dB of correction, degrees/dB.
    pub phase_deg_per_db: f64,
}

impl Default for VgaCompensation {
    fn default() -> Self {
        Self {
            range_db: 2.5,
            phase_deg_per_db: 1.6,
        }
    }
}

impl VgaCompensation {
    /// Corrects the gain errors (dB) already present in `weights`. Corrections
    /// are centered between the strongest and weakest element so the
    /// available range is used symmetrically, then clipped to the range;
    /// each carries its phase side effect.
    pub fn apply(&self, weights: &ElementWeights, gain_errors_db: &[f64]) -> Result<ElementWeights, BeamError> {
        if gain_errors_db.len() != weights.len() {
            return Err(BeamError::WeightCountMismatch {
                expected: weights.len(),
                got: gain_errors_db.len(),
            });
        }
        if gain_errors_db.is_empty() {
            return Ok(weights.clone());
        }
        let max = gain_errors_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = gain_errors_db.iter().copied().fold(f64::INFINITY, f64::min);
        let center = 0.5 * (max + min);
        let out = weights
            .weights
            .iter()
            .zip(gain_errors_db)
            .map(|(w, e)| {
                let c = (center - e).clamp(-self.range_db, self.range_db);
                let side = (self.phase_deg_per_db * c).to_radians();
                w * Complex64::from_polar(db_to_amplitude(c), side)
            })
            .collect();
        Ok(ElementWeights {
            weights: out,
            residual_phase_deg: weights.residual_phase_deg.clone(),
        })
    }
}

/// Applies per-element gain errors (dB) to a set of weights.
pub fn with_gain_errors(weights: &ElementWeights, gain_errors_db: &[f64]) -> ElementWeights {
    ElementWeights {
        weights: weights
            .weights
            .iter()
            .zip(gain_errors_db)
            .map(|(w, e)| w * db_to_amplitude(*e))
            .collect(),
        residual_phase_deg: weights.residual_phase_deg.clone(),
    }
}

/// `EIRP = P_R − G_R + L_S`.
pub fn eirp(received_power_dbm: f64, receiver_gain_db: f64, path_loss_db: f64) -> f64 {
    received_power_dbm - receiver_gain_db + path_loss_db
}

/// Free-space path loss `20·log₁₀(4πd·f/c)`, dB.
pub fn free_space_path_loss(distance_m: f64, frequency_hz: f64) -> f64 {
    20.0 * (4.0 * PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{CalibrationEntry, VmState};

    fn half_wave(n: usize, pattern: ElementPattern) -> ArrayGeometry {
        let lambda = SPEED_OF_LIGHT / 28e9;
        ArrayGeometry::line(n, lambda / 2.0, 28e9, pattern)
    }

    /// Direct double sum over elements, independent of the library path.
    fn brute_af_db(xs: &[f64], k: f64, phases: &[f64], theta_deg: f64) -> f64 {
        let s = theta_deg.to_radians().sin();
        let (mut re, mut im) = (0.0, 0.0);
        for (x, p) in xs.iter().zip(phases) {
            let arg = k * x * s + p.to_radians();
            re += arg.cos();
            im += arg.sin();
        }
        10.0 * ((re * re + im * im) / xs.len() as f64).log10()
    }

    #[test]
    fn steering_examples() {
        let g = half_wave(4, ElementPattern::Isotropic);
        assert!(steering_phases(&g, 0.0, 0.0).unwrap().iter().all(|p| *p == 0.0 || (*p - 360.0).abs() < 1e-9));
        let p = steering_phases(&g, 30.0, 0.0).unwrap();
        for w in p.windows(2) {
            assert!((wrap_deg_360(w[0] - w[1]) - 90.0).abs() < 1e-9);
        }
        let p = steering_phases(&g, 0.25f64.asin().to_degrees(), 0.0).unwrap();
        assert!((wrap_deg_360(p[0] - p[1]) - 45.0).abs() < 1e-9);
        assert_eq!(steering_phases(&g, 90.0, 0.0), Err(BeamError::ThetaOutOfRange(90.0)));
    }

    #[test]
    fn cosine_exponent_fit() {
        let e = ElementPattern::default();
        assert!((e.cosine_exponent() - 0.377114).abs() < 1e-6);
        assert!((lin_to_db(e.gain_linear(0.0)) - 4.4).abs() < 1e-12);
        assert!(ElementPattern::CosinePower { peak_gain_dbi: 2.0 }.validate().is_err());
    }

    #[test]
    fn single_element_equals_element_pattern() {
        let g = ArrayGeometry {
            elements: vec![[0.0, 0.0]],
            ..ArrayGeometry::default()
        };
        let grid = GridSpec::principal(0.1);
        let p = radiation_pattern(&g, &ElementWeights::uniform(1), &grid).unwrap();
        for (t, v) in p.theta_deg.iter().zip(p.cut(0)) {
            let want = g.element_pattern.gain_linear(t.to_radians());
            if want > 0.0 {
                assert!((v - lin_to_db(want)).abs() < 1e-9);
            }
        }
        let m = scan_metrics(&p).unwrap();
        let want = g.element_pattern.hpbw_deg().unwrap();
        assert!((m.hpbw_deg.unwrap() - want).abs() < 0.05, "{m:?} vs {want}");
    }

    #[test]
    fn broadside_gain_2x2() {
        let g = ArrayGeometry::default();
        let p = radiation_pattern(&g, &ElementWeights::uniform(4), &GridSpec::principal(0.1)).unwrap();
        let m = scan_metrics(&p).unwrap();
        assert!(m.peak_theta_deg.abs() < 1e-6);
        assert!((m.peak_gain_dbi - (4.4 + 10.0 * 4f64.log10())).abs() < 1e-6);
        assert!((m.peak_gain_dbi - 10.42).abs() < 0.01);
    }

    #[test]
    fn four_element_sidelobe_and_pointing() {
        let g = half_wave(4, ElementPattern::Isotropic);
        let p = radiation_pattern(&g, &ElementWeights::uniform(4), &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
        let m = scan_metrics(&p).unwrap();
        let xs: Vec<f64> = g.elements.iter().map(|e| e[0]).collect();
        let oracle = (0..=1800)
            .map(|i| -90.0 + 0.1 * i as f64)
            .filter(|t| t.abs() > 35.0)
            .map(|t| brute_af_db(&xs, g.wavenumber(), &[0.0; 4], t))
            .fold(f64::NEG_INFINITY, f64::max)
            - 10.0 * 4f64.log10();
        assert!((m.first_sidelobe_db.unwrap() - oracle).abs() < 0.01);
        assert!((m.first_sidelobe_db.unwrap() + 11.3).abs() < 0.3);

        let w = steering_weights(&g, 30.0, 0.0).unwrap();
        let p = radiation_pattern(&g, &w, &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
        let m = scan_metrics(&p).unwrap();
        assert!((m.peak_theta_deg - 30.0).abs() < 0.5);
        let phases = steering_phases(&g, 30.0, 0.0).unwrap();
        let oracle_peak = (0..=1800)
            .map(|i| -90.0 + 0.1 * i as f64)
            .map(|t| (t, brute_af_db(&xs, g.wavenumber(), &phases, t)))
            .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
            .0;
        assert!((m.peak_theta_deg - oracle_peak).abs() <= 0.1);
    }

    #[test]
    fn weight_count_checked() {
        let g = ArrayGeometry::default();
        assert_eq!(
            radiation_pattern(&g, &ElementWeights::uniform(3), &GridSpec::principal(1.0)),
            Err(BeamError::WeightCountMismatch { expected: 4, got: 3 })
        );
    }

    #[test]
    fn geometry_validation() {
        let mut g = ArrayGeometry::default();
        g.elements[1] = g.elements[0];
        assert_eq!(g.validate(), Err(BeamError::DuplicateElement(0, 1)));
        g.elements.clear();
        assert_eq!(g.validate(), Err(BeamError::NoElements));
    }

    #[test]
    fn coarse_grid_rejected() {
        let g = ArrayGeometry::default();
        let p = radiation_pattern(&g, &ElementWeights::uniform(4), &GridSpec::principal(1.0)).unwrap();
        assert_eq!(scan_metrics(&p), Err(BeamError::ResolutionTooCoarse(1.0)));
    }

    #[test]
    fn compensated_steering_hits_target() {
        let g = ArrayGeometry::default();
        for theta in [-30.0, -15.0, 10.0, 30.0] {
            for phi in [0.0, 90.0] {
                let s = steer_for_peak(&g, theta, phi).unwrap();
                assert!(s.abs() > theta.abs() - 1e-9);
                let w = steering_weights(&g, s, phi).unwrap();
                let p = radiation_pattern(&g, &w, &GridSpec::cuts(&[phi], -90.0, 90.0, 0.1)).unwrap();
                let m = scan_metrics(&p).unwrap();
                assert!((m.peak_theta_deg - theta).abs() < 0.1, "{theta} {phi}: {m:?}");
            }
        }
    }

    fn ideal_table() -> CalibrationTable {
        CalibrationTable::new(
            (0..36)
                .map(|k| CalibrationEntry {
                    commanded_deg: 10.0 * k as f64,
                    state: VmState::from_codes(0, 0),
                    vga_code: 8,
                    achieved_deg: 10.0 * k as f64,
                    achieved_db: 0.0,
                })
                .collect(),
        )
    }

    #[test]
    fn quantization_examples() {
        let t = ideal_table();
        let q = quantize_weights(&ElementWeights::from_phases_deg(&[40.0, 37.0]), &t).unwrap();
        assert!(q.residual_phase_deg[0].abs() < 1e-9);
        assert!((q.phases_deg()[1] - 40.0).abs() < 1e-9);
        assert!((q.residual_phase_deg[1] - 3.0).abs() < 1e-9);
        assert_eq!(
            quantize_weights(&ElementWeights::uniform(1), &CalibrationTable::default()),
            Err(BeamError::EmptyTable)
        );
    }

    #[test]
    fn quantization_ignores_common_offset() {
        let mut t = ideal_table();
        for e in &mut t.entries {
            e.achieved_deg = wrap_deg_360(e.achieved_deg - 37.0);
        }
        let q = quantize_weights(&ElementWeights::from_phases_deg(&[37.0, 123.0]), &t).unwrap();
        assert!((q.residual_phase_deg[0] - 3.0).abs() < 1e-9);
        assert!((q.residual_phase_deg[1] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn aligned_quantization_keeps_phase_step() {
        let t = ideal_table();
        // ±25°: independent snapping can land on 20° and −30°.
        let w = ElementWeights::from_phases_deg(&[25.0, -25.0]);
        let a = quantize_weights_aligned(&w, &t).unwrap();
        let p = a.phases_deg();
        assert!((wrap_deg_180(p[0] - p[1]) - 50.0).abs() < 1e-9);
        assert!(a.residual_phase_deg.iter().all(|r| r.abs() < 1e-9));
        let b = quantize_weights_aligned(&ElementWeights::from_phases_deg(&[0.0, 33.0]), &t).unwrap();
        let step = wrap_deg_180(b.phases_deg()[1] - b.phases_deg()[0]);
        assert!((step - 30.0).abs() < 1e-9);
    }

    #[test]
    fn grating_lobes() {
        let lambda = SPEED_OF_LIGHT / 28e9;
        let wide = ArrayGeometry::grid(2, 2, lambda, 28e9, ElementPattern::default());
        let w = steering_weights(&wide, 30.0, 0.0).unwrap();
        let p = radiation_pattern(&wide, &w, &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
        assert!(scan_metrics(&p).unwrap().has_grating_lobe());

        let g = ArrayGeometry::grid(2, 2, lambda / 2.0, 28e9, ElementPattern::default());
        for theta in (0..=60).step_by(5) {
            let w = steering_weights(&g, theta as f64, 0.0).unwrap();
            let p = radiation_pattern(&g, &w, &GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1)).unwrap();
            assert!(!scan_metrics(&p).unwrap().has_grating_lobe(), "{theta}");
        }
    }

    #[test]
    fn vga_restores_sidelobes() {
        // Attenuating an edge element tapers the line and lowers the
        // sidelobes, so the impairment goes on a central element.
        let g = half_wave(8, ElementPattern::Isotropic);
        let grid = GridSpec::cuts(&[0.0], -90.0, 90.0, 0.1);
        let base = ElementWeights::uniform(8);
        let sll = |w: &ElementWeights| {
            scan_metrics(&radiation_pattern(&g, w, &grid).unwrap())
                .unwrap()
                .first_sidelobe_db
                .unwrap()
        };
        let balanced = sll(&base);
        let mut errors = [0.0; 8];
        errors[3] = -3.0;
        let impaired = with_gain_errors(&base, &errors);
        assert!(sll(&impaired) > balanced + 1.0);
        let vga = VgaCompensation::default();
        let fixed = vga.apply(&impaired, &errors).unwrap();
        assert!((sll(&fixed) - balanced).abs() <= 0.5);
        let gains = fixed.gains_db();
        let spread = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - gains.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-9);
        for (w, e) in fixed.weights.iter().zip(&errors) {
            let c = 20.0 * w.norm().log10() - e;
            assert!(c.abs() <= vga.range_db + 1e-9);
            assert!(w.arg().to_degrees().abs() <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn eirp_and_path_loss() {
        assert!((free_space_path_loss(0.45, 28e9) - 54.5).abs() < 0.1);
        assert_eq!(eirp(-20.0, 0.0, 0.0), -20.0);
        assert!((eirp(-50.0, 10.0, 54.5) + 5.5).abs() < 1e-12);
    }

    #[test]
    fn csv_and_json_exports() {
        let g = ArrayGeometry::default();
        let p = radiation_pattern(&g, &ElementWeights::uniform(4), &GridSpec::principal(30.0)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta_deg,phi_deg,gain_dbi\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 7);
        let json: serde_json::Value = serde_json::from_str(&p.to_polar_json().unwrap()).unwrap();
        assert_eq!(json["cuts"].as_array().unwrap().len(), 2);
    }
}
