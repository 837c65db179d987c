//! Point-spread functions, scene geometry and the overlap integrals
//! (δ, κ, γ, β, η₃, η₄) that parameterize the two-source model.
//!
//! Gaussian PSFs use closed forms; tabulated PSFs (and the cross-check path
//! for Gaussians) go through [`compute_overlaps_quadrature`].

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureConfig};

/// Radicands of η₃², η₄² below this are treated as inconsistent PSF data.
pub const RADICAND_TOL: f64 = 1e-12;
/// The e-basis is singular once 1 − δ drops below this.
pub const SINGULAR_DELTA_TOL: f64 = 1e-12;
/// Tabulated PSFs must be L²-normalized to this accuracy (trapezoid sum).
pub const TABLE_NORM_TOL: f64 = 1e-6;

/// Real, even point-spread function ψ(x).
#[derive(Debug, Clone, PartialEq)]
pub enum PsfSpec {
    Gaussian { sigma: f64 },
    Tabulated(TabulatedPsf),
}

impl PsfSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Gaussian sigma must be positive, got {sigma}"
            )));
        }
        Ok(PsfSpec::Gaussian { sigma })
    }

    /// Characteristic width: σ for a Gaussian, RMS width of |ψ|² otherwise.
    pub fn width(&self) -> f64 {
        match self {
            PsfSpec::Gaussian { sigma } => *sigma,
            PsfSpec::Tabulated(t) => t.width,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, PsfSpec::Gaussian { .. })
    }

    /// ∫ψ(x)ψ(x − s) dx.
    pub fn autocorrelation(&self, s: f64) -> f64 {
        match self {
            PsfSpec::Gaussian { sigma } => (-s * s / (8.0 * sigma * sigma)).exp(),
            PsfSpec::Tabulated(_) => self.correlate(s, |p, x| psf_value(p, x), |p, x| psf_value(p, x)),
        }
    }

    /// ∫ψ'(x)ψ(x − s) dx.
    pub fn derivative_correlation(&self, s: f64) -> f64 {
        match self {
            PsfSpec::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                -(s / (4.0 * s2)) * (-s * s / (8.0 * s2)).exp()
            }
            PsfSpec::Tabulated(_) => {
                self.correlate(s, |p, x| psf_derivative(p, x), |p, x| psf_value(p, x))
            }
        }
    }

    /// ∫ψ'(x)ψ'(x − s) dx.
    pub fn derivative_autocorrelation(&self, s: f64) -> f64 {
        match self {
            PsfSpec::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (4.0 * s2 - s * s) / (16.0 * s2 * s2) * (-s * s / (8.0 * s2)).exp()
            }
            PsfSpec::Tabulated(_) => self.correlate(
                s,
                |p, x| psf_derivative(p, x),
                |p, x| psf_derivative(p, x),
            ),
        }
    }

    fn correlate(
        &self,
        s: f64,
        f: impl Fn(&PsfSpec, f64) -> f64,
        g: impl Fn(&PsfSpec, f64) -> f64,
    ) -> f64 {
        let cfg = QuadratureConfig::default();
        let half = cfg.half_range * self.width();
        integrate(&cfg, 0.5 * s - half, 0.5 * s + half, |x| {
            f(self, x) * g(self, x - s)
        })
    }

    /// ∫ₐᵇ ψ(x)² dx; the bounds may be infinite.
    pub fn intensity_mass(&self, a: f64, b: f64) -> f64 {
        match self {
            PsfSpec::Gaussian { sigma } => gaussian_mass(a / sigma, b / sigma),
            PsfSpec::Tabulated(t) => t.cdf(b) - t.cdf(a),
        }
    }
}

/// Standard normal mass on [a, b], evaluated on the side of the tails that avoids cancellation.
fn gaussian_mass(a: f64, b: f64) -> f64 {
    let upper = |z: f64| 0.5 * libm::erfc(z / SQRT_2); // P(Z > z)
    if a >= 0.0 {
        upper(a) - upper(b)
    } else if b <= 0.0 {
        upper(-b) - upper(-a)
    } else {
        1.0 - upper(-a) - upper(b)
    }
}

/// PSF sampled on a uniform grid, linearly interpolated, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPsf {
    x0: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    cumulative: Vec<f64>,
    width: f64,
}

impl TabulatedPsf {
    /// Builds a table from `(x, ψ(x))` samples.
    ///
    /// Samples must be on a uniform, increasing grid, even about the origin
    /// and L²-normalized (trapezoid) to within [`TABLE_NORM_TOL`]. The table
    /// is then rescaled so that its piecewise-linear interpolant has unit norm.
    pub fn new(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::InvalidInput("tabulated PSF needs at least 3 samples".into()));
        }
        if samples.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidInput("tabulated PSF has non-finite samples".into()));
        }
        let x0 = samples[0].0;
        let n = samples.len();
        let step = (samples[n - 1].0 - x0) / (n - 1) as f64;
        if !(step > 0.0) {
            return Err(Error::InvalidInput("tabulated PSF grid must be increasing".into()));
        }
        for (i, (x, _)) in samples.iter().enumerate() {
            if (x - (x0 + step * i as f64)).abs() > 1e-9 * step.max(x.abs()) {
                return Err(Error::InvalidInput(format!(
                    "tabulated PSF grid is not uniform at sample {i} (x = {x})"
                )));
            }
        }
        let values: Vec<f64> = samples.iter().map(|s| s.1).collect();

        let trapezoid: f64 = values
            .windows(2)
            .map(|w| 0.5 * step * (w[0] * w[0] + w[1] * w[1]))
            .sum();
        if (trapezoid - 1.0).abs() > TABLE_NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "tabulated PSF is not L2-normalized: norm^2 = {trapezoid}"
            )));
        }

        let mut table = Self {
            x0,
            step,
            values,
            slopes: Vec::new(),
            cumulative: Vec::new(),
            width: 0.0,
        };
        let peak = table.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, &(x, v)) in samples.iter().enumerate() {
            let mirrored = table.interpolate(-x);
            if (v - mirrored).abs() > 1e-6 * peak {
                return Err(Error::Domain(format!(
                    "tabulated PSF must be even about x = 0 (mismatch at sample {i})"
                )));
            }
        }

        table.rebuild_cumulative();
        let total = *table.cumulative.last().unwrap();
        let scale = total.sqrt().recip();
        for v in &mut table.values {
            *v *= scale;
        }
        table.rebuild_cumulative();
        table.slopes = central_differences(&table.values, step);

        let second_moment: f64 = table
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = x0 + step * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * step * x * x * v * v
            })
            .sum();
        table.width = second_moment.sqrt();
        Ok(table)
    }

    /// Parses two-column text `x  ψ(x)`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.ok_or_else(|| {
                    Error::InvalidInput(format!("line {}: expected two columns", lineno + 1))
                })?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 1)))
            };
            let x = parse(cols.next())?;
            let v = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            }
            samples.push((x, v));
        }
        Self::new(&samples)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let t = (x - self.x0) / self.step;
        let last = (self.values.len() - 1) as f64;
        if !(0.0..=last).contains(&t) {
            return None;
        }
        let i = (t.floor() as usize).min(self.values.len() - 2);
        Some((i, t - i as f64))
    }

    fn interpolate(&self, x: f64) -> f64 {
        self.locate(x)
            .map(|(i, f)| self.values[i] * (1.0 - f) + self.values[i + 1] * f)
            .unwrap_or(0.0)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.locate(x)
            .map(|(i, f)| self.slopes[i] * (1.0 - f) + self.slopes[i + 1] * f)
            .unwrap_or(0.0)
    }

    fn rebuild_cumulative(&mut self) {
        let mut acc = 0.0;
        self.cumulative = std::iter::once(0.0)
            .chain(self.values.windows(2).map(|w| {
                acc += self.step * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0;
                acc
            }))
            .collect();
    }

    /// Exact ∫_{-∞}^{u} ψ² of the piecewise-linear interpolant.
    fn cdf(&self, u: f64) -> f64 {
        if u == f64::INFINITY {
            return *self.cumulative.last().unwrap();
        }
        match self.locate(u) {
            Some((i, f)) => {
                let (a, b) = (self.values[i], self.values[i + 1]);
                let d = b - a;
                // ∫₀^f (a + d t)² dt · step
                let partial = self.step * (a * a * f + a * d * f * f + d * d * f * f * f / 3.0);
                self.cumulative[i] + partial
            }
            None if u < self.x0 => 0.0,
            None => *self.cumulative.last().unwrap(),
        }
    }
}

fn central_differences(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| match i {
            0 => (values[1] - values[0]) / step,
            i if i == n - 1 => (values[n - 1] - values[n - 2]) / step,
            i => (values[i + 1] - values[i - 1]) / (2.0 * step),
        })
        .collect()
}

/// Source geometry: centroid θ₁ and separation θ₂ > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl SceneParams {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !theta1.is_finite() || !(theta2 > 0.0) || !theta2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "scene needs finite theta1 and theta2 > 0, got ({theta1}, {theta2})"
            )));
        }
        Ok(Self { theta1, theta2 })
    }

    /// Position of the first source, θ₁ − θ₂/2.
    pub fn x1(&self) -> f64 {
        self.theta1 - 0.5 * self.theta2
    }

    /// Position of the second source, θ₁ + θ₂/2.
    pub fn x2(&self) -> f64 {
        self.theta1 + 0.5 * self.theta2
    }
}

/// Overlap coefficients at one separation.
///
/// `one_minus_delta` is carried separately so that 1 − δ keeps full relative
/// precision when the sources nearly coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSet {
    pub delta: f64,
    pub one_minus_delta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eta3: f64,
    pub eta4: f64,
}

impl OverlapSet {
    /// Assembles the set from the four primary integrals, deriving η₃ and η₄
    /// from the normalization of e₃ and e₄.
    pub fn from_integrals(delta: f64, one_minus_delta: f64, kappa: f64, gamma: f64, beta: f64) -> Result<Self> {
        check_delta(delta, one_minus_delta)?;
        let eta3_sq = kappa + beta - gamma * gamma / one_minus_delta;
        let eta4_sq = kappa - beta - gamma * gamma / (1.0 + delta);
        Ok(Self {
            delta,
            one_minus_delta,
            kappa,
            gamma,
            beta,
            eta3: checked_sqrt(eta3_sq, "eta3")?,
            eta4: checked_sqrt(eta4_sq, "eta4")?,
        })
    }

    pub fn one_plus_delta(&self) -> f64 {
        1.0 + self.delta
    }

    /// 1 − δ², computed as (1 − δ)(1 + δ).
    pub fn one_minus_delta_sq(&self) -> f64 {
        self.one_minus_delta * (1.0 + self.delta)
    }
}

fn check_delta(delta: f64, one_minus_delta: f64) -> Result<()> {
    if !delta.is_finite() || delta <= 0.0 || delta > 1.0 {
        return Err(Error::Domain(format!("delta = {delta} outside (0, 1]")));
    }
    if one_minus_delta <= SINGULAR_DELTA_TOL {
        return Err(Error::SingularBasis { delta });
    }
    Ok(())
}

fn checked_sqrt(radicand: f64, name: &str) -> Result<f64> {
    if radicand < -RADICAND_TOL || radicand.is_nan() {
        return Err(Error::Domain(format!(
            "{name}^2 = {radicand:e} is negative; PSF data are inconsistent"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// ψ(x).
pub fn psf_value(psf: &PsfSpec, x: f64) -> f64 {
    match psf {
        PsfSpec::Gaussian { sigma } => {
            (2.0 * PI * sigma * sigma).powf(-0.25) * (-x * x / (4.0 * sigma * sigma)).exp()
        }
        PsfSpec::Tabulated(t) => t.interpolate(x),
    }
}

/// dψ/dx.
pub fn psf_derivative(psf: &PsfSpec, x: f64) -> f64 {
    match psf {
        PsfSpec::Gaussian { sigma } => -x / (2.0 * sigma * sigma) * psf_value(psf, x),
        PsfSpec::Tabulated(t) => t.derivative(x),
    }
}

/// Overlap coefficients at separation `theta2`.
pub fn compute_overlaps(psf: &PsfSpec, theta2: f64) -> Result<OverlapSet> {
    if !(theta2 > 0.0) || !theta2.is_finite() {
        return Err(Error::InvalidInput(format!("theta2 must be positive, got {theta2}")));
    }
    match psf {
        PsfSpec::Gaussian { sigma } => gaussian_overlaps(*sigma, theta2),
        PsfSpec::Tabulated(_) => compute_overlaps_quadrature(psf, theta2, &QuadratureConfig::default()),
    }
}

fn gaussian_overlaps(sigma: f64, theta2: f64) -> Result<OverlapSet> {
    let s2 = sigma * sigma;
    let u = theta2 * theta2 / (8.0 * s2);
    let delta = (-u).exp();
    let one_minus_delta = -(-u).exp_m1();
    check_delta(delta, one_minus_delta)?;

    let kappa = 1.0 / (4.0 * s2);
    let gamma = -(theta2 / (4.0 * s2)) * delta;
    let beta = (4.0 * s2 - theta2 * theta2) / (16.0 * s2 * s2) * delta;

    // η₃² = κ + β − γ²/(1−δ) and η₄² = κ − β − γ²/(1+δ) rewritten without
    // the cancellation that the direct forms suffer at small separations.
    let half_one_minus_e2u = -0.5 * (-2.0 * u).exp_m1();
    let delta_sinh_minus_u = if u < 0.5 {
        delta * sinh_minus_identity_series(u)
    } else {
        half_one_minus_e2u - u * delta
    };
    let delta_sinh_plus_u = half_one_minus_e2u + u * delta;
    let eta3_sq = kappa * 2.0 * delta_sinh_minus_u / one_minus_delta;
    let eta4_sq = kappa * 2.0 * delta_sinh_plus_u / (1.0 + delta);

    Ok(OverlapSet {
        delta,
        one_minus_delta,
        kappa,
        gamma,
        beta,
        eta3: checked_sqrt(eta3_sq, "eta3")?,
        eta4: checked_sqrt(eta4_sq, "eta4")?,
    })
}

/// sinh(u) − u for small u.
fn sinh_minus_identity_series(u: f64) -> f64 {
    let u2 = u * u;
    let mut term = u * u2 / 6.0;
    let mut sum = term;
    let mut k = 3.0;
    while term.abs() > 1e-18 * sum.abs() {
        term *= u2 / ((k + 1.0) * (k + 2.0));
        sum += term;
        k += 2.0;
    }
    sum
}

/// Overlap coefficients by direct numerical integration of the defining
/// integrals, independent of any closed form.
pub fn compute_overlaps_quadrature(
    psf: &PsfSpec,
    theta2: f64,
    cfg: &QuadratureConfig,
) -> Result<OverlapSet> {
    cfg.validate()?;
    if !(theta2 > 0.0) || !theta2.is_finite() {
        return Err(Error::InvalidInput(format!("theta2 must be positive, got {theta2}")));
    }
    let half = cfg.half_range * psf.width();
    let (lo, hi) = (0.5 * theta2 - half, 0.5 * theta2 + half);
    let nodes = cfg.nodes(lo, hi);

    let (mut delta, mut gamma, mut beta) = (0.0, 0.0, 0.0);
    for &(x, w) in &nodes {
        let (a, da) = (psf_value(psf, x), psf_derivative(psf, x));
        let (b, db) = (psf_value(psf, x - theta2), psf_derivative(psf, x - theta2));
        delta += w * a * b;
        gamma += w * da * b;
        beta += w * da * db;
    }
    let kappa = integrate(cfg, -half, half, |x| psf_derivative(psf, x).powi(2));
    if !(kappa > 0.0) {
        return Err(Error::Quadrature(format!("kappa = {kappa} must be positive")));
    }
    OverlapSet::from_integrals(delta, 1.0 - delta, kappa, gamma, beta)
}
