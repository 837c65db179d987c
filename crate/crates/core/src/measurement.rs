//! Measurement catalogue, Born-rule outcome distributions, classical Fisher
//! information and information regrets.

use nalgebra::{Matrix2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{max_abs, EBasis, Mat4, QfiReport, QuantumModel};
use crate::psf::{psf_derivative, psf_value, PsfSpec, SceneParams};
use crate::quadrature::QuadratureConfig;

/// Outcomes with probability at or below this are treated as zero-probability.
pub const PROB_EPS: f64 = 1e-12;
/// Allowed excess of classical over quantum information before it is a bug.
pub const FIM_EXCESS_TOL: f64 = 1e-8;
/// Largest SPADE misalignment from the centroid, in PSF widths.
pub const MAX_ALIGNMENT_OFFSET: f64 = 4.0;
pub const DEFAULT_PIXEL_WIDTH: f64 = 0.005;
pub const DEFAULT_HALF_RANGE: f64 = 8.0;
pub const DEFAULT_Q_MAX: usize = 20;

/// A positive-operator-valued measure on the image plane.
#[derive(Debug, Clone, PartialEq)]
pub enum Povm {
    /// Pixelated intensity measurement on [−half_range, half_range] plus two tail bins.
    DirectImaging { pixel_width: f64, half_range: f64 },
    /// Hermite-Gaussian mode sorting about `alignment`, modes 0..=q_max plus a bucket.
    Spade { alignment: f64, q_max: usize },
    /// Projection onto the orthonormal columns (given in the e-basis) plus the complement.
    Projective { basis: Mat4 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Direct,
    Spade,
    Joint,
}

impl MeasurementKind {
    pub fn name(&self) -> &'static str {
        match self {
            MeasurementKind::Direct => "direct",
            MeasurementKind::Spade => "spade",
            MeasurementKind::Joint => "joint",
        }
    }
}

impl Povm {
    /// Direct imaging at the default resolution for this PSF.
    pub fn direct_default(psf: &PsfSpec) -> Self {
        let w = psf.width();
        Povm::DirectImaging {
            pixel_width: DEFAULT_PIXEL_WIDTH * w,
            half_range: DEFAULT_HALF_RANGE * w,
        }
    }

    /// Matched SPADE aligned at the centroid.
    pub fn spade_at(centroid: f64) -> Self {
        Povm::Spade {
            alignment: centroid,
            q_max: DEFAULT_Q_MAX,
        }
    }

    pub fn kind(&self) -> MeasurementKind {
        match self {
            Povm::DirectImaging { .. } => MeasurementKind::Direct,
            Povm::Spade { .. } => MeasurementKind::Spade,
            Povm::Projective { .. } => MeasurementKind::Joint,
        }
    }

    pub fn validate(&self, psf: &PsfSpec, scene: SceneParams) -> Result<()> {
        let w = psf.width();
        match *self {
            Povm::DirectImaging { pixel_width, half_range } => {
                if !(pixel_width > 0.0) || !pixel_width.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "pixel width must be positive, got {pixel_width}"
                    )));
                }
                if !(half_range >= 4.0 * w) || !half_range.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "direct-imaging half range {half_range} is below 4 PSF widths"
                    )));
                }
                if 2.0 * half_range / pixel_width > 1e7 {
                    return Err(Error::InvalidInput("too many pixels".into()));
                }
            }
            Povm::Spade { alignment, q_max } => {
                if q_max < 2 {
                    return Err(Error::InvalidInput(format!("SPADE q_max must be >= 2, got {q_max}")));
                }
                if !alignment.is_finite() || (alignment - scene.theta1).abs() > MAX_ALIGNMENT_OFFSET * w {
                    return Err(Error::AlignmentOutOfRange {
                        alignment,
                        centroid: scene.theta1,
                    });
                }
            }
            Povm::Projective { basis } => {
                let err = max_abs(&(basis.transpose() * basis - Mat4::identity()));
                if err > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "projective basis is not orthonormal (error {err:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outcome probabilities and their derivatives in θ₁ and θ₂.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub probs: Vec<f64>,
    pub dp1: Vec<f64>,
    pub dp2: Vec<f64>,
}

impl OutcomeDistribution {
    fn new(mut probs: Vec<f64>, dp1: Vec<f64>, dp2: Vec<f64>) -> Self {
        for p in &mut probs {
            if *p < 0.0 && *p >= -1e-14 {
                *p = 0.0;
            }
        }
        Self { probs, dp1, dp2 }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Checks normalization and that the derivatives sum to zero.
    pub fn check(&self, tol: f64) -> Result<()> {
        if self.probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Domain("negative or non-finite outcome probability".into()));
        }
        let total: f64 = self.probs.iter().sum();
        let s1: f64 = self.dp1.iter().sum();
        let s2: f64 = self.dp2.iter().sum();
        if (total - 1.0).abs() > tol || s1.abs() > tol || s2.abs() > tol {
            return Err(Error::Domain(format!(
                "outcome distribution not normalized: sum p = {total}, sum dp = ({s1:e}, {s2:e})"
            )));
        }
        Ok(())
    }
}

/// Born-rule distribution of `povm` at the model's scene.
pub fn outcome_distribution(povm: &Povm, model: &QuantumModel) -> Result<OutcomeDistribution> {
    povm.validate(&model.psf, model.scene)?;
    match *povm {
        Povm::DirectImaging { pixel_width, half_range } => {
            Ok(direct_imaging(&model.psf, model.scene, pixel_width, half_range))
        }
        Povm::Spade { alignment, q_max } => spade(&model.psf, model.scene, alignment, q_max),
        Povm::Projective { basis } => Ok(projective(&basis, &model.rho, &model.drho1, &model.drho2)),
    }
}

/// Bin edges, with the two tail bins at the ends.
fn pixel_edges(pixel_width: f64, half_range: f64) -> Vec<f64> {
    let n = (2.0 * half_range / pixel_width).round().max(1.0) as usize;
    let step = 2.0 * half_range / n as f64;
    let mut edges = Vec::with_capacity(n + 3);
    edges.push(f64::NEG_INFINITY);
    edges.extend((0..=n).map(|i| -half_range + step * i as f64));
    edges.push(f64::INFINITY);
    edges
}

fn direct_imaging(psf: &PsfSpec, scene: SceneParams, pixel_width: f64, half_range: f64) -> OutcomeDistribution {
    let edges = pixel_edges(pixel_width, half_range);
    let (x1, x2) = (scene.x1(), scene.x2());
    let intensity = |x: f64| if x.is_finite() { psf_value(psf, x).powi(2) } else { 0.0 };
    let n = edges.len() - 1;
    let (mut probs, mut dp1, mut dp2) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m1 = psf.intensity_mass(a - x1, b - x1);
        let m2 = psf.intensity_mass(a - x2, b - x2);
        // d/dX ∫ₐᵇ ψ(x − X)² dx = ψ(a − X)² − ψ(b − X)²
        let g1 = intensity(a - x1) - intensity(b - x1);
        let g2 = intensity(a - x2) - intensity(b - x2);
        probs.push(0.5 * (m1 + m2));
        dp1.push(0.5 * (g1 + g2));
        dp2.push(0.25 * (g2 - g1));
    }
    OutcomeDistribution::new(probs, dp1, dp2)
}

/// Poisson weights e^{−Q} Qᵠ/q! for q = 0..=n.
fn poisson_weights(q_param: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    let mut term = (-q_param).exp();
    w.push(term);
    for q in 1..=n {
        term *= q_param / q as f64;
        w.push(term);
    }
    w
}

/// Squared mode amplitudes |⟨φ_q|ψ_X⟩|² for q = 0..=q_max, the bucket, and their X-derivatives.
fn spade_source_gaussian(sigma: f64, offset: f64, q_max: usize) -> (Vec<f64>, Vec<f64>) {
    let q_param = offset * offset / (4.0 * sigma * sigma);
    let dq_dx = offset / (2.0 * sigma * sigma);
    // extend far enough that the tail beyond is negligible
    let extra = 60 + (4.0 * q_param) as usize;
    let w = poisson_weights(q_param, q_max + extra);
    let mut probs: Vec<f64> = w[..=q_max].to_vec();
    probs.push(w[q_max + 1..].iter().sum());
    let mut d: Vec<f64> = (0..=q_max)
        .map(|q| {
            let prev = if q == 0 { 0.0 } else { w[q - 1] };
            (prev - w[q]) * dq_dx
        })
        .collect();
    d.push(w[q_max] * dq_dx);
    (probs, d)
}

/// Normalized Hermite functions h_0..=h_n at y.
fn hermite_functions(y: f64, n: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(n + 1);
    h.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * y * y).exp());
    if n >= 1 {
        h.push(std::f64::consts::SQRT_2 * y * h[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * y * h[k] - (kf / (kf + 1.0)).sqrt() * h[k - 1];
        h.push(next);
    }
    h
}

/// Mode amplitudes ⟨φ_q|ψ_X⟩ and their X-derivatives by quadrature, for any PSF.
///
/// Modes are Hermite-Gaussians matched to the PSF width and centred at `alignment`.
pub fn spade_amplitudes_quadrature(
    psf: &PsfSpec,
    alignment: f64,
    position: f64,
    q_max: usize,
    cfg: &QuadratureConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let w = psf.width();
    let scale = std::f64::consts::SQRT_2 * w;
    let norm = scale.powf(-0.5);
    let half = cfg.half_range * w;
    let (lo, hi) = (position.min(alignment) - half, position.max(alignment) + half);
    let mut amp = vec![0.0; q_max + 1];
    let mut damp = vec![0.0; q_max + 1];
    for (x, wt) in cfg.nodes(lo, hi) {
        let h = hermite_functions((x - alignment) / scale, q_max);
        let v = psf_value(psf, x - position);
        let dv = -psf_derivative(psf, x - position);
        for q in 0..=q_max {
            amp[q] += wt * norm * h[q] * v;
            damp[q] += wt * norm * h[q] * dv;
        }
    }
    if amp.iter().chain(&damp).any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("non-finite SPADE overlap".into()));
    }
    Ok((amp, damp))
}

fn spade(psf: &PsfSpec, scene: SceneParams, alignment: f64, q_max: usize) -> Result<OutcomeDistribution> {
    let per_source = |x: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        match psf {
            PsfSpec::Gaussian { sigma } => Ok(spade_source_gaussian(*sigma, x - alignment, q_max)),
            PsfSpec::Tabulated(_) => {
                let (a, da) =
                    spade_amplitudes_quadrature(psf, alignment, x, q_max, &QuadratureConfig::default())?;
                let mut p: Vec<f64> = a.iter().map(|v| v * v).collect();
                let mut d: Vec<f64> = a.iter().zip(&da).map(|(v, dv)| 2.0 * v * dv).collect();
                let captured: f64 = p.iter().sum();
                if captured > 1.0 + 1e-6 {
                    return Err(Error::Quadrature(format!(
                        "SPADE modes capture {captured} of a unit-norm PSF"
                    )));
                }
                if captured > 1.0 {
                    // interpolation error can push the captured mass just past unity
                    p.iter_mut().chain(d.iter_mut()).for_each(|v| *v /= captured);
                }
                let captured: f64 = p.iter().sum();
                let dsum: f64 = d.iter().sum();
                p.push((1.0 - captured).max(0.0));
                d.push(-dsum);
                Ok((p, d))
            }
        }
    };
    let (p1, g1) = per_source(scene.x1())?;
    let (p2, g2) = per_source(scene.x2())?;
    let probs = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
    let dp1 = g1.iter().zip(&g2).map(|(a, b)| 0.5 * (a + b)).collect();
    let dp2 = g1.iter().zip(&g2).map(|(a, b)| 0.25 * (b - a)).collect();
    Ok(OutcomeDistribution::new(probs, dp1, dp2))
}

fn projective(basis: &Mat4, rho: &Mat4, drho1: &Mat4, drho2: &Mat4) -> OutcomeDistribution {
    let quad = |m: &Mat4, q: &Vector4<f64>| q.dot(&(m * q));
    let mut probs = Vec::with_capacity(5);
    let mut dp1 = Vec::with_capacity(5);
    let mut dp2 = Vec::with_capacity(5);
    for j in 0..4 {
        let q = basis.column(j).into_owned();
        probs.push(quad(rho, &q));
        dp1.push(quad(drho1, &q));
        dp2.push(quad(drho2, &q));
    }
    // complement of span{e₁..e₄}: the state never leaves it
    probs.push(0.0);
    dp1.push(0.0);
    dp2.push(0.0);
    OutcomeDistribution::new(probs, dp1, dp2)
}

/// Limit terms Re⟨q|Lⱼ ρ Lₖ|q⟩ for each projective outcome (complement last, zero).
pub fn projective_limit_terms(basis: &Mat4, rho: &Mat4, l1: &Mat4, l2: &Mat4) -> Vec<Matrix2<f64>> {
    let ls = [l1, l2];
    let mut out: Vec<Matrix2<f64>> = (0..4)
        .map(|j| {
            let q = basis.column(j).into_owned();
            Matrix2::from_fn(|a, b| {
                let left = ls[a] * q;
                let right = ls[b] * q;
                0.5 * (left.dot(&(rho * right)) + right.dot(&(rho * left)))
            })
        })
        .collect();
    out.push(Matrix2::zeros());
    out
}

/// Fjk = Σₓ ∂ⱼp ∂ₖp / p over outcomes with p > 1e−12. Zero-probability outcomes
/// contribute the matching entry of `zero_prob_terms` if supplied, else nothing.
pub fn classical_fim(dist: &OutcomeDistribution, zero_prob_terms: Option<&[Matrix2<f64>]>) -> Matrix2<f64> {
    let mut f = Matrix2::zeros();
    for i in 0..dist.probs.len() {
        let p = dist.probs[i];
        if p > PROB_EPS {
            let d = [dist.dp1[i], dist.dp2[i]];
            for a in 0..2 {
                for b in 0..2 {
                    f[(a, b)] += d[a] * d[b] / p;
                }
            }
        } else if let Some(t) = zero_prob_terms.and_then(|t| t.get(i)) {
            f += t;
        }
    }
    f
}

/// Normalized information regrets and the regret trade-off slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretReport {
    pub fim: Matrix2<f64>,
    pub qfi: Matrix2<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub c: f64,
    /// Δ₁² + Δ₂² + 2√(1−c²)Δ₁Δ₂ − c².
    pub irtr_slack: f64,
    /// Smallest eigenvalue of 𝓕 − F.
    pub psd_gap: f64,
}

pub fn regret_report(fim: &Matrix2<f64>, qfi: &QfiReport) -> Result<RegretReport> {
    let q = qfi.qfi;
    let mut deltas = [0.0; 2];
    for j in 0..2 {
        if !(q[(j, j)] > 0.0) {
            return Err(Error::Domain(format!("QFI entry {j} is not positive")));
        }
        let gap = q[(j, j)] - fim[(j, j)];
        if gap < -FIM_EXCESS_TOL {
            return Err(Error::FimExceedsQfi { index: j + 1, gap });
        }
        deltas[j] = (gap.max(0.0) / q[(j, j)]).sqrt().min(1.0);
    }
    let [d1, d2] = deltas;
    let c = qfi.c;
    let irtr_slack = d1 * d1 + d2 * d2 + 2.0 * (1.0 - c * c).max(0.0).sqrt() * d1 * d2 - c * c;
    let diff = q - fim;
    let diff = 0.5 * (diff + diff.transpose());
    let psd_gap = diff.symmetric_eigenvalues().min();
    Ok(RegretReport {
        fim: *fim,
        qfi: q,
        delta1: d1,
        delta2: d2,
        c,
        irtr_slack,
        psd_gap,
    })
}

/// Outcome probabilities as a function of trial parameters, with the measurement
/// itself frozen at the scene it was built for.
#[derive(Debug, Clone)]
pub struct FixedPovmModel {
    psf: PsfSpec,
    povm: Povm,
    /// e-basis of the build scene, used by projective measurements.
    basis: Option<EBasis>,
}

impl FixedPovmModel {
    pub fn new(povm: &Povm, psf: &PsfSpec, truth: SceneParams) -> Result<Self> {
        povm.validate(psf, truth)?;
        let basis = match povm {
            Povm::Projective { .. } => Some(EBasis::new(psf, truth)?),
            _ => None,
        };
        Ok(Self {
            psf: psf.clone(),
            povm: povm.clone(),
            basis,
        })
    }

    pub fn outcome_count(&self) -> usize {
        match self.povm {
            Povm::DirectImaging { pixel_width, half_range } => pixel_edges(pixel_width, half_range).len() - 1,
            Povm::Spade { q_max, .. } => q_max + 2,
            Povm::Projective { .. } => 5,
        }
    }

    /// Probabilities of every outcome when the sources sit at (θ₁ ∓ θ₂/2).
    pub fn probs(&self, theta1: f64, theta2: f64) -> Result<Vec<f64>> {
        let scene = SceneParams::new(theta1, theta2)?;
        match (&self.povm, &self.basis) {
            (Povm::DirectImaging { pixel_width, half_range }, _) => {
                Ok(direct_imaging(&self.psf, scene, *pixel_width, *half_range).probs)
            }
            (Povm::Spade { alignment, q_max }, _) => Ok(spade(&self.psf, scene, *alignment, *q_max)?.probs),
            (Povm::Projective { basis }, Some(e)) => {
                let a1 = basis.transpose() * e.project_source(scene.x1());
                let a2 = basis.transpose() * e.project_source(scene.x2());
                let mut p: Vec<f64> = (0..4).map(|j| 0.5 * (a1[j] * a1[j] + a2[j] * a2[j])).collect();
                let inside: f64 = p.iter().sum();
                p.push((1.0 - inside).max(0.0));
                Ok(p)
            }
            (Povm::Projective { .. }, None) => unreachable!("projective model always carries its basis"),
        }
    }
}
