//! Four-dimensional representation of the one-photon state in the e-basis:
//! density matrix, canonical SLDs, their derivatives, the QFI matrix and the
//! incompatibility coefficient.

use std::f64::consts::SQRT_2;

use nalgebra::{Matrix2, Matrix4, Vector4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::psf::{compute_overlaps, psf_derivative, psf_value, OverlapSet, PsfSpec, SceneParams};

pub type Mat4 = Matrix4<f64>;

pub fn max_abs<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric within `rel_tol` of the largest entry.
pub fn is_symmetric(m: &Mat4, rel_tol: f64) -> bool {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    max_abs(&(m - m.transpose())) <= rel_tol * scale
}

/// Symmetric Jordan product (Aρ + ρA)/2.
pub fn jordan(a: &Mat4, rho: &Mat4) -> Mat4 {
    0.5 * (a * rho + rho * a)
}

pub fn commutator(a: &Mat4, b: &Mat4) -> Mat4 {
    a * b - b * a
}

/// ρ = (1−δ)/2 |e₁⟩⟨e₁| + (1+δ)/2 |e₂⟩⟨e₂|.
pub fn density_matrix(o: &OverlapSet) -> Mat4 {
    Mat4::from_diagonal(&Vector4::new(
        0.5 * o.one_minus_delta,
        0.5 * o.one_plus_delta(),
        0.0,
        0.0,
    ))
}

/// Canonical SLDs for the centroid and the separation (zero kernel blocks).
pub fn canonical_slds(o: &OverlapSet) -> (Mat4, Mat4) {
    let omd = o.one_minus_delta;
    let opd = o.one_plus_delta();
    let a = 2.0 * o.gamma * o.delta / o.one_minus_delta_sq().sqrt();
    let b = 2.0 * o.eta4 / omd.sqrt();
    let c = 2.0 * o.eta3 / opd.sqrt();
    #[rustfmt::skip]
    let l1 = Mat4::new(
        0.0, a,   0.0, b,
        a,   0.0, c,   0.0,
        0.0, c,   0.0, 0.0,
        b,   0.0, 0.0, 0.0,
    );
    let d = -o.gamma / omd;
    let e = o.gamma / opd;
    let f = -o.eta3 / omd.sqrt();
    let g = -o.eta4 / opd.sqrt();
    #[rustfmt::skip]
    let l2 = Mat4::new(
        d,   0.0, f,   0.0,
        0.0, e,   0.0, g,
        f,   0.0, 0.0, 0.0,
        0.0, g,   0.0, 0.0,
    );
    (l1, l2)
}

/// The state, its canonical SLDs and ρ-derivatives at one scene.
#[derive(Debug, Clone)]
pub struct QuantumModel {
    pub psf: PsfSpec,
    pub scene: SceneParams,
    pub overlaps: OverlapSet,
    pub rho: Mat4,
    pub l1: Mat4,
    pub l2: Mat4,
    /// ∂ρ/∂θⱼ from the source wavefunctions, independent of the SLDs.
    pub drho1: Mat4,
    pub drho2: Mat4,
}

impl QuantumModel {
    /// Largest SLD-equation residual ‖∂ⱼρ − ½(Lⱼρ + ρLⱼ)‖_max over j for the
    /// given pair of SLDs.
    pub fn sld_residual(&self, l1: &Mat4, l2: &Mat4) -> f64 {
        let r1 = max_abs(&(self.drho1 - jordan(l1, &self.rho)));
        let r2 = max_abs(&(self.drho2 - jordan(l2, &self.rho)));
        r1.max(r2)
    }

    pub fn basis(&self) -> EBasis {
        EBasis {
            psf: self.psf.clone(),
            scene: self.scene,
            overlaps: self.overlaps,
        }
    }
}

pub fn build_model(psf: &PsfSpec, scene: SceneParams) -> Result<QuantumModel> {
    let overlaps = compute_overlaps(psf, scene.theta2)?;
    let rho = density_matrix(&overlaps);
    let (l1, l2) = canonical_slds(&overlaps);
    let (drho1, drho2) = EBasis {
        psf: psf.clone(),
        scene,
        overlaps,
    }
    .state_derivatives();
    Ok(QuantumModel {
        psf: psf.clone(),
        scene,
        overlaps,
        drho1,
        drho2,
        rho,
        l1,
        l2,
    })
}

/// QFI matrix and incompatibility coefficient.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QfiReport {
    pub qfi: Matrix2<f64>,
    /// From the trace norm of √ρ[L₁,L₂]√ρ.
    pub c: f64,
    /// From c² = β²/(κ(κ−γ²)).
    pub c_closed_form: f64,
    pub c_discrepancy: f64,
    /// Trace-norm mass outside the support block of ρ (should vanish).
    pub kernel_contribution: f64,
}

/// 𝓕ⱼₖ = Re tr(ρ Lⱼ Lₖ).
pub fn qfi_from(rho: &Mat4, l1: &Mat4, l2: &Mat4) -> Matrix2<f64> {
    let f11 = (rho * l1 * l1).trace();
    let f22 = (rho * l2 * l2).trace();
    let f12 = 0.5 * ((rho * l1 * l2).trace() + (rho * l2 * l1).trace());
    Matrix2::new(f11, f12, f12, f22)
}

/// Square root of a symmetric PSD matrix.
pub fn sqrt_psd(rho: &Mat4) -> Mat4 {
    let off = max_abs(&(rho - Mat4::from_diagonal(&rho.diagonal())));
    if off == 0.0 {
        return Mat4::from_diagonal(&rho.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    let eig = rho.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Mat4::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Sum of singular values.
pub fn trace_norm(m: &Mat4) -> f64 {
    m.singular_values().iter().sum()
}

/// Incompatibility coefficient c = tr|√ρ[L₁,L₂]√ρ| / (2√(𝓕₁₁𝓕₂₂)).
pub fn incompatibility(rho: &Mat4, l1: &Mat4, l2: &Mat4, qfi: &Matrix2<f64>) -> (f64, f64) {
    let s = sqrt_psd(rho);
    let x = s * commutator(l1, l2) * s;
    let full = trace_norm(&x);
    let support: Matrix2<f64> = x.fixed_view::<2, 2>(0, 0).into_owned();
    let kernel = (full - support.singular_values().iter().sum::<f64>()).abs();
    let denom = 2.0 * (qfi[(0, 0)] * qfi[(1, 1)]).sqrt();
    ((full / denom).min(1.0), kernel)
}

pub fn qfi_matrix(model: &QuantumModel) -> QfiReport {
    let qfi = qfi_from(&model.rho, &model.l1, &model.l2);
    let (c, kernel_contribution) = incompatibility(&model.rho, &model.l1, &model.l2, &qfi);
    let o = &model.overlaps;
    let c_closed_form = (o.beta * o.beta / (o.kappa * (o.kappa - o.gamma * o.gamma))).sqrt();
    QfiReport {
        qfi,
        c,
        c_closed_form,
        c_discrepancy: (c - c_closed_form).abs(),
        kernel_contribution,
    }
}

/// Orthonormal e-basis functions for one scene.
#[derive(Debug, Clone)]
pub struct EBasis {
    pub psf: PsfSpec,
    pub scene: SceneParams,
    pub overlaps: OverlapSet,
}

impl EBasis {
    pub fn new(psf: &PsfSpec, scene: SceneParams) -> Result<Self> {
        Ok(Self {
            psf: psf.clone(),
            scene,
            overlaps: compute_overlaps(psf, scene.theta2)?,
        })
    }

    /// Combines source amplitudes `(a1, a2)` and derivative amplitudes
    /// `(d1, d2)` (the latter for −ψ'(x − Xⱼ)) into e-basis components.
    fn combine(&self, a1: f64, a2: f64, d1: f64, d2: f64) -> Vector4<f64> {
        let o = &self.overlaps;
        let e1 = (a1 - a2) / (2.0 * o.one_minus_delta).sqrt();
        let e2 = (a1 + a2) / (2.0 * o.one_plus_delta()).sqrt();
        let e3 = ((d1 + d2) / SQRT_2 - o.gamma / o.one_minus_delta.sqrt() * e1) / o.eta3;
        let e4 = ((d1 - d2) / SQRT_2 + o.gamma / o.one_plus_delta().sqrt() * e2) / o.eta4;
        Vector4::new(e1, e2, e3, e4)
    }

    /// All four basis functions at `x`.
    pub fn values(&self, x: f64) -> Vector4<f64> {
        let (x1, x2) = (self.scene.x1(), self.scene.x2());
        self.combine(
            psf_value(&self.psf, x - x1),
            psf_value(&self.psf, x - x2),
            -psf_derivative(&self.psf, x - x1),
            -psf_derivative(&self.psf, x - x2),
        )
    }

    /// Components ⟨eₖ|ψ_X⟩ of a PSF copy centred at `position`.
    pub fn project_source(&self, position: f64) -> Vector4<f64> {
        let (x1, x2) = (self.scene.x1(), self.scene.x2());
        let p = &self.psf;
        self.combine(
            p.autocorrelation(position - x1),
            p.autocorrelation(position - x2),
            -p.derivative_correlation(position - x1),
            -p.derivative_correlation(position - x2),
        )
    }
}

impl EBasis {
    /// d/dX ⟨eₖ|ψ_X⟩, the components of −ψ'(x − X).
    pub fn project_source_derivative(&self, position: f64) -> Vector4<f64> {
        let (x1, x2) = (self.scene.x1(), self.scene.x2());
        let p = &self.psf;
        let (s1, s2) = (position - x1, position - x2);
        self.combine(
            -p.derivative_correlation(-s1),
            -p.derivative_correlation(-s2),
            p.derivative_autocorrelation(s1),
            p.derivative_autocorrelation(s2),
        )
    }

    /// ∂ρ/∂θ₁ and ∂ρ/∂θ₂ of ρ = ½(|ψ₁⟩⟨ψ₁| + |ψ₂⟩⟨ψ₂|), differentiated source by source.
    pub fn state_derivatives(&self) -> (Mat4, Mat4) {
        let (x1, x2) = (self.scene.x1(), self.scene.x2());
        let (a1, a2) = (self.project_source(x1), self.project_source(x2));
        let (b1, b2) = (self.project_source_derivative(x1), self.project_source_derivative(x2));
        let sym = |a: &Vector4<f64>, b: &Vector4<f64>| a * b.transpose() + b * a.transpose();
        let (g1, g2) = (sym(&a1, &b1), sym(&a2, &b2));
        // X₁ = θ₁ − θ₂/2, X₂ = θ₁ + θ₂/2
        ((g1 + g2) * 0.5, (g2 - g1) * 0.25)
    }
}

/// eₖ(x) for k ∈ 1..=4.
pub fn basis_wavefunction(psf: &PsfSpec, scene: SceneParams, k: usize, x: f64) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidInput(format!("basis index {k} outside 1..=4")));
    }
    Ok(EBasis::new(psf, scene)?.values(x)[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadratureConfig};
    use approx::assert_abs_diff_eq;

    fn model(theta2: f64) -> QuantumModel {
        build_model(&PsfSpec::gaussian(1.0).unwrap(), SceneParams::new(0.0, theta2).unwrap()).unwrap()
    }

    #[test]
    fn canonical_entries_at_rayleigh() {
        let m = model(2.0);
        assert_abs_diff_eq!(m.l2[(0, 0)], 0.770747, epsilon = 1e-6);
        assert_abs_diff_eq!(m.rho.trace(), 1.0, epsilon = 1e-15);
        assert!(is_symmetric(&m.l1, 1e-14) && is_symmetric(&m.l2, 1e-14));
        let eig = m.rho.symmetric_eigen().eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let d = m.overlaps.delta;
        assert_abs_diff_eq!(ev[2], (1.0 - d) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ev[3], (1.0 + d) / 2.0, epsilon = 1e-15);
        assert!(m.sld_residual(&m.l1, &m.l2) <= 1e-12);
    }

    #[test]
    fn physical_state_matches_density_matrix() {
        for t in [0.3, 1.0, 2.0, 5.0] {
            let m = model(t);
            let e = m.basis();
            let (a1, a2) = (e.project_source(m.scene.x1()), e.project_source(m.scene.x2()));
            let rho = (a1 * a1.transpose() + a2 * a2.transpose()) * 0.5;
            assert!(max_abs(&(rho - m.rho)) <= 1e-14, "theta2 = {t}");
            assert!(m.sld_residual(&m.l1, &m.l2) <= 1e-12, "theta2 = {t}");
        }
    }

    #[test]
    fn state_derivatives_match_finite_differences() {
        // ⟨eₖ|ψ_X⟩ against a central difference of the projection itself
        let m = model(1.7);
        let e = m.basis();
        let h = 1e-5;
        for x in [m.scene.x1(), m.scene.x2(), 0.4] {
            let fd = (e.project_source(x + h) - e.project_source(x - h)) / (2.0 * h);
            assert!((fd - e.project_source_derivative(x)).amax() < 1e-9);
        }
    }

    #[test]
    fn qfi_at_rayleigh() {
        let r = qfi_matrix(&model(2.0));
        assert_abs_diff_eq!(r.qfi[(0, 0)], 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.qfi[(1, 1)], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.qfi[(0, 1)], 0.0, epsilon = 1e-15);
        assert!(r.c <= 1e-12);
        assert!(r.kernel_contribution < 1e-14);
    }

    #[test]
    fn c_routes_agree_off_rayleigh() {
        let r = qfi_matrix(&model(1.0));
        assert!(r.c > 0.1);
        assert!(r.c_discrepancy <= 1e-8, "{:?}", r);
    }

    #[test]
    fn basis_is_orthonormal_by_quadrature() {
        let psf = PsfSpec::gaussian(1.0).unwrap();
        let scene = SceneParams::new(0.0, 2.0).unwrap();
        let basis = EBasis::new(&psf, scene).unwrap();
        let cfg = QuadratureConfig::default();
        for j in 0..4 {
            for k in 0..4 {
                let g = integrate(&cfg, -14.0, 14.0, |x| {
                    let v = basis.values(x);
                    v[j] * v[k]
                });
                assert_abs_diff_eq!(g, if j == k { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
        let ov = integrate(&cfg, -14.0, 14.0, |x| {
            basis_wavefunction(&psf, scene, 1, x).unwrap() * psf_value(&psf, x - scene.x1())
        });
        assert_abs_diff_eq!(ov, (basis.overlaps.one_minus_delta / 2.0).sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(ov, 0.443548, epsilon = 1e-6);
        assert!(basis_wavefunction(&psf, scene, 5, 0.0).is_err());
    }

    #[test]
    fn e2_tends_to_symmetric_sum_for_distant_sources() {
        let psf = PsfSpec::gaussian(1.0).unwrap();
        let scene = SceneParams::new(0.0, 40.0).unwrap();
        let basis = EBasis::new(&psf, scene).unwrap();
        for &x in &[-20.5, -19.0, 0.0, 20.3] {
            let want = (psf_value(&psf, x - scene.x1()) + psf_value(&psf, x - scene.x2())) / SQRT_2;
            assert_abs_diff_eq!(basis.values(x)[1], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn projected_source_matches_quadrature() {
        let psf = PsfSpec::gaussian(1.0).unwrap();
        let basis = EBasis::new(&psf, SceneParams::new(0.1, 2.0).unwrap()).unwrap();
        let cfg = QuadratureConfig::default();
        let pos = 1.37;
        let closed = basis.project_source(pos);
        for k in 0..4 {
            let q = integrate(&cfg, -14.0, 14.0, |x| basis.values(x)[k] * psf_value(&psf, x - pos));
            assert_abs_diff_eq!(closed[k], q, epsilon = 1e-10);
        }
    }
}
