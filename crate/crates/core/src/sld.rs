//! SLD gauge algebra.
//!
//! Every SLD splits into blocks with respect to supp(ρ) ⊕ ker(ρ):
//!
//! ```text
//!     L = | A   B |
//!         | Bᵀ  K |
//! ```
//!
//! `A` and `B` are fixed by the SLD equation; `K` is free. Two SLDs can be made
//! to commute iff the support blocks satisfy
//! `A₁A₂ − A₂A₁ = B₂B₁ᵀ − B₁B₂ᵀ` and kernel blocks exist with
//!
//! ```text
//!     B₁K₂ − B₂K₁ = A₂B₁ − A₁B₂          (4 equations)
//!     K₁K₂ − K₂K₁ = B₂ᵀB₁ − B₁ᵀB₂        (3 traceless equations)
//! ```
//!
//! This module extracts the blocks, solves for the kernel blocks (closed form
//! and a least-norm solver), and diagonalizes the resulting commuting pair.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{canonical_slds, commutator, is_symmetric, max_abs, Mat4};
use crate::psf::{OverlapSet, PsfSpec, SceneParams};

/// Tolerance on the support-block condition before a gauge is attempted.
pub const NECESSARY_CONDITION_TOL: f64 = 1e-8;
/// Relative tolerance on commutator residuals of an accepted gauge pair.
pub const GAUGE_TOL: f64 = 1e-10;
/// Solver output is rejected above this residual.
pub const SOLVER_REJECT_TOL: f64 = 1e-8;
/// Eigenvalue gap below which M(t) is treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;
/// Mixing weight for simultaneous diagonalization: 1/φ.
pub const MIXING_WEIGHT: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockDecomposition {
    /// Support block (symmetric).
    pub a: Matrix2<f64>,
    /// Support-to-kernel block.
    pub b: Matrix2<f64>,
    /// Kernel block (symmetric).
    pub k: Matrix2<f64>,
}

impl BlockDecomposition {
    pub fn reassemble(&self) -> Mat4 {
        let mut m = Mat4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.a);
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(&self.b);
        m.fixed_view_mut::<2, 2>(2, 0).copy_from(&self.b.transpose());
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.k);
        m
    }

    fn scale(&self) -> f64 {
        max_abs(&self.a).max(max_abs(&self.b)).max(max_abs(&self.k))
    }
}

/// Splits a symmetric 4×4 matrix along span{e₁,e₂} ⊕ span{e₃,e₄}.
pub fn decompose_blocks(l: &Mat4) -> Result<BlockDecomposition> {
    if !is_symmetric(l, 1e-14) {
        return Err(Error::Shape("SLD matrix is not symmetric".into()));
    }
    Ok(BlockDecomposition {
        a: l.fixed_view::<2, 2>(0, 0).into_owned(),
        b: l.fixed_view::<2, 2>(0, 2).into_owned(),
        k: l.fixed_view::<2, 2>(2, 2).into_owned(),
    })
}

/// Replaces the kernel block of `d` with `k`.
pub fn assemble_sld(d: &BlockDecomposition, k: &Matrix2<f64>) -> Result<Mat4> {
    if max_abs(&(k - k.transpose())) > 1e-14 * max_abs(k).max(f64::MIN_POSITIVE) {
        return Err(Error::Shape("kernel block must be symmetric".into()));
    }
    Ok(BlockDecomposition { k: *k, ..*d }.reassemble())
}

/// Coefficients of X = Σ vα σα in the basis {𝟙, σ₁, σ₂, σ₃}, vα = ½ tr(σα X).
///
/// Matrices here are real symmetric, so v₂ is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PauliVector(pub [f64; 4]);

impl PauliVector {
    pub fn from_symmetric(x: &Matrix2<f64>) -> Result<Self> {
        if (x[(0, 1)] - x[(1, 0)]).abs() > 1e-14 * max_abs(x).max(f64::MIN_POSITIVE) {
            return Err(Error::Shape("Pauli expansion needs a symmetric matrix".into()));
        }
        Ok(Self([
            0.5 * (x[(0, 0)] + x[(1, 1)]),
            0.5 * (x[(0, 1)] + x[(1, 0)]),
            0.0,
            0.5 * (x[(0, 0)] - x[(1, 1)]),
        ]))
    }

    pub fn new(v0: f64, v1: f64, v3: f64) -> Self {
        Self([v0, v1, 0.0, v3])
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let [v0, v1, _, v3] = self.0;
        Matrix2::new(v0 + v3, v1, v1, v0 - v3)
    }
}

/// Pauli components (v₀, v₁, Im v₂, v₃) of a general real 2×2 matrix.
/// The σ₂ coefficient of a real matrix is imaginary; its imaginary part is reported.
fn pauli_components(x: &Matrix2<f64>) -> [f64; 4] {
    [
        0.5 * (x[(0, 0)] + x[(1, 1)]),
        0.5 * (x[(0, 1)] + x[(1, 0)]),
        0.5 * (x[(0, 1)] - x[(1, 0)]),
        0.5 * (x[(0, 0)] - x[(1, 1)]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeSource {
    ClosedForm,
    LeastNormSolver,
}

/// Residuals of the three commutation conditions for a candidate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugeResiduals {
    pub c0: f64,
    /// Pauli components of the first kernel-condition mismatch.
    pub c1: [f64; 4],
    /// σ₁, σ₂, σ₃ components of the second kernel-condition mismatch.
    pub c2: [f64; 3],
    /// ‖[L₁′, L₂′]‖_max of the assembled pair.
    pub commutator_norm: f64,
    /// Largest input block entry, the scale for relative tolerances.
    pub scale: f64,
}

impl GaugeResiduals {
    pub fn c1_max(&self) -> f64 {
        self.c1.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn c2_max(&self) -> f64 {
        self.c2.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Kernel blocks that make the two SLDs commute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugePair {
    pub k1: Matrix2<f64>,
    pub k2: Matrix2<f64>,
    pub source: GaugeSource,
    pub residuals: GaugeResiduals,
}

impl GaugePair {
    pub fn pauli(&self) -> (PauliVector, PauliVector) {
        (
            PauliVector::from_symmetric(&self.k1).expect("kernel blocks are symmetric"),
            PauliVector::from_symmetric(&self.k2).expect("kernel blocks are symmetric"),
        )
    }

    /// The gauged pair (L₁′, L₂′).
    pub fn assemble(&self, d1: &BlockDecomposition, d2: &BlockDecomposition) -> Result<(Mat4, Mat4)> {
        Ok((assemble_sld(d1, &self.k1)?, assemble_sld(d2, &self.k2)?))
    }
}

/// ‖(A₁A₂ − A₂A₁) − (B₂B₁ᵀ − B₁B₂ᵀ)‖_max.
pub fn necessary_condition_residual(d1: &BlockDecomposition, d2: &BlockDecomposition) -> f64 {
    let lhs = d1.a * d2.a - d2.a * d1.a;
    let rhs = d2.b * d1.b.transpose() - d1.b * d2.b.transpose();
    max_abs(&(lhs - rhs))
}

fn c1_mismatch(d1: &BlockDecomposition, d2: &BlockDecomposition, k1: &Matrix2<f64>, k2: &Matrix2<f64>) -> Matrix2<f64> {
    (d1.b * k2 - d2.b * k1) - (d2.a * d1.b - d1.a * d2.b)
}

fn c2_mismatch(d1: &BlockDecomposition, d2: &BlockDecomposition, k1: &Matrix2<f64>, k2: &Matrix2<f64>) -> Matrix2<f64> {
    (k1 * k2 - k2 * k1) - (d2.b.transpose() * d1.b - d1.b.transpose() * d2.b)
}

/// Evaluates all commutation residuals for kernel blocks `k1`, `k2`.
pub fn gauge_residuals(
    d1: &BlockDecomposition,
    d2: &BlockDecomposition,
    k1: &Matrix2<f64>,
    k2: &Matrix2<f64>,
) -> GaugeResiduals {
    let c1 = pauli_components(&c1_mismatch(d1, d2, k1, k2));
    let [_, a, b, c] = pauli_components(&c2_mismatch(d1, d2, k1, k2));
    let l1 = BlockDecomposition { k: *k1, ..*d1 }.reassemble();
    let l2 = BlockDecomposition { k: *k2, ..*d2 }.reassemble();
    GaugeResiduals {
        c0: necessary_condition_residual(d1, d2),
        c1,
        c2: [a, b, c],
        commutator_norm: max_abs(&commutator(&l1, &l2)),
        scale: d1.scale().max(d2.scale()),
    }
}

/// The kernel blocks displayed for the two-source model:
///
/// K₁ = (2γ/(1−δ²) − 2κ/γ) σ₀ − (2δγ/(1−δ²)) σ₃,
/// K₂ = (η₃η₄/γ) σ₁ + ((1+δ²)γ/(1−δ²)) σ₃.
///
/// The result is checked against the full commutator of the assembled pair.
pub fn closed_form_gauge(o: &OverlapSet) -> Result<GaugePair> {
    if o.gamma.abs() <= 1e-12 {
        return Err(Error::Domain(format!(
            "closed-form gauge divides by gamma = {:e}",
            o.gamma
        )));
    }
    if o.one_minus_delta <= 1e-12 {
        return Err(Error::SingularBasis { delta: o.delta });
    }
    let omd2 = o.one_minus_delta_sq();
    let k1 = PauliVector::new(
        2.0 * o.gamma / omd2 - 2.0 * o.kappa / o.gamma,
        0.0,
        -2.0 * o.delta * o.gamma / omd2,
    )
    .matrix();
    let k2 = PauliVector::new(
        0.0,
        o.eta3 * o.eta4 / o.gamma,
        (1.0 + o.delta * o.delta) * o.gamma / omd2,
    )
    .matrix();

    let (l1, l2) = canonical_slds(o);
    let (d1, d2) = (decompose_blocks(&l1)?, decompose_blocks(&l2)?);
    let residuals = gauge_residuals(&d1, &d2, &k1, &k2);
    let worst = residuals
        .commutator_norm
        .max(residuals.c1_max())
        .max(residuals.c2_max());
    let scale = residuals.scale.max(max_abs(&k1)).max(max_abs(&k2));
    if worst > GAUGE_TOL * scale {
        return Err(Error::GaugeInvalid { residual: worst });
    }
    Ok(GaugePair {
        k1,
        k2,
        source: GaugeSource::ClosedForm,
        residuals,
    })
}

/// v₀(K₁) of the closed-form gauge, used to pin the solver's free trace.
pub fn closed_form_trace(o: &OverlapSet) -> Option<f64> {
    (o.gamma.abs() > 1e-12 && o.one_minus_delta > 1e-12)
        .then(|| 2.0 * o.gamma / o.one_minus_delta_sq() - 2.0 * o.kappa / o.gamma)
}

/// Unknown layout: v₀(K₁), v₁(K₁), v₃(K₁), v₀(K₂), v₁(K₂), v₃(K₂).
fn kernels_from(x: &[f64]) -> (Matrix2<f64>, Matrix2<f64>) {
    (
        PauliVector::new(x[0], x[1], x[2]).matrix(),
        PauliVector::new(x[3], x[4], x[5]).matrix(),
    )
}

/// Least-norm solution of the kernel-block conditions.
///
/// `trace_hint` fixes v₀(K₁) (pass the closed-form value when one exists);
/// without it v₀(K₁) = 0. The first kernel condition is linear in the six
/// Pauli coefficients of real symmetric K₁, K₂; it is solved by pseudo-inverse,
/// and the second (bilinear) condition is then solved exactly on the
/// remaining null space, choosing the smallest correction. If no real root
/// exists with v₀(K₁) fixed, v₀(K₁) is released. A final Gauss-Newton pass
/// on all residuals polishes the result before verification.
pub fn solve_gauge_least_norm(
    d1: &BlockDecomposition,
    d2: &BlockDecomposition,
    trace_hint: Option<f64>,
) -> Result<GaugePair> {
    let c0 = necessary_condition_residual(d1, d2);
    if c0 > NECESSARY_CONDITION_TOL {
        return Err(Error::NoSolution(format!(
            "support-block condition fails (residual {c0:.3e})"
        )));
    }

    let fixed = trace_hint.unwrap_or(0.0);
    let x = solve_on_null_space(d1, d2, Some(fixed))
        .or_else(|| solve_on_null_space(d1, d2, None))
        .ok_or_else(|| Error::NoSolution("kernel conditions have no real solution".into()))?;
    let x = gauss_newton_polish(d1, d2, x);

    let (k1, k2) = kernels_from(&x);
    let residuals = gauge_residuals(d1, d2, &k1, &k2);
    let worst = residuals
        .commutator_norm
        .max(residuals.c1_max())
        .max(residuals.c2_max());
    let scale = residuals.scale.max(max_abs(&k1)).max(max_abs(&k2)).max(1.0);
    if worst > SOLVER_REJECT_TOL * scale {
        return Err(Error::NoSolution(format!(
            "solver residual {worst:.3e} exceeds tolerance"
        )));
    }
    Ok(GaugePair {
        k1,
        k2,
        source: GaugeSource::LeastNormSolver,
        residuals,
    })
}

/// First-condition residual (4 entries) and second-condition σ₂ component.
fn residual_vector(d1: &BlockDecomposition, d2: &BlockDecomposition, x: &[f64]) -> [f64; 5] {
    let (k1, k2) = kernels_from(x);
    let r1 = c1_mismatch(d1, d2, &k1, &k2);
    let r2 = c2_mismatch(d1, d2, &k1, &k2);
    [r1[(0, 0)], r1[(0, 1)], r1[(1, 0)], r1[(1, 1)], 0.5 * (r2[(0, 1)] - r2[(1, 0)])]
}

fn solve_on_null_space(
    d1: &BlockDecomposition,
    d2: &BlockDecomposition,
    fixed_trace: Option<f64>,
) -> Option<[f64; 6]> {
    let free: Vec<usize> = match fixed_trace {
        Some(_) => (1..6).collect(),
        None => (0..6).collect(),
    };
    let base = {
        let mut b = [0.0; 6];
        if let Some(t) = fixed_trace {
            b[0] = t;
        }
        b
    };
    let embed = |y: &DVector<f64>| -> [f64; 6] {
        let mut x = base;
        for (i, &idx) in free.iter().enumerate() {
            x[idx] = y[i];
        }
        x
    };

    // The first condition is affine in the unknowns: r(x) = M y + r(base).
    let r0 = residual_vector(d1, d2, &base);
    let n = free.len();
    let mut m = DMatrix::<f64>::zeros(4, n);
    for (col, &idx) in free.iter().enumerate() {
        let mut x = base;
        x[idx] += 1.0;
        let r = residual_vector(d1, d2, &x);
        for row in 0..4 {
            m[(row, col)] = r[row] - r0[row];
        }
    }
    let rhs = DVector::from_iterator(4, r0[..4].iter().map(|v| -v));

    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax.max(1.0);
    let y_p = svd.solve(&rhs, cutoff).ok()?;
    if (&m * &y_p - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    let v_t = svd.v_t.as_ref()?;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    // Rows of Vᵀ beyond the rank span the null space (thin SVD keeps min(4, n) rows).
    let mut null: Vec<DVector<f64>> = Vec::new();
    let full = if v_t.nrows() < n {
        // complete the basis of the row space's complement
        let (rows, _) = v_t.shape();
        let mut basis: Vec<DVector<f64>> = (0..rows).map(|i| v_t.row(i).transpose()).collect();
        for e in 0..n {
            let mut v = DVector::<f64>::zeros(n);
            v[e] = 1.0;
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
            let norm = v.norm();
            if norm > 1e-8 {
                basis.push(v / norm);
            }
            if basis.len() == n {
                break;
            }
        }
        basis
    } else {
        (0..n).map(|i| v_t.row(i).transpose()).collect()
    };
    for v in full.into_iter().skip(rank) {
        null.push(v);
    }

    // Second condition restricted to y = y_p + N z is an exact quadratic in z.
    let q = |z: &[f64]| -> f64 {
        let mut y = y_p.clone();
        for (zi, v) in z.iter().zip(&null) {
            y += v * *zi;
        }
        residual_vector(d1, d2, &embed(&y))[4]
    };
    let dim = null.len();
    let point = |z: Vec<f64>| -> [f64; 6] {
        let mut y = y_p.clone();
        for (zi, v) in z.iter().zip(&null) {
            y += v * *zi;
        }
        embed(&y)
    };

    let q0 = q(&vec![0.0; dim]);
    if q0.abs() <= 1e-14 {
        return Some(point(vec![0.0; dim]));
    }
    match dim {
        0 => None,
        1 => {
            let (qp, qm) = (q(&[1.0]), q(&[-1.0]));
            let lin = 0.5 * (qp - qm);
            let quad = 0.5 * (qp + qm) - q0;
            smallest_root(quad, lin, q0).map(|z| point(vec![z]))
        }
        _ => {
            // Shortest root along a fan of directions in the first two null-space axes,
            // refined by golden-section search on the angle.
            let root_along = |angle: f64| -> Option<f64> {
                let mut dir = vec![0.0; dim];
                dir[0] = angle.cos();
                dir[1] = angle.sin();
                let neg: Vec<f64> = dir.iter().map(|v| -v).collect();
                let (qp, qm) = (q(&dir), q(&neg));
                smallest_root(0.5 * (qp + qm) - q0, 0.5 * (qp - qm), q0)
            };
            let steps = 720;
            let mut best: Option<(f64, f64)> = None;
            for i in 0..steps {
                let a = std::f64::consts::PI * i as f64 / steps as f64;
                if let Some(s) = root_along(a) {
                    if best.is_none_or(|(_, bs)| s.abs() < bs.abs()) {
                        best = Some((a, s));
                    }
                }
            }
            let (mut a, _) = best?;
            let h = std::f64::consts::PI / steps as f64;
            let (mut lo, mut hi) = (a - h, a + h);
            let cost = |a: f64| root_along(a).map(f64::abs).unwrap_or(f64::INFINITY);
            for _ in 0..80 {
                let m1 = lo + 0.381_966_011_250_105 * (hi - lo);
                let m2 = hi - 0.381_966_011_250_105 * (hi - lo);
                if cost(m1) <= cost(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let refined = 0.5 * (lo + hi);
            if cost(refined).is_finite() {
                a = refined;
            }
            let s = root_along(a)?;
            let mut z = vec![0.0; dim];
            z[0] = s * a.cos();
            z[1] = s * a.sin();
            Some(point(z))
        }
    }
}

/// Real root of a z² + b z + c with the smallest magnitude.
fn smallest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * scale {
        return (b.abs() > 1e-14 * scale).then(|| -c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let r1 = q / a;
    let r2 = if q != 0.0 { c / q } else { r1 };
    Some(if r1.abs() <= r2.abs() { r1 } else { r2 })
}

/// Least-norm Gauss-Newton steps on the five independent residuals.
fn gauss_newton_polish(d1: &BlockDecomposition, d2: &BlockDecomposition, mut x: [f64; 6]) -> [f64; 6] {
    for _ in 0..3 {
        let r = residual_vector(d1, d2, &x);
        if r.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(5, 6);
        for col in 0..6 {
            let h = 1e-6 * x[col].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[col] += h;
            xm[col] -= h;
            let (rp, rm) = (residual_vector(d1, d2, &xp), residual_vector(d1, d2, &xm));
            for row in 0..5 {
                jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(5, r.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&rhs, 1e-12) else { break };
        let mut trial = x;
        for i in 0..6 {
            trial[i] += step[i];
        }
        let norm = |r: [f64; 5]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm(residual_vector(d1, d2, &trial)) < norm(r) {
            x = trial;
        } else {
            break;
        }
    }
    x
}

/// Common eigenbasis of a commuting SLD pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointBasis {
    /// (λ of L₁′, λ of L₂′) for each column.
    pub eigenvalues: [(f64, f64); 4],
    /// Orthogonal matrix whose columns φⱼ are given in the e-basis.
    pub vectors: Mat4,
}

impl JointBasis {
    /// φⱼ as a column, j ∈ 0..4.
    pub fn column(&self, j: usize) -> nalgebra::Vector4<f64> {
        self.vectors.column(j).into_owned()
    }
}

/// Simultaneously diagonalizes `l1p` and `l2p`.
///
/// Eigenvectors of M = L₁′ + t L₂′ (t = 1/φ) are taken as the basis; any
/// degenerate eigenspace of M (gap < 1e-9) is re-diagonalized with L₂′, then
/// with L₁′. Columns are ordered by descending λ₁, ties by descending λ₂, and
/// each column's largest-magnitude component is made positive.
pub fn joint_eigenbasis(l1p: &Mat4, l2p: &Mat4, tol: f64) -> Result<JointBasis> {
    let scale = max_abs(l1p).max(max_abs(l2p)).max(f64::MIN_POSITIVE);
    let comm = max_abs(&commutator(l1p, l2p));
    if comm > tol * scale {
        return Err(Error::NotCommuting {
            norm: comm,
            tol: tol * scale,
        });
    }
    let mix = l1p + l2p * MIXING_WEIGHT;
    let eig = SymmetricEigen::new(mix);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut v = Mat4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &eig.eigenvectors.column(src));
    }
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    // Refine degenerate clusters of M.
    let gap = DEGENERACY_GAP * scale.max(1.0);
    let mut start = 0;
    while start < 4 {
        let mut end = start + 1;
        while end < 4 && vals[end] - vals[end - 1] < gap {
            end += 1;
        }
        if end - start > 1 {
            for op in [l2p, l1p] {
                rediagonalize_block(&mut v, start, end, op);
            }
        }
        start = end;
    }

    let d1 = v.transpose() * l1p * v;
    let d2 = v.transpose() * l2p * v;
    let off = |d: &Mat4| max_abs(&(d - Mat4::from_diagonal(&d.diagonal())));
    let residual = off(&d1).max(off(&d2));
    if residual > tol * scale {
        return Err(Error::DegeneracyUnresolved { residual });
    }

    let mut cols: Vec<(f64, f64, nalgebra::Vector4<f64>)> = (0..4)
        .map(|j| {
            let mut c = v.column(j).into_owned();
            let lead = c
                .iter()
                .copied()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv.abs() + 1e-12 { (i, x) } else { (bi, bv) });
            if lead.1 < 0.0 {
                c = -c;
            }
            (d1[(j, j)], d2[(j, j)], c)
        })
        .collect();
    let tie = gap;
    cols.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tie {
            b.1.total_cmp(&a.1)
        } else {
            b.0.total_cmp(&a.0)
        }
    });

    let mut vectors = Mat4::zeros();
    let mut eigenvalues = [(0.0, 0.0); 4];
    for (j, (a, b, c)) in cols.into_iter().enumerate() {
        vectors.set_column(j, &c);
        eigenvalues[j] = (a, b);
    }
    Ok(JointBasis { eigenvalues, vectors })
}

/// Rotates columns `start..end` of `v` so that `op` is diagonal on their span.
fn rediagonalize_block(v: &mut Mat4, start: usize, end: usize, op: &Mat4) {
    let k = end - start;
    let sub = v.columns(start, k).into_owned();
    let proj = sub.transpose() * op * &sub;
    let proj = DMatrix::from_fn(k, k, |i, j| 0.5 * (proj[(i, j)] + proj[(j, i)]));
    let eig = proj.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    for (dst, &src) in order.iter().enumerate() {
        let col = &sub * eig.eigenvectors.column(src);
        v.set_column(start + dst, &col);
    }
}

/// qⱼ(x) = Σₖ φⱼₖ eₖ(x), j ∈ 1..=4.
pub fn joint_basis_wavefunction(
    basis: &JointBasis,
    psf: &PsfSpec,
    scene: SceneParams,
    j: usize,
    x: f64,
) -> Result<f64> {
    if !(1..=4).contains(&j) {
        return Err(Error::InvalidInput(format!("joint basis index {j} outside 1..=4")));
    }
    let e = crate::model::EBasis::new(psf, scene)?;
    Ok(basis.column(j - 1).dot(&e.values(x)))
}

/// Gauged SLD pair and its common eigenbasis at one scene.
#[derive(Debug, Clone)]
pub struct JointMeasurement {
    pub gauge: GaugePair,
    pub l1: Mat4,
    pub l2: Mat4,
    pub basis: JointBasis,
}

/// Builds the joint optimal measurement for a model: closed-form gauge when
/// it applies, least-norm solver otherwise.
pub fn joint_measurement(model: &crate::model::QuantumModel) -> Result<JointMeasurement> {
    let d1 = decompose_blocks(&model.l1)?;
    let d2 = decompose_blocks(&model.l2)?;
    let gauge = match closed_form_gauge(&model.overlaps) {
        Ok(g) => g,
        Err(_) => solve_gauge_least_norm(&d1, &d2, None)?,
    };
    joint_measurement_with(&d1, &d2, gauge)
}

pub fn joint_measurement_with(
    d1: &BlockDecomposition,
    d2: &BlockDecomposition,
    gauge: GaugePair,
) -> Result<JointMeasurement> {
    let (l1, l2) = gauge.assemble(d1, d2)?;
    let basis = joint_eigenbasis(&l1, &l2, GAUGE_TOL)?;
    Ok(JointMeasurement { gauge, l1, l2, basis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, jordan, qfi_from};
    use crate::psf::{compute_overlaps, PsfSpec, SceneParams};
    use approx::assert_abs_diff_eq;

    fn blocks(theta2: f64) -> (BlockDecomposition, BlockDecomposition, OverlapSet) {
        let o = compute_overlaps(&PsfSpec::gaussian(1.0).unwrap(), theta2).unwrap();
        let (l1, l2) = canonical_slds(&o);
        (decompose_blocks(&l1).unwrap(), decompose_blocks(&l2).unwrap(), o)
    }

    #[test]
    fn canonical_kernel_blocks_vanish() {
        let (d1, d2, o) = blocks(2.0);
        assert_eq!(d1.k, Matrix2::zeros());
        assert_eq!(d2.k, Matrix2::zeros());
        assert_eq!(d1.b[(0, 0)], 0.0);
        assert_eq!(d1.b[(1, 1)], 0.0);
        assert_abs_diff_eq!(d1.b[(0, 1)], 2.0 * o.eta4 / o.one_minus_delta.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d1.b[(0, 1)], 1.399828, epsilon = 1e-6);
        assert_abs_diff_eq!(d1.b[(1, 0)], 0.201203, epsilon = 1e-6);
    }

    #[test]
    fn identity_blocks() {
        let d = decompose_blocks(&Mat4::identity()).unwrap();
        assert_eq!(d.a, Matrix2::identity());
        assert_eq!(d.b, Matrix2::zeros());
        assert_eq!(d.k, Matrix2::identity());
        assert_eq!(d.reassemble(), Mat4::identity());
    }

    #[test]
    fn rejects_asymmetric_input() {
        let mut m = Mat4::identity();
        m[(0, 3)] = 1.0;
        assert!(matches!(decompose_blocks(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn necessary_condition_tracks_beta() {
        let (d1, d2, _) = blocks(2.0);
        assert!(necessary_condition_residual(&d1, &d2) <= 1e-12);
        let (e1, e2, _) = blocks(1.0);
        assert!(necessary_condition_residual(&e1, &e2) > 1e-3);
        assert_eq!(necessary_condition_residual(&e1, &e1), 0.0);
    }

    #[test]
    fn pauli_round_trip() {
        let x = Matrix2::new(1.5, -0.25, -0.25, 0.75);
        let v = PauliVector::from_symmetric(&x).unwrap();
        assert_abs_diff_eq!(v.matrix(), x, epsilon = 1e-15);
        assert_eq!(v.0[2], 0.0);
        assert!(PauliVector::from_symmetric(&Matrix2::new(0.0, 1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn closed_form_values_at_rayleigh() {
        let (_, _, o) = blocks(2.0);
        let g = closed_form_gauge(&o).unwrap();
        let (p1, p2) = g.pauli();
        // Oracle: direct substitution of the overlap values.
        let d = (-0.5f64).exp();
        let gamma = -0.5 * d;
        let omd2 = 1.0 - d * d;
        assert_abs_diff_eq!(p1.0[0], 2.0 * gamma / omd2 - 0.5 / gamma, epsilon = 1e-12);
        assert_abs_diff_eq!(p1.0[0], 0.689204, epsilon = 1e-6);
        assert_abs_diff_eq!(p1.0[3], 0.581977, epsilon = 1e-6);
        assert_abs_diff_eq!(p2.0[1], -0.184598, epsilon = 1e-6);
        assert_abs_diff_eq!(p2.0[3], -0.656252, epsilon = 1e-6);
        assert!(g.residuals.commutator_norm <= 1e-10);
    }

    #[test]
    fn closed_form_rejected_off_rayleigh() {
        let (_, _, o) = blocks(1.0);
        assert!(matches!(closed_form_gauge(&o), Err(Error::GaugeInvalid { .. })));
    }

    #[test]
    fn least_norm_solver_at_rayleigh() {
        let (d1, d2, o) = blocks(2.0);
        for hint in [None, Some(closed_form_gauge(&o).unwrap().pauli().0 .0[0])] {
            let g = solve_gauge_least_norm(&d1, &d2, hint).unwrap();
            let scale = g.residuals.scale;
            assert!(g.residuals.commutator_norm <= 1e-10 * scale, "{:?}", g.residuals);
            assert!(g.residuals.c1_max() <= 1e-10 * scale);
            assert!(g.residuals.c2_max() <= 1e-10 * scale);
        }
    }

    #[test]
    fn least_norm_solver_off_rayleigh() {
        let (d1, d2, _) = blocks(1.0);
        assert!(matches!(
            solve_gauge_least_norm(&d1, &d2, None),
            Err(Error::NoSolution(_))
        ));
    }

    #[test]
    fn zero_gauge_when_blocks_commute_trivially() {
        let d = BlockDecomposition {
            a: Matrix2::new(1.0, 0.0, 0.0, 2.0),
            b: Matrix2::zeros(),
            k: Matrix2::zeros(),
        };
        let e = BlockDecomposition {
            a: Matrix2::new(3.0, 0.0, 0.0, -1.0),
            ..d
        };
        let g = solve_gauge_least_norm(&d, &e, None).unwrap();
        assert_eq!(g.k1, Matrix2::zeros());
        assert_eq!(g.k2, Matrix2::zeros());
    }

    #[test]
    fn gauge_leaves_sld_equation_and_qfi_unchanged() {
        let m = build_model(&PsfSpec::gaussian(1.0).unwrap(), SceneParams::new(0.0, 2.0).unwrap()).unwrap();
        let d1 = decompose_blocks(&m.l1).unwrap();
        let d2 = decompose_blocks(&m.l2).unwrap();
        let k1 = Matrix2::new(0.3, -1.1, -1.1, 2.0);
        let k2 = Matrix2::new(-4.0, 0.5, 0.5, 0.1);
        let l1 = assemble_sld(&d1, &k1).unwrap();
        let l2 = assemble_sld(&d2, &k2).unwrap();
        assert!(max_abs(&(m.drho1 - jordan(&l1, &m.rho))) <= 1e-12);
        assert!(max_abs(&(m.drho2 - jordan(&l2, &m.rho))) <= 1e-12);
        let q0 = qfi_from(&m.rho, &m.l1, &m.l2);
        let q1 = qfi_from(&m.rho, &l1, &l2);
        assert!(max_abs(&(q0 - q1)) <= 1e-12);
        assert_eq!(assemble_sld(&d1, &Matrix2::zeros()).unwrap(), m.l1);
        assert!(assemble_sld(&d1, &Matrix2::new(0.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn joint_basis_diagonal_inputs() {
        let a = Mat4::from_diagonal(&nalgebra::Vector4::new(1.0, 2.0, 3.0, 4.0));
        let b = Mat4::from_diagonal(&nalgebra::Vector4::new(4.0, 3.0, 2.0, 1.0));
        let jb = joint_eigenbasis(&a, &b, 1e-10).unwrap();
        assert_eq!(jb.eigenvalues[0], (4.0, 1.0));
        for j in 0..4 {
            let c = jb.column(j);
            assert_abs_diff_eq!(c.amax(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_basis_degenerate_subspace() {
        // M(t) = diag(1,1,2,2) exactly; L₂′ mixes inside each degenerate pair.
        let r = |t: f64| Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
        let mut l2 = Mat4::zeros();
        let b1 = r(0.4) * Matrix2::new(1.0, 0.0, 0.0, -1.0) * r(0.4).transpose();
        let b2 = r(1.1) * Matrix2::new(0.5, 0.0, 0.0, 2.0) * r(1.1).transpose();
        l2.fixed_view_mut::<2, 2>(0, 0).copy_from(&b1);
        l2.fixed_view_mut::<2, 2>(2, 2).copy_from(&b2);
        let d = Mat4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 2.0, 2.0));
        let l1 = d - l2 * MIXING_WEIGHT;
        let jb = joint_eigenbasis(&l1, &l2, 1e-10).unwrap();
        let t1 = jb.vectors.transpose() * l1 * jb.vectors;
        let t2 = jb.vectors.transpose() * l2 * jb.vectors;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(t1[(i, j)].abs() < 1e-10 && t2[(i, j)].abs() < 1e-10);
                }
            }
        }
        // L₁′ = I: the basis diagonalizes L₂′ alone.
        let jb = joint_eigenbasis(&Mat4::identity(), &l2, 1e-10).unwrap();
        let t2 = jb.vectors.transpose() * l2 * jb.vectors;
        assert!(max_abs(&(t2 - Mat4::from_diagonal(&t2.diagonal()))) < 1e-10);
    }

    #[test]
    fn joint_basis_rejects_non_commuting() {
        let m = build_model(&PsfSpec::gaussian(1.0).unwrap(), SceneParams::new(0.0, 2.0).unwrap()).unwrap();
        assert!(matches!(
            joint_eigenbasis(&m.l1, &m.l2, 1e-10),
            Err(Error::NotCommuting { .. })
        ));
    }

    #[test]
    fn joint_basis_at_rayleigh_is_orthonormal_and_deterministic() {
        let m = build_model(&PsfSpec::gaussian(1.0).unwrap(), SceneParams::new(0.0, 2.0).unwrap()).unwrap();
        let jm = joint_measurement(&m).unwrap();
        let v = jm.basis.vectors;
        assert!(max_abs(&(v.transpose() * v - Mat4::identity())) <= 1e-12);
        let again = joint_measurement(&m).unwrap();
        assert_eq!(jm.basis, again.basis);
        for j in 1..4 {
            assert!(jm.basis.eigenvalues[j - 1].0 >= jm.basis.eigenvalues[j].0);
        }
    }
}
