//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every function takes physical lengths in units of the Gaussian width σ and
//! returns a flat row-major `Vec<f64>` (a `Float64Array` on the JS side).

use twosource::error::Error;
use twosource::measurement::{
    classical_fim, outcome_distribution, projective_limit_terms, regret_report, Povm, DEFAULT_HALF_RANGE,
    DEFAULT_Q_MAX,
};
use twosource::model::{build_model, qfi_matrix, QuantumModel};
use twosource::psf::{compute_overlaps, PsfSpec, SceneParams};
use twosource::sld::{joint_basis_wavefunction, joint_measurement};
use wasm_bindgen::prelude::*;

/// Values per row returned by [`overlap_curve`].
pub const OVERLAP_STRIDE: usize = 7;
/// Values per row returned by [`regrets`].
pub const REGRET_STRIDE: usize = 6;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn unit_psf() -> PsfSpec {
    PsfSpec::gaussian(1.0).expect("unit width is valid")
}

fn grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>, Error> {
    if steps < 2 || !(from < to) || !from.is_finite() || !to.is_finite() {
        return Err(Error::InvalidInput(format!("bad grid {from}..{to} with {steps} steps")));
    }
    let h = (to - from) / (steps - 1) as f64;
    Ok((0..steps).map(|i| if i + 1 == steps { to } else { from + h * i as f64 }).collect())
}

/// Rows of `[theta2, delta, kappa, gamma, beta, eta3, eta4]` over a separation grid.
#[wasm_bindgen]
pub fn overlap_curve(from: f64, to: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    overlap_rows(from, to, steps).map_err(js)
}

pub fn overlap_rows(from: f64, to: f64, steps: usize) -> Result<Vec<f64>, Error> {
    let psf = unit_psf();
    let mut out = Vec::with_capacity(steps * OVERLAP_STRIDE);
    for t in grid(from, to, steps)? {
        let o = compute_overlaps(&psf, t)?;
        out.extend([t, o.delta, o.kappa, o.gamma, o.beta, o.eta3, o.eta4]);
    }
    Ok(out)
}

fn regret_row(model: &QuantumModel, povm: &Povm, joint: bool) -> Result<[f64; REGRET_STRIDE], Error> {
    let dist = outcome_distribution(povm, model)?;
    let terms = match (joint, povm) {
        (true, Povm::Projective { basis }) => {
            let jm = joint_measurement(model)?;
            Some(projective_limit_terms(basis, &model.rho, &jm.l1, &jm.l2))
        }
        _ => None,
    };
    let fim = classical_fim(&dist, terms.as_deref());
    let r = regret_report(&fim, &qfi_matrix(model))?;
    Ok([r.fim[(0, 0)], r.fim[(1, 1)], r.qfi[(0, 0)], r.qfi[(1, 1)], r.delta1, r.delta2])
}

/// Three rows (direct imaging, SPADE, joint) of `[F11, F22, QFI11, QFI22, delta1, delta2]`.
/// The joint row is NaN where the SLDs admit no commuting gauge.
#[wasm_bindgen]
pub fn regrets(theta2: f64, pixel_width: f64) -> Result<Vec<f64>, JsError> {
    regret_rows(theta2, pixel_width).map_err(js)
}

pub fn regret_rows(theta2: f64, pixel_width: f64) -> Result<Vec<f64>, Error> {
    let psf = unit_psf();
    let scene = SceneParams::new(0.0, theta2)?;
    let model = build_model(&psf, scene)?;
    let direct = Povm::DirectImaging {
        pixel_width,
        half_range: DEFAULT_HALF_RANGE,
    };
    direct.validate(&psf, scene)?;
    let spade = Povm::Spade {
        alignment: 0.0,
        q_max: DEFAULT_Q_MAX,
    };
    let mut out = Vec::with_capacity(3 * REGRET_STRIDE);
    out.extend(regret_row(&model, &direct, false)?);
    out.extend(regret_row(&model, &spade, false)?);
    match joint_measurement(&model) {
        Ok(jm) => out.extend(regret_row(&model, &Povm::Projective { basis: jm.basis.vectors }, true)?),
        Err(Error::NoSolution(_) | Error::GaugeInvalid { .. }) => out.extend([f64::NAN; REGRET_STRIDE]),
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// The four joint-measurement wavefunctions sampled on `[x_from, x_to]`:
/// first `points` x values, then four rows of `points` amplitudes, then the
/// eight joint eigenvalues `(λ1, λ2)` per outcome.
#[wasm_bindgen]
pub fn joint_basis_wavefunctions(theta2: f64, x_from: f64, x_to: f64, points: usize) -> Result<Vec<f64>, JsError> {
    wavefunction_rows(theta2, x_from, x_to, points).map_err(js)
}

pub fn wavefunction_rows(theta2: f64, x_from: f64, x_to: f64, points: usize) -> Result<Vec<f64>, Error> {
    let psf = unit_psf();
    let scene = SceneParams::new(0.0, theta2)?;
    let model = build_model(&psf, scene)?;
    let jm = joint_measurement(&model)?;
    let xs = grid(x_from, x_to, points)?;
    let mut out = xs.clone();
    for j in 1..=4 {
        for &x in &xs {
            out.push(joint_basis_wavefunction(&jm.basis, &psf, scene, j, x)?);
        }
    }
    for (l1, l2) in jm.basis.eigenvalues {
        out.extend([l1, l2]);
    }
    Ok(out)
}
