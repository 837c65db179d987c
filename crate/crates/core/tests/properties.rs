use nalgebra::{Matrix2, Matrix4};
use proptest::prelude::*;
use twosource::measurement::{
    classical_fim, outcome_distribution, projective_limit_terms, regret_report, Povm,
};
use twosource::model::{build_model, jordan, max_abs, qfi_from, qfi_matrix, QuantumModel};
use twosource::psf::{compute_overlaps, compute_overlaps_quadrature, PsfSpec, SceneParams};
use twosource::quadrature::QuadratureConfig;
use twosource::sld::{assemble_sld, decompose_blocks};

fn model(theta1: f64, theta2: f64) -> QuantumModel {
    build_model(&PsfSpec::gaussian(1.0).unwrap(), SceneParams::new(theta1, theta2).unwrap()).unwrap()
}

fn sym(a: f64, b: f64, c: f64) -> Matrix2<f64> {
    Matrix2::new(a, b, b, c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gauge_freedom_preserves_sld_equation_and_qfi(
        theta2 in 0.2f64..6.0,
        k in prop::array::uniform6(-5.0f64..5.0),
    ) {
        let m = model(0.0, theta2);
        let l1 = assemble_sld(&decompose_blocks(&m.l1).unwrap(), &sym(k[0], k[1], k[2])).unwrap();
        let l2 = assemble_sld(&decompose_blocks(&m.l2).unwrap(), &sym(k[3], k[4], k[5])).unwrap();
        prop_assert!(max_abs(&(m.drho1 - jordan(&l1, &m.rho))) <= 1e-12);
        prop_assert!(max_abs(&(m.drho2 - jordan(&l2, &m.rho))) <= 1e-12);
        let q = qfi_from(&m.rho, &m.l1, &m.l2);
        prop_assert!(max_abs(&(q - qfi_from(&m.rho, &l1, &l2))) <= 1e-12);
    }

    #[test]
    fn incompatibility_closed_form_agrees(theta2 in 0.1f64..8.0) {
        let r = qfi_matrix(&model(0.0, theta2));
        prop_assert!(r.c_discrepancy <= 1e-8, "c = {}, closed form {}", r.c, r.c_closed_form);
        prop_assert!((0.0..=1.0).contains(&r.c));
    }

    #[test]
    fn overlap_closed_forms_match_quadrature(theta2 in 0.1f64..8.0) {
        let psf = PsfSpec::gaussian(1.0).unwrap();
        let a = compute_overlaps(&psf, theta2).unwrap();
        let b = compute_overlaps_quadrature(&psf, theta2, &QuadratureConfig::default()).unwrap();
        for (x, y) in [(a.delta, b.delta), (a.kappa, b.kappa), (a.gamma, b.gamma), (a.beta, b.beta)] {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn catalogue_respects_quantum_bound_and_irtr(
        theta1 in -1.0f64..1.0,
        theta2 in 0.3f64..6.0,
        offset in -1.0f64..1.0,
        raw in prop::array::uniform16(-1.0f64..1.0),
    ) {
        let m = model(theta1, theta2);
        let q = qfi_matrix(&m);
        let random_basis = Matrix4::from_row_slice(&raw).qr().q();
        let povms = [
            Povm::DirectImaging { pixel_width: 0.05, half_range: 8.0 },
            Povm::Spade { alignment: theta1 + offset, q_max: 20 },
            Povm::Projective { basis: random_basis },
        ];
        for povm in &povms {
            let d = outcome_distribution(povm, &m).unwrap();
            d.check(1e-10).unwrap();
            let terms = match povm {
                Povm::Projective { basis } => Some(projective_limit_terms(basis, &m.rho, &m.l1, &m.l2)),
                _ => None,
            };
            let f = classical_fim(&d, terms.as_deref());
            let r = regret_report(&f, &q).unwrap();
            prop_assert!(r.psd_gap >= -1e-8, "{povm:?}: gap {}", r.psd_gap);
            prop_assert!(r.irtr_slack >= -1e-10, "{povm:?}: slack {}", r.irtr_slack);
        }
    }
}
