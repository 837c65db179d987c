//! The four subcommands. Each returns a table plus diagnostics for stderr.

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::Serialize;
use twosource::error::Error;
use twosource::measurement::{
    classical_fim, outcome_distribution, projective_limit_terms, regret_report, FixedPovmModel,
    MeasurementKind, Povm,
};
use twosource::model::{build_model, qfi_matrix, QuantumModel};
use twosource::montecarlo::{crb_comparison, run_trials};
use twosource::psf::{compute_overlaps, compute_overlaps_quadrature, SceneParams};
use twosource::sld::{
    closed_form_gauge, closed_form_trace, decompose_blocks, joint_measurement, joint_measurement_with,
    necessary_condition_residual, solve_gauge_least_norm, BlockDecomposition, GaugePair, JointBasis,
};

use crate::config::Resolved;
use crate::error::CliError;
use crate::table::{Cell, Table};

pub const OVERLAP_COLUMNS: [&str; 8] =
    ["theta2", "delta", "kappa", "gamma", "beta", "eta3", "eta4", "beta_quadrature_diff"];
pub const REGRET_COLUMNS: [&str; 11] = [
    "theta2", "measurement", "F11", "F22", "F12", "QFI11", "QFI22", "c", "delta1", "delta2", "irtr_slack",
];
pub const GAUGE_COLUMNS: [&str; 23] = [
    "theta2", "solver", "status", "k1_v0", "k1_v1", "k1_v2", "k1_v3", "k2_v0", "k2_v1", "k2_v2", "k2_v3",
    "c0_residual", "c1_residual", "c2_residual", "commutator_norm", "lambda1_1", "lambda2_1", "lambda1_2",
    "lambda2_2", "lambda1_3", "lambda2_3", "lambda1_4", "lambda2_4",
];
pub const SIMULATE_COLUMNS: [&str; 10] =
    ["measurement", "N", "trials", "var1", "var2", "crb1", "crb2", "ratio1", "ratio2", "seed"];

/// Command result: CSV table plus lines for the diagnostic stream.
#[derive(Debug, Clone)]
pub struct Output {
    pub table: Table,
    pub messages: Vec<String>,
}

/// Evaluates `f` on every scene in parallel and concatenates rows in scene order.
fn per_scene<F>(cfg: &Resolved, header: &[&'static str], f: F) -> Result<Output, CliError>
where
    F: Fn(SceneParams) -> Result<(Vec<Vec<Cell>>, Vec<String>), CliError> + Sync,
{
    let parts: Vec<_> = cfg.scenes.par_iter().map(|s| f(*s)).collect::<Result<_, _>>()?;
    let mut table = Table::new(header.to_vec());
    let mut messages = Vec::new();
    for (rows, msgs) in parts {
        rows.into_iter().for_each(|r| table.push(r));
        messages.extend(msgs);
    }
    Ok(Output { table, messages })
}

pub fn overlaps(cfg: &Resolved) -> Result<Output, CliError> {
    let w = cfg.psf.width();
    per_scene(cfg, &OVERLAP_COLUMNS, |s| {
        let o = compute_overlaps(&cfg.psf, s.theta2)?;
        let q = compute_overlaps_quadrature(&cfg.psf, s.theta2, &cfg.quadrature)?;
        let row = vec![
            (s.theta2 / w).into(),
            o.delta.into(),
            (o.kappa * w * w).into(),
            (o.gamma * w).into(),
            (o.beta * w * w).into(),
            (o.eta3 * w).into(),
            (o.eta4 * w).into(),
            ((o.beta - q.beta) * w * w).into(),
        ];
        Ok((vec![row], Vec::new()))
    })
}

/// A catalogue measurement with its classical FIM at the model's scene.
fn measurement_fim(
    cfg: &Resolved,
    kind: MeasurementKind,
    model: &QuantumModel,
) -> Result<Option<(Povm, Matrix2<f64>)>, Error> {
    match kind {
        MeasurementKind::Joint => match joint_measurement(model) {
            Ok(jm) => {
                let povm = Povm::Projective { basis: jm.basis.vectors };
                let terms = projective_limit_terms(&jm.basis.vectors, &model.rho, &jm.l1, &jm.l2);
                let fim = classical_fim(&outcome_distribution(&povm, model)?, Some(&terms));
                Ok(Some((povm, fim)))
            }
            Err(Error::NoSolution(_) | Error::GaugeInvalid { .. }) => Ok(None),
            Err(e) => Err(e),
        },
        _ => {
            let povm = cfg.povm(kind, model.scene);
            let fim = classical_fim(&outcome_distribution(&povm, model)?, None);
            Ok(Some((povm, fim)))
        }
    }
}

fn no_joint_warning(s: SceneParams, w: f64) -> String {
    format!(
        "warning: theta2 = {:.6}: SLDs admit no commuting gauge, joint row skipped",
        s.theta2 / w
    )
}

pub fn regrets(cfg: &Resolved) -> Result<Output, CliError> {
    let w = cfg.psf.width();
    per_scene(cfg, &REGRET_COLUMNS, |s| {
        let model = build_model(&cfg.psf, s)?;
        let q = qfi_matrix(&model);
        let mut rows = Vec::new();
        let mut msgs = Vec::new();
        for &kind in &cfg.measurements {
            let Some((_, fim)) = measurement_fim(cfg, kind, &model)? else {
                msgs.push(no_joint_warning(s, w));
                continue;
            };
            let r = regret_report(&fim, &q)?;
            let w2 = w * w;
            rows.push(vec![
                (s.theta2 / w).into(),
                kind.name().into(),
                (r.fim[(0, 0)] * w2).into(),
                (r.fim[(1, 1)] * w2).into(),
                (r.fim[(0, 1)] * w2).into(),
                (r.qfi[(0, 0)] * w2).into(),
                (r.qfi[(1, 1)] * w2).into(),
                r.c.into(),
                r.delta1.into(),
                r.delta2.into(),
                r.irtr_slack.into(),
            ]);
        }
        Ok((rows, msgs))
    })
}

/// Per-scene record written by `gauge --dump`.
#[derive(Debug, Serialize)]
pub struct GaugeDump {
    pub theta2: f64,
    pub blocks: [BlockDecomposition; 2],
    pub c0_residual: f64,
    pub solvers: Vec<SolverDump>,
}

#[derive(Debug, Serialize)]
pub struct SolverDump {
    pub solver: &'static str,
    pub status: String,
    pub gauge: Option<GaugePair>,
    pub basis: Option<JointBasis>,
    pub error: Option<String>,
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::NoSolution(_) | Error::GaugeInvalid { .. } => "no_solution",
        Error::NotCommuting { .. } => "not_commuting",
        Error::DegeneracyUnresolved { .. } => "degenerate",
        _ => "error",
    }
}

pub fn gauge(cfg: &Resolved) -> Result<(Output, Vec<GaugeDump>), CliError> {
    let w = cfg.psf.width();
    let w2 = w * w;
    let results: Vec<_> = cfg
        .scenes
        .par_iter()
        .map(|s| -> Result<_, CliError> {
            let model = build_model(&cfg.psf, *s)?;
            let d1 = decompose_blocks(&model.l1)?;
            let d2 = decompose_blocks(&model.l2)?;
            let c0 = necessary_condition_residual(&d1, &d2);
            let attempts = [
                ("closed_form", closed_form_gauge(&model.overlaps)),
                (
                    "least_norm",
                    solve_gauge_least_norm(&d1, &d2, closed_form_trace(&model.overlaps)),
                ),
            ];
            let mut rows = Vec::new();
            let mut msgs = Vec::new();
            let mut solvers = Vec::new();
            for (name, attempt) in attempts {
                let outcome = attempt.and_then(|g| joint_measurement_with(&d1, &d2, g).map(|jm| (g, jm.basis)));
                let mut row: Vec<Cell> = vec![(s.theta2 / w).into(), name.into()];
                match &outcome {
                    Ok((g, basis)) => {
                        let (p1, p2) = g.pauli();
                        let r = &g.residuals;
                        row.push("ok".into());
                        row.extend(p1.0.iter().chain(&p2.0).map(|v| Cell::Num(v * w)));
                        row.extend([r.c0, r.c1_max(), r.c2_max(), r.commutator_norm].map(|v| Cell::Num(v * w2)));
                        for (l1, l2) in basis.eigenvalues {
                            row.extend([Cell::Num(l1 * w), Cell::Num(l2 * w)]);
                        }
                        msgs.push(format!(
                            "theta2 = {:.6} {name}: K1 = {:?}, K2 = {:?}, commutator {:.3e}",
                            s.theta2 / w,
                            p1.0.map(|v| v * w),
                            p2.0.map(|v| v * w),
                            r.commutator_norm * w2
                        ));
                    }
                    Err(e) => {
                        row.push(status_of(e).into());
                        row.extend(std::iter::repeat_n(Cell::Num(f64::NAN), 8));
                        row.push(Cell::Num(c0 * w2));
                        row.extend(std::iter::repeat_n(Cell::Num(f64::NAN), 11));
                        msgs.push(format!("theta2 = {:.6} {name}: {e}", s.theta2 / w));
                    }
                }
                rows.push(row);
                solvers.push(match outcome {
                    Ok((g, b)) => SolverDump { solver: name, status: "ok".into(), gauge: Some(g), basis: Some(b), error: None },
                    Err(e) => SolverDump {
                        solver: name,
                        status: status_of(&e).into(),
                        gauge: None,
                        basis: None,
                        error: Some(e.to_string()),
                    },
                });
            }
            let dump = GaugeDump {
                theta2: s.theta2,
                blocks: [d1, d2],
                c0_residual: c0,
                solvers,
            };
            Ok((rows, msgs, dump))
        })
        .collect::<Result<_, _>>()?;

    let mut table = Table::new(GAUGE_COLUMNS.to_vec());
    let mut messages = Vec::new();
    let mut dumps = Vec::new();
    for (rows, msgs, dump) in results {
        rows.into_iter().for_each(|r| table.push(r));
        messages.extend(msgs);
        dumps.push(dump);
    }
    Ok((Output { table, messages }, dumps))
}

pub fn simulate(cfg: &Resolved) -> Result<Output, CliError> {
    if cfg.sweep || cfg.scenes.len() != 1 {
        return Err(CliError::Config("simulate runs at a single [scene], not a sweep".into()));
    }
    let scene = cfg.scenes[0];
    let trial_cfg = cfg.trial_config(scene)?;
    let w = cfg.psf.width();
    let w2 = w * w;
    let model = build_model(&cfg.psf, scene)?;
    let mut table = Table::new(SIMULATE_COLUMNS.to_vec());
    let mut messages = Vec::new();
    for &kind in &cfg.measurements {
        let Some((povm, fim)) = measurement_fim(cfg, kind, &model)? else {
            messages.push(no_joint_warning(scene, w));
            continue;
        };
        let fixed = FixedPovmModel::new(&povm, &cfg.psf, scene)?;
        let estimates = run_trials(&fixed, scene, &trial_cfg)?;
        let res = crb_comparison(estimates, &fim, trial_cfg.photons, &trial_cfg.search_box)?;
        if res.crb.diagonal().iter().any(|v| v.is_infinite()) {
            messages.push(format!(
                "warning: {}: Fisher information is rank deficient, unconstrained parameters get an infinite bound",
                kind.name()
            ));
        }
        if res.boundary_warning {
            messages.push(format!(
                "warning: {}: {:.1}% of estimates sit on the search-box boundary",
                kind.name(),
                100.0 * res.boundary_fraction
            ));
        }
        table.push(vec![
            kind.name().into(),
            trial_cfg.photons.into(),
            (trial_cfg.trials as u64).into(),
            (res.empirical_cov[(0, 0)] / w2).into(),
            (res.empirical_cov[(1, 1)] / w2).into(),
            (res.crb[(0, 0)] / w2).into(),
            (res.crb[(1, 1)] / w2).into(),
            res.ratio[0].into(),
            res.ratio[1].into(),
            trial_cfg.seed.into(),
        ]);
    }
    Ok(Output { table, messages })
}
