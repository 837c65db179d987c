//! Photon sampling, maximum-likelihood fitting and empirical Cramér-Rao checks.

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::FixedPovmModel;
use crate::psf::SceneParams;

pub const GRID_POINTS: usize = 21;
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Fraction of boundary estimates above which the search box is flagged.
pub const BOUNDARY_WARN_FRACTION: f64 = 0.05;
const MAX_SIMPLEX_ITERS: usize = 5000;

/// Rectangle searched by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub theta1: (f64, f64),
    pub theta2: (f64, f64),
}

impl SearchBox {
    /// θ₁ ± `half_width`, θ₂ ∈ [lo, hi].
    pub fn around(truth: SceneParams, half_width: f64, lo: f64, hi: f64) -> Self {
        Self {
            theta1: (truth.theta1 - half_width, truth.theta1 + half_width),
            theta2: (lo, hi),
        }
    }

    pub fn contains(&self, t1: f64, t2: f64) -> bool {
        (self.theta1.0..=self.theta1.1).contains(&t1) && (self.theta2.0..=self.theta2.1).contains(&t2)
    }

    pub fn validate(&self, truth: SceneParams) -> Result<()> {
        let (a, b) = self.theta1;
        let (lo, hi) = self.theta2;
        if !(a < b) || !(lo < hi) || !(lo > 0.0) || !a.is_finite() || !b.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "search box θ₁ ∈ [{a}, {b}], θ₂ ∈ [{lo}, {hi}] is empty or has θ₂ ≤ 0"
            )));
        }
        if !self.contains(truth.theta1, truth.theta2) {
            return Err(Error::InvalidInput("search box does not contain the true scene".into()));
        }
        Ok(())
    }

    /// True if (t1, t2) lies within `frac` of the box size from an edge.
    fn near_edge(&self, t1: f64, t2: f64, frac: f64) -> bool {
        let e1 = frac * (self.theta1.1 - self.theta1.0);
        let e2 = frac * (self.theta2.1 - self.theta2.0);
        t1 - self.theta1.0 < e1 || self.theta1.1 - t1 < e1 || t2 - self.theta2.0 < e2 || self.theta2.1 - t2 < e2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub photons: u64,
    pub trials: usize,
    pub seed: u64,
    pub search_box: SearchBox,
}

impl TrialConfig {
    pub fn validate(&self, truth: SceneParams) -> Result<()> {
        if self.photons == 0 {
            return Err(Error::InvalidInput("photons per trial must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trial count must be >= 1".into()));
        }
        self.search_box.validate(truth)
    }
}

/// Generator for one trial: the seed keys the cipher, the trial index picks the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Multinomial draw of `n` outcomes by sequential binomial splitting.
pub fn sample_counts(probs: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain("cannot sample from negative probabilities".into()));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() || mass <= 0.0 {
            counts[i] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q)
            .map_err(|e| Error::Domain(format!("binomial draw: {e}")))?
            .sample(rng);
        counts[i] = k;
        left -= k;
        mass -= p;
    }
    Ok(counts)
}

/// Counts of `n` photons measured with `model` at `scene`, one trial's worth.
pub fn sample_outcomes(
    model: &FixedPovmModel,
    scene: SceneParams,
    n: u64,
    seed: u64,
    trial: u64,
) -> Result<Vec<u64>> {
    let probs = model.probs(scene.theta1, scene.theta2)?;
    sample_counts(&probs, n, &mut trial_rng(seed, trial))
}

/// Σₓ countsₓ ln pₓ, −∞ when an observed outcome has zero probability.
fn log_likelihood(counts: &[u64], probs: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        if c == 0 {
            continue;
        }
        if !(p > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll += c as f64 * p.ln();
    }
    ll
}

/// Maximum-likelihood estimate of (θ₁, θ₂) for a frozen measurement.
pub fn mle_fit(counts: &[u64], model: &FixedPovmModel, search_box: &SearchBox) -> Result<(f64, f64)> {
    mle_fit_with(counts, |t1, t2| model.probs(t1, t2), search_box)
}

/// Grid search followed by Nelder-Mead refinement, for any outcome model.
pub fn mle_fit_with<F>(counts: &[u64], probs: F, search_box: &SearchBox) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> Result<Vec<f64>>,
{
    if counts.iter().sum::<u64>() == 0 {
        return Err(Error::InvalidInput("no photons to fit".into()));
    }
    let objective = |t1: f64, t2: f64| -> f64 {
        if !search_box.contains(t1, t2) {
            return f64::INFINITY;
        }
        match probs(t1, t2) {
            Ok(p) => -log_likelihood(counts, &p),
            Err(_) => f64::INFINITY,
        }
    };

    let (a, b) = search_box.theta1;
    let (lo, hi) = search_box.theta2;
    let step = |x0: f64, x1: f64| (x1 - x0) / (GRID_POINTS - 1) as f64;
    let (h1, h2) = (step(a, b), step(lo, hi));
    let mut best = (f64::INFINITY, a, lo);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let (t1, t2) = (a + h1 * i as f64, lo + h2 * j as f64);
            let v = objective(t1, t2);
            if v < best.0 {
                best = (v, t1, t2);
            }
            if v.is_finite() {
                worst = worst.max(v);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Degenerate("likelihood vanishes over the whole search box".into()));
    }
    if worst - best.0 <= 1e-12 * best.0.abs().max(1.0) {
        return Err(Error::Degenerate("likelihood is flat over the search box".into()));
    }

    let start = [best.1, best.2];
    let (t1, t2) = nelder_mead(|x| objective(x[0], x[1]), start, [0.5 * h1, 0.5 * h2]);
    Ok((t1.clamp(a, b), t2.clamp(lo, hi)))
}

/// Derivative-free minimization in two dimensions.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], scale: [f64; 2]) -> (f64, f64) {
    let mut pts = [
        start,
        [start[0] + scale[0], start[1]],
        [start[0], start[1] + scale[1]],
    ];
    let mut vals = pts.map(&f);
    for _ in 0..MAX_SIMPLEX_ITERS {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        pts = idx.map(|i| pts[i]);
        vals = idx.map(|i| vals[i]);

        let spread = (1..3)
            .map(|k| (pts[k][0] - pts[0][0]).abs().max((pts[k][1] - pts[0][1]).abs()))
            .fold(0.0f64, f64::max);
        if spread < SIMPLEX_TOL {
            break;
        }

        let c = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
        let along = |t: f64| [c[0] + t * (pts[2][0] - c[0]), c[1] + t * (pts[2][1] - c[1])];
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(xe);
            (pts[2], vals[2]) = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < vals[1] {
            (pts[2], vals[2]) = (xr, fr);
        } else {
            let xc = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fc = f(xc);
            if fc < vals[2].min(fr) {
                (pts[2], vals[2]) = (xc, fc);
            } else {
                for k in 1..3 {
                    pts[k] = [(pts[0][0] + pts[k][0]) / 2.0, (pts[0][1] + pts[k][1]) / 2.0];
                    vals[k] = f(pts[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap_or(0);
    (pts[best][0], pts[best][1])
}

/// Runs `cfg.trials` independent sample-and-fit trials at `truth`.
pub fn run_trials(model: &FixedPovmModel, truth: SceneParams, cfg: &TrialConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate(truth)?;
    let probs = model.probs(truth.theta1, truth.theta2)?;
    let one = |trial: usize| -> Result<(f64, f64)> {
        let counts = sample_counts(&probs, cfg.photons, &mut trial_rng(cfg.seed, trial as u64))?;
        mle_fit(&counts, model, &cfg.search_box)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.trials).map(one).collect()
    }
}

/// Empirical covariance of the estimates against the Cramér-Rao bound (N F)⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub estimates: Vec<(f64, f64)>,
    pub mean: (f64, f64),
    pub empirical_cov: Matrix2<f64>,
    pub crb: Matrix2<f64>,
    /// var(θ̂ⱼ) / crbⱼⱼ.
    pub ratio: [f64; 2],
    pub boundary_fraction: f64,
    pub boundary_warning: bool,
}

/// Eigenvalue ratio below which the information matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// (N F)⁻¹, with +∞ on the diagonal for parameters that lie along an uninformative direction.
pub fn crb_matrix(nf: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    if !nf.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("Fisher information is not finite".into()));
    }
    let eig = nf.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return Ok(Matrix2::from_element(f64::INFINITY));
    }
    let mut crb = Matrix2::zeros();
    let mut blind = [false; 2];
    for k in 0..2 {
        let v = eig.eigenvectors.column(k);
        if eig.eigenvalues[k] <= RANK_TOL * top {
            for (i, b) in blind.iter_mut().enumerate() {
                *b |= v[i].abs() > 1e-6;
            }
        } else {
            crb += v * v.transpose() / eig.eigenvalues[k];
        }
    }
    for i in 0..2 {
        if blind[i] {
            crb[(i, i)] = f64::INFINITY;
        }
    }
    Ok(crb)
}

pub fn crb_comparison(
    estimates: Vec<(f64, f64)>,
    fim: &Matrix2<f64>,
    photons: u64,
    search_box: &SearchBox,
) -> Result<TrialResult> {
    let t = estimates.len();
    if t < 50 {
        return Err(Error::InvalidInput(format!("need at least 50 trials, got {t}")));
    }
    let crb = crb_matrix(&(fim * photons as f64))?;
    let tf = t as f64;
    let m1 = estimates.iter().map(|e| e.0).sum::<f64>() / tf;
    let m2 = estimates.iter().map(|e| e.1).sum::<f64>() / tf;
    let mut cov = Matrix2::zeros();
    for &(a, b) in &estimates {
        let d = [a - m1, b - m2];
        for i in 0..2 {
            for j in 0..2 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    cov /= tf - 1.0;
    let edge = estimates
        .iter()
        .filter(|(a, b)| search_box.near_edge(*a, *b, 1e-3))
        .count() as f64
        / tf;
    Ok(TrialResult {
        mean: (m1, m2),
        ratio: [0, 1].map(|i| if crb[(i, i)].is_finite() { cov[(i, i)] / crb[(i, i)] } else { 0.0 }),
        empirical_cov: cov,
        crb,
        boundary_fraction: edge,
        boundary_warning: edge > BOUNDARY_WARN_FRACTION,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::Povm;
    use crate::model::build_model;
    use crate::psf::PsfSpec;
    use crate::sld::joint_measurement;

    fn truth() -> SceneParams {
        SceneParams::new(0.0, 2.0).unwrap()
    }

    fn joint_model() -> FixedPovmModel {
        let psf = PsfSpec::gaussian(1.0).unwrap();
        let m = build_model(&psf, truth()).unwrap();
        let jm = joint_measurement(&m).unwrap();
        FixedPovmModel::new(&Povm::Projective { basis: jm.basis.vectors }, &psf, truth()).unwrap()
    }

    #[test]
    fn zero_photons_give_zero_counts() {
        let c = sample_counts(&[0.2, 0.3, 0.5], 0, &mut trial_rng(1, 0)).unwrap();
        assert_eq!(c, vec![0, 0, 0]);
    }

    #[test]
    fn sampling_is_deterministic_and_stream_separated() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let a = sample_counts(&p, 1000, &mut trial_rng(7, 3)).unwrap();
        let b = sample_counts(&p, 1000, &mut trial_rng(7, 3)).unwrap();
        let c = sample_counts(&p, 1000, &mut trial_rng(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn large_draw_within_binomial_error() {
        let model = joint_model();
        let p = model.probs(0.0, 2.0).unwrap();
        let n = 1_000_000u64;
        let c = sample_outcomes(&model, truth(), n, 42, 0).unwrap();
        for (k, q) in c.iter().zip(&p) {
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((*k as f64 / n as f64 - q).abs() <= 4.0 * se + 1e-15);
        }
        assert_eq!(c[4], 0);
    }

    #[test]
    fn noiseless_counts_recover_truth() {
        let model = joint_model();
        let p = model.probs(0.0, 2.0).unwrap();
        let n = 1e9;
        let counts: Vec<u64> = p.iter().map(|q| (q * n).round() as u64).collect();
        let bx = SearchBox::around(truth(), 0.5, 1.5, 2.5);
        let (a, b) = mle_fit(&counts, &model, &bx).unwrap();
        assert!(a.abs() < 1e-3 && (b - 2.0).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn flat_likelihood_is_degenerate() {
        let bx = SearchBox::around(truth(), 0.5, 1.5, 2.5);
        let r = mle_fit_with(&[10], |_, _| Ok(vec![1.0]), &bx);
        assert!(matches!(r, Err(Error::Degenerate(_))));
        assert!(matches!(mle_fit_with(&[0], |_, _| Ok(vec![1.0]), &bx), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn search_box_validation() {
        assert!(SearchBox::around(truth(), 0.5, 2.1, 2.5).validate(truth()).is_err());
        assert!(SearchBox::around(truth(), 0.5, 0.0, 2.5).validate(truth()).is_err());
        let cfg = TrialConfig {
            photons: 10,
            trials: 0,
            seed: 1,
            search_box: SearchBox::around(truth(), 0.5, 1.5, 2.5),
        };
        assert!(cfg.validate(truth()).is_err());
    }

    #[test]
    fn crb_comparison_requires_fifty_trials() {
        let bx = SearchBox::around(truth(), 0.5, 1.5, 2.5);
        let r = crb_comparison(vec![(0.0, 2.0); 10], &Matrix2::identity(), 100, &bx);
        assert!(r.is_err());
        let r = crb_comparison(vec![(0.0, 2.0); 60], &Matrix2::identity(), 100, &bx).unwrap();
        assert_eq!(r.empirical_cov, Matrix2::zeros());
        assert!(!r.boundary_warning);
    }

    #[test]
    fn rank_deficient_fim_gives_infinite_bound() {
        let crb = crb_matrix(&Matrix2::new(0.0, 0.0, 0.0, 4.0)).unwrap();
        assert!(crb[(0, 0)].is_infinite());
        assert!((crb[(1, 1)] - 0.25).abs() < 1e-15);
        let bx = SearchBox::around(truth(), 0.5, 1.5, 2.5);
        let est: Vec<_> = (0..60).map(|i| (0.01 * (i % 3) as f64, 2.0 + 0.01 * (i % 5) as f64)).collect();
        let r = crb_comparison(est, &Matrix2::new(0.0, 0.0, 0.0, 1.0), 100, &bx).unwrap();
        assert_eq!(r.ratio[0], 0.0);
        assert!(r.ratio[1] > 0.0);
        let crb = crb_matrix(&Matrix2::new(2.0, 0.0, 0.0, 4.0)).unwrap();
        assert!((crb - Matrix2::new(0.5, 0.0, 0.0, 0.25)).amax() < 1e-15);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, y) = nelder_mead(|p| (p[0] - 0.3).powi(2) + 4.0 * (p[1] + 1.2).powi(2), [0.0, 0.0], [0.1, 0.1]);
        assert!((x - 0.3).abs() < 1e-6 && (y + 1.2).abs() < 1e-6);
    }
}
