//! Run configuration, read from TOML.
//!
//! All lengths are in the same physical unit as the PSF width.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use twosource::measurement::{MeasurementKind, Povm, DEFAULT_HALF_RANGE, DEFAULT_PIXEL_WIDTH, DEFAULT_Q_MAX};
use twosource::montecarlo::{SearchBox, TrialConfig};
use twosource::psf::{PsfSpec, SceneParams, TabulatedPsf};
use twosource::quadrature::QuadratureConfig;

use crate::error::CliError;

/// Sweep bounds must lie strictly inside (0.05σ, 10σ).
pub const SWEEP_MIN: f64 = 0.05;
pub const SWEEP_MAX: f64 = 10.0;
/// Trials needed for a meaningful covariance estimate.
pub const MIN_TRIALS: usize = 50;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default = "all_measurements")]
    pub measurements: Vec<MeasurementKind>,
    pub psf: PsfConfig,
    pub scene: Option<SceneConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub direct: DirectConfig,
    #[serde(default)]
    pub spade: SpadeConfig,
    pub montecarlo: Option<MonteCarloConfig>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

fn all_measurements() -> Vec<MeasurementKind> {
    vec![MeasurementKind::Direct, MeasurementKind::Spade, MeasurementKind::Joint]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfConfig {
    pub sigma: Option<f64>,
    /// Two-column text file (x, ψ(x)), relative to the config file.
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default)]
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub theta1: f64,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectConfig {
    pub pixel_width: Option<f64>,
    pub half_range: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpadeConfig {
    /// Mode origin relative to the centroid.
    #[serde(default)]
    pub alignment_offset: f64,
    #[serde(default = "default_q_max")]
    pub q_max: usize,
}

impl Default for SpadeConfig {
    fn default() -> Self {
        Self {
            alignment_offset: 0.0,
            q_max: DEFAULT_Q_MAX,
        }
    }
}

fn default_q_max() -> usize {
    DEFAULT_Q_MAX
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub photons: u64,
    pub trials: usize,
    /// Search box half-width around the true centroid (default 0.5σ).
    pub theta1_half_width: Option<f64>,
    /// Search interval for the separation (default θ₂ ± 0.5σ, floored above 0).
    pub theta2_bounds: Option<[f64; 2]>,
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub psf: PsfSpec,
    pub scenes: Vec<SceneParams>,
    pub sweep: bool,
    pub measurements: Vec<MeasurementKind>,
    pub direct: (f64, f64),
    pub spade: SpadeConfig,
    pub montecarlo: Option<MonteCarloConfig>,
    pub quadrature: QuadratureConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text, &path.display().to_string())?, base))
    }

    /// Validates every section; `base` resolves relative table paths.
    pub fn resolve(&self, base: &Path) -> Result<Resolved, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let psf = match (&self.psf.sigma, &self.psf.table) {
            (Some(s), None) => PsfSpec::gaussian(*s).map_err(|e| CliError::Config(e.to_string()))?,
            (None, Some(t)) => {
                let path = base.join(t);
                PsfSpec::Tabulated(TabulatedPsf::from_file(&path).map_err(|e| {
                    CliError::Config(format!("psf table {}: {e}", path.display()))
                })?)
            }
            _ => return bad("[psf] needs exactly one of `sigma` or `table`".into()),
        };
        let w = psf.width();

        let (scenes, sweep) = match (&self.scene, &self.sweep) {
            (Some(s), None) => {
                let scene = SceneParams::new(s.theta1, s.theta2).map_err(|e| CliError::Config(format!("[scene]: {e}")))?;
                (vec![scene], false)
            }
            (None, Some(s)) => {
                if s.steps < 2 {
                    return bad(format!("[sweep] steps must be >= 2, got {}", s.steps));
                }
                let inside = |v: f64| v > SWEEP_MIN * w && v < SWEEP_MAX * w;
                if !inside(s.from) || !inside(s.to) || !(s.from < s.to) {
                    return bad(format!(
                        "[sweep] bounds {}..{} must satisfy {} < from < to < {}",
                        s.from,
                        s.to,
                        SWEEP_MIN * w,
                        SWEEP_MAX * w
                    ));
                }
                let step = (s.to - s.from) / (s.steps - 1) as f64;
                let scenes = (0..s.steps)
                    .map(|i| {
                        let t2 = if i + 1 == s.steps { s.to } else { s.from + step * i as f64 };
                        SceneParams::new(s.theta1, t2).map_err(|e| CliError::Config(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (scenes, true)
            }
            _ => return bad("exactly one of [scene] or [sweep] is required".into()),
        };

        if self.measurements.is_empty() {
            return bad("`measurements` must not be empty".into());
        }
        let direct = (
            self.direct.pixel_width.unwrap_or(DEFAULT_PIXEL_WIDTH * w),
            self.direct.half_range.unwrap_or(DEFAULT_HALF_RANGE * w),
        );
        self.quadrature
            .validate()
            .map_err(|e| CliError::Config(format!("[quadrature]: {e}")))?;

        if let Some(mc) = &self.montecarlo {
            if mc.photons == 0 {
                return bad("[montecarlo] photons must be >= 1".into());
            }
            if mc.trials < MIN_TRIALS {
                return bad(format!("[montecarlo] trials must be >= {MIN_TRIALS}, got {}", mc.trials));
            }
        }

        let resolved = Resolved {
            psf,
            scenes,
            sweep,
            measurements: self.measurements.clone(),
            direct,
            spade: self.spade.clone(),
            montecarlo: self.montecarlo.clone(),
            quadrature: self.quadrature,
            seed: self.seed.unwrap_or(0),
            output: self.output.clone(),
        };
        // catch bad measurement parameters before any work is done
        for s in &resolved.scenes {
            for kind in &resolved.measurements {
                if *kind != MeasurementKind::Joint {
                    resolved
                        .povm(*kind, *s)
                        .validate(&resolved.psf, *s)
                        .map_err(|e| CliError::Config(format!("[{}]: {e}", kind.name())))?;
                }
            }
        }
        Ok(resolved)
    }
}

impl Resolved {
    /// The measurement of `kind` for `scene`; joint measurements are built elsewhere.
    pub fn povm(&self, kind: MeasurementKind, scene: SceneParams) -> Povm {
        match kind {
            MeasurementKind::Direct => Povm::DirectImaging {
                pixel_width: self.direct.0,
                half_range: self.direct.1,
            },
            MeasurementKind::Spade => Povm::Spade {
                alignment: scene.theta1 + self.spade.alignment_offset,
                q_max: self.spade.q_max,
            },
            MeasurementKind::Joint => unreachable!("joint measurement depends on the gauge"),
        }
    }

    pub fn trial_config(&self, scene: SceneParams) -> Result<TrialConfig, CliError> {
        let mc = self
            .montecarlo
            .as_ref()
            .ok_or_else(|| CliError::Config("simulate needs a [montecarlo] section".into()))?;
        let w = self.psf.width();
        let half = mc.theta1_half_width.unwrap_or(0.5 * w);
        let [lo, hi] = mc
            .theta2_bounds
            .unwrap_or([(scene.theta2 - 0.5 * w).max(0.05 * w), scene.theta2 + 0.5 * w]);
        let cfg = TrialConfig {
            photons: mc.photons,
            trials: mc.trials,
            seed: self.seed,
            search_box: SearchBox::around(scene, half, lo, hi),
        };
        cfg.validate(scene).map_err(|e| CliError::Config(format!("[montecarlo]: {e}")))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<Resolved, CliError> {
        RunConfig::parse(text, "test")?.resolve(Path::new("."))
    }

    #[test]
    fn minimal_scene() {
        let r = resolve("[psf]\nsigma = 1.0\n[scene]\ntheta2 = 2.0\n").unwrap();
        assert_eq!(r.scenes.len(), 1);
        assert_eq!(r.measurements.len(), 3);
        assert_eq!(r.direct, (0.005, 8.0));
        assert_eq!(r.seed, 0);
    }

    #[test]
    fn sweep_points() {
        let r = resolve("[psf]\nsigma = 1.0\n[sweep]\nfrom = 0.5\nto = 4.0\nsteps = 36\n").unwrap();
        assert_eq!(r.scenes.len(), 36);
        assert_eq!(r.scenes[35].theta2, 4.0);
        assert!((r.scenes[15].theta2 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[psf]\nsigma = 1.0\n[sweep]\nfrom = 0.01\nto = 4.0\nsteps = 5\n",
            "[psf]\nsigma = 1.0\n[sweep]\nfrom = 0.5\nto = 12.0\nsteps = 5\n",
            "[psf]\nsigma = 1.0\n[sweep]\nfrom = 0.5\nto = 4.0\nsteps = 1\n",
            "[psf]\nsigma = -1.0\n[scene]\ntheta2 = 2.0\n",
            "[psf]\nsigma = 1.0\n",
            "[psf]\nsigma = 1.0\n[scene]\ntheta2 = 2.0\nwidth = 3\n",
            "[psf]\nsigma = 1.0\n[scene]\ntheta2 = 2.0\n[montecarlo]\nphotons = 10\ntrials = 0\n",
            "[psf]\nsigma = 1.0\n[scene]\ntheta2 = 2.0\n[spade]\nalignment_offset = 5.0\n",
            "[psf]\nsigma = 1.0\n[scene]\ntheta2 = 2.0\n[direct]\nhalf_range = 2.0\n",
        ] {
            assert!(matches!(resolve(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let Err(CliError::Config(msg)) = RunConfig::parse("[psf]\nsigma = 1.0\n[scene]\ntheta2 = \n", "cfg.toml") else {
            panic!("expected a parse error");
        };
        assert!(msg.contains("line 4"), "{msg}");
    }
}
