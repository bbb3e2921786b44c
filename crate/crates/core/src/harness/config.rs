//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::View;
use crate::erm::SolverConfig;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::synth::{derive_seed, radius, Boundedness, CanonicalPairModel, LabelKind, LabelModel};

/// Seed path component of the planted model directions.
pub const MODEL_STREAM: u64 = 0x006d_6f64_656c;
/// Seed path component of a random label direction.
pub const LABEL_STREAM: u64 = 0x006c_6162_656c;
/// Seed path component of the shared held-out test pool.
pub const TEST_POOL_STREAM: u64 = 0x7465_7374;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Plain,
    Distill,
    LupiTcca,
    LupiExpectation,
    Coreg,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Plain => "plain",
            PipelineKind::Distill => "distill",
            PipelineKind::LupiTcca => "lupi-tcca",
            PipelineKind::LupiExpectation => "lupi-expectation",
            PipelineKind::Coreg => "coreg",
        }
    }

    pub fn uses_teacher(self) -> bool {
        matches!(
            self,
            PipelineKind::Distill | PipelineKind::LupiTcca | PipelineKind::LupiExpectation
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directions {
    /// Haar-random canonical directions.
    #[default]
    Random,
    /// Canonical directions along the coordinate axes.
    Axis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_z: usize,
    /// Canonical correlations, descending; their count is the rank.
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub directions: Directions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsConfig {
    pub view: View,
    #[serde(default = "default_label_kind")]
    pub kind: LabelKind,
    #[serde(default)]
    pub noise_std: f64,
    /// Explicit planted weights.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Norm of a random planted direction; exclusive with `weights`.
    #[serde(default)]
    pub norm: Option<f64>,
}

fn default_label_kind() -> LabelKind {
    LabelKind::Regression
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub b_w: f64,
    pub b_v: f64,
}

/// How the teacher distance `S` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SMode {
    /// From the agreement bounds, evaluated with the planted risks.
    #[default]
    Theory,
    /// Measured distance between the teacher-implied center and the planted optimum.
    Oracle,
    Explicit(f64),
}

/// Source of the optimal loss fed to the weight formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LStarMode {
    #[default]
    Planted,
    /// Empirical training loss of the teacher (or of per-view ERM for co-regularization).
    Plugin,
}

/// How agreement terms and the CCA basis are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementMode {
    /// Exact population moments of the planted model.
    #[default]
    Population,
    /// An unlabeled pool of this many paired samples per cell.
    Pool(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Tikhonov weight of the probed regularized ERM.
    pub gamma: f64,
    /// Replace-one trials per seed.
    pub replacements: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            replacements: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: PipelineKind,
    pub loss: LossKind,
    pub model: ModelConfig,
    pub labels: LabelsConfig,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub bounds: Bounds,
    #[serde(default)]
    pub s_mode: SMode,
    #[serde(default)]
    pub l_star_mode: LStarMode,
    #[serde(default)]
    pub boundedness: Boundedness,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    /// Labeled samples used to train the teacher, disjoint from the student's.
    #[serde(default = "default_teacher_n")]
    pub teacher_n: usize,
    #[serde(default)]
    pub agreement: AgreementMode,
    /// Held-out pool size when the risk has no closed form.
    #[serde(default = "default_test_pool_size")]
    pub test_pool_size: usize,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Wall time is nondeterministic, so it is written as 0 unless enabled.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Accepted slope interval `[low, high]` for `--assert`.
    #[serde(default)]
    pub slope_band: Option<[f64; 2]>,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_teacher_n() -> usize {
    4096
}

fn default_test_pool_size() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_grid.is_empty() {
            return fail("n_grid must not be empty".into());
        }
        if self.n_grid[0] == 0 {
            return fail("n_grid entries must be positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return fail("n_grid must be strictly ascending".into());
        }
        if self.seeds == 0 {
            return fail("seeds must be at least 1".into());
        }
        if !(self.bounds.b_w > 0.0 && self.bounds.b_v > 0.0) {
            return fail("bounds b_w and b_v must be positive".into());
        }
        if let SMode::Explicit(s) = self.s_mode {
            if !(s > 0.0) {
                return fail(format!("explicit S must be positive, got {s}"));
            }
        }
        if self.labels.view == View::Joint {
            return fail("labels.view must be \"x\" or \"z\"".into());
        }
        match (&self.labels.weights, self.labels.norm) {
            (Some(w), None) => {
                let d = self.label_dim();
                if w.len() != d {
                    return fail(format!(
                        "labels.weights has {} entries, expected {d}",
                        w.len()
                    ));
                }
            }
            (None, Some(norm)) if norm >= 0.0 => {}
            _ => {
                return fail(
                    "labels needs exactly one of \"weights\" or a nonnegative \"norm\"".into(),
                )
            }
        }
        if !(self.labels.noise_std >= 0.0) {
            return fail("labels.noise_std must be nonnegative".into());
        }
        if self.pipeline.uses_teacher() && self.teacher_n == 0 {
            return fail("teacher_n must be positive".into());
        }
        if self.agreement == AgreementMode::Pool(0) {
            return fail("agreement pool must be nonempty".into());
        }
        if self.loss == LossKind::Logistic {
            if self.labels.kind != LabelKind::Logistic {
                return fail("the logistic loss needs logistic labels".into());
            }
            if !matches!(self.s_mode, SMode::Explicit(_)) && self.pipeline != PipelineKind::Plain {
                return fail(
                    "the logistic loss has no closed-form risk; use an explicit s_mode".into(),
                );
            }
            if self.test_pool_size == 0 {
                return fail("test_pool_size must be positive for the logistic loss".into());
            }
        } else if self.labels.kind != LabelKind::Regression {
            return fail("the squared loss needs regression labels".into());
        }
        self.solver
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        if !(self.probe.gamma >= 0.0) || self.probe.replacements == 0 {
            return fail("probe needs gamma >= 0 and at least one replacement".into());
        }
        self.build_model()?;
        Ok(())
    }

    fn label_dim(&self) -> usize {
        match self.labels.view {
            View::Z => self.model.d_z,
            _ => self.model.d_x,
        }
    }

    pub fn build_model(&self) -> Result<CanonicalPairModel> {
        let m = &self.model;
        let built = match m.directions {
            Directions::Random => CanonicalPairModel::new(
                m.d_x,
                m.d_z,
                &m.lambdas,
                derive_seed(self.master_seed, &[MODEL_STREAM]),
            ),
            Directions::Axis => CanonicalPairModel::axis_aligned(m.d_x, m.d_z, &m.lambdas),
        };
        built.map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn build_labels(&self) -> LabelModel {
        let weights = match (&self.labels.weights, self.labels.norm) {
            (Some(w), _) => DVector::from_column_slice(w),
            (None, norm) => {
                let norm = norm.unwrap_or(0.0);
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(self.master_seed, &[LABEL_STREAM]));
                let g = DVector::from_fn(self.label_dim(), |_, _| {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                let len = g.norm();
                if len > 0.0 {
                    g * (norm / len)
                } else {
                    g
                }
            }
        };
        LabelModel {
            view: self.labels.view,
            weights,
            noise_std: self.labels.noise_std,
            kind: self.labels.kind,
        }
    }

    /// Norm bound `R` of view-x features.
    pub fn radius_x(&self) -> f64 {
        radius(self.model.d_x)
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        LossSpec::for_kind(self.loss, self.radius_x() * self.bounds.b_w)
    }
}
