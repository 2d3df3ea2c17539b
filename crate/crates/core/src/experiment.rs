//! Versioned experiment configuration, synthetic truths and noisy data.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmaError};
use crate::io::read_field_csv;
use crate::objective::InverseProblem;
use crate::optimizer::SolverConfig;
use crate::pde::{ForwardProblem, Mesh, ObservationMask, Side, DEFAULT_BIOT};
use crate::prior::{GaussianPrior, DEFAULT_DELTA, DEFAULT_GAMMA};
use crate::sketch::{SketchDistribution, SketchKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    /// Cells per side.
    pub cells: usize,
    #[serde(default = "default_biot")]
    pub biot: f64,
    pub flux_side: Side,
    #[serde(default)]
    pub observation: ObservationMask,
}

fn default_biot() -> f64 {
    DEFAULT_BIOT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    /// `amplitude * sin(2 pi frequency x)`.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`.
    GaussianBlob { amplitude: f64, center: [f64; 2], width: f64 },
    /// Nodal values from a field CSV.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub gamma: f64,
    pub delta: f64,
    /// `"zero"` or a field CSV path.
    #[serde(default = "zero_mean")]
    pub u0: String,
}

fn zero_mean() -> String {
    "zero".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub kind: SketchKind,
    #[serde(default)]
    pub s: Option<f64>,
    pub n: usize,
}

impl SketchConfig {
    pub fn distribution(&self) -> Result<SketchDistribution> {
        SketchDistribution::from_kind(self.kind, self.s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub noise: u64,
    pub sketch: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub problem: ProblemSpec,
    pub truth: TruthSpec,
    pub noise_fraction: f64,
    pub prior: PriorConfig,
    /// Absent means the deterministic (full-misfit) problem.
    #[serde(default)]
    pub sketch: Option<SketchConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub seeds: Seeds,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Truth, noiseless observations and noisy data of a synthetic experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub truth: DVector<f64>,
    pub clean: DVector<f64>,
    pub data: DVector<f64>,
    /// Noise standard deviation; zero for noiseless data.
    pub sigma: f64,
}

impl Synthetic {
    /// Whitening scale: the noise level, or one for noiseless data.
    pub fn whitening_sigma(&self) -> f64 {
        if self.sigma > 0.0 {
            self.sigma
        } else {
            1.0
        }
    }
}

impl ExperimentConfig {
    /// 1D problem on 1025 nodes with a sinusoidal truth and 1% noise.
    pub fn desk_1d() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            problem: ProblemSpec {
                dim: 1,
                cells: 1024,
                biot: DEFAULT_BIOT,
                flux_side: Side::Left,
                observation: ObservationMask::All,
            },
            truth: TruthSpec::Sinusoid { amplitude: 1.0, frequency: 1.0 },
            noise_fraction: 0.01,
            prior: PriorConfig { gamma: DEFAULT_GAMMA, delta: DEFAULT_DELTA, u0: zero_mean() },
            sketch: Some(SketchConfig { kind: SketchKind::Achlioptas, s: None, n: 100 }),
            solver: SolverConfig::default(),
            seeds: Seeds { noise: 1, sketch: 2 },
            output: default_output(),
        }
    }

    /// 2D problem on a 35x35-cell square (1296 nodes) with a Gaussian-blob truth and 0.1% noise.
    pub fn desk_2d() -> Self {
        Self {
            problem: ProblemSpec {
                dim: 2,
                cells: 35,
                biot: DEFAULT_BIOT,
                flux_side: Side::Bottom,
                observation: ObservationMask::All,
            },
            truth: TruthSpec::GaussianBlob { amplitude: 1.5, center: [0.5, 0.5], width: 0.15 },
            noise_fraction: 0.001,
            sketch: Some(SketchConfig { kind: SketchKind::Achlioptas, s: None, n: 50 }),
            ..Self::desk_1d()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative file references relative to `base`.
    fn resolve_paths(&mut self, base: &Path) {
        if let TruthSpec::File { path } = &mut self.truth {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if self.prior.u0 != "zero" && Path::new(&self.prior.u0).is_relative() {
            self.prior.u0 = base.join(&self.prior.u0).to_string_lossy().into_owned();
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(RmaError::Config(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if !(1..=2).contains(&self.problem.dim) {
            return Err(RmaError::Config(format!("dim must be 1 or 2, got {}", self.problem.dim)));
        }
        if self.problem.cells == 0 {
            return Err(RmaError::Config("cells must be positive".into()));
        }
        if !(self.problem.biot > 0.0) {
            return Err(RmaError::Config("Biot number must be positive".into()));
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(RmaError::Config("noise_fraction must be nonnegative".into()));
        }
        if !(self.prior.gamma > 0.0 && self.prior.delta > 0.0) {
            return Err(RmaError::Config("prior gamma and delta must be positive".into()));
        }
        if let Some(sketch) = &self.sketch {
            if sketch.n == 0 {
                return Err(RmaError::Config("sketch size must be positive".into()));
            }
            sketch.distribution()?;
        }
        match &self.truth {
            TruthSpec::Sinusoid { .. } | TruthSpec::File { .. } => {}
            TruthSpec::GaussianBlob { width, .. } if *width > 0.0 => {}
            TruthSpec::GaussianBlob { .. } => return Err(RmaError::Config("blob width must be positive".into())),
        }
        self.solver.validate()
    }

    pub fn mesh(&self) -> Result<Arc<Mesh>> {
        let p = &self.problem;
        let mesh = match p.dim {
            1 => Mesh::interval(p.cells, p.flux_side)?,
            _ => Mesh::unit_square(p.cells, p.cells, p.flux_side)?,
        };
        Ok(Arc::new(mesh))
    }

    pub fn forward(&self, mesh: &Arc<Mesh>) -> Result<ForwardProblem> {
        ForwardProblem::new(mesh.clone(), self.problem.biot)?.with_observation(self.problem.observation)
    }

    pub fn prior(&self, mesh: &Arc<Mesh>) -> Result<GaussianPrior> {
        let mean = match self.prior.u0.as_str() {
            "zero" => DVector::zeros(mesh.node_count()),
            path => read_field_csv(Path::new(path))?,
        };
        GaussianPrior::new(mesh.clone(), self.prior.gamma, self.prior.delta, mean)
    }

    pub fn truth(&self, mesh: &Mesh) -> Result<DVector<f64>> {
        let values = match &self.truth {
            TruthSpec::Sinusoid { amplitude, frequency } => {
                mesh.interpolate(|x| amplitude * (2.0 * std::f64::consts::PI * frequency * x[0]).sin())
            }
            TruthSpec::GaussianBlob { amplitude, center, width } => mesh.interpolate(|x| {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }),
            TruthSpec::File { path } => {
                let v = read_field_csv(path)?;
                if v.len() != mesh.node_count() {
                    return Err(RmaError::DimensionMismatch { expected: mesh.node_count(), got: v.len() });
                }
                return Ok(v);
            }
        };
        Ok(DVector::from_vec(values))
    }

    /// Observations of the truth plus `N(0, sigma^2)` noise, `sigma = fraction * max|F(u_truth)|`.
    pub fn synthesize(&self, forward: &ForwardProblem, mesh: &Mesh) -> Result<Synthetic> {
        let truth = self.truth(mesh)?;
        let clean = forward.forward_map(&truth)?;
        let sigma = self.noise_fraction * clean.amax();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds.noise);
        let data = clean.map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal));
        Ok(Synthetic { truth, clean, data, sigma })
    }

    /// Builds the synthetic inverse problem and returns it with its data.
    pub fn build(&self) -> Result<(InverseProblem, Synthetic)> {
        let mesh = self.mesh()?;
        let forward = self.forward(&mesh)?;
        let prior = self.prior(&mesh)?;
        let synthetic = self.synthesize(&forward, &mesh)?;
        let problem = InverseProblem::new(forward, prior, synthetic.data.clone(), synthetic.whitening_sigma())?
            .with_truth(synthetic.truth.clone())?;
        Ok((problem, synthetic))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::desk_1d(), ExperimentConfig::desk_2d()] {
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert_eq!(ExperimentConfig::desk_1d().mesh().unwrap().node_count(), 1025);
        assert_eq!(ExperimentConfig::desk_2d().mesh().unwrap().node_count(), 1296);
    }

    #[test]
    fn schema_and_fields_checked() {
        let mut cfg = ExperimentConfig::desk_1d();
        cfg.schema = 2;
        assert!(ExperimentConfig::from_json(&cfg.to_json()).is_err());
        let text = ExperimentConfig::desk_1d().to_json().replacen("\"noise_fraction\"", "\"noise\"", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
        let mut cfg = ExperimentConfig::desk_2d();
        cfg.problem.dim = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noiseless_data_equals_observations() {
        let mut cfg = ExperimentConfig::desk_1d();
        cfg.problem.cells = 32;
        cfg.noise_fraction = 0.0;
        let (problem, syn) = cfg.build().unwrap();
        assert_eq!(syn.data, syn.clean);
        assert_eq!(problem.sigma(), 1.0);
    }

    #[test]
    fn synthesis_is_seeded() {
        let mut cfg = ExperimentConfig::desk_2d();
        cfg.problem.cells = 6;
        let (_, a) = cfg.build().unwrap();
        let (_, b) = cfg.build().unwrap();
        assert_eq!(a, b);
        cfg.seeds.noise += 1;
        let (_, c) = cfg.build().unwrap();
        assert_ne!(a.data, c.data);
        assert_eq!(a.clean, c.clean);
        assert!((a.sigma - 0.001 * a.clean.amax()).abs() == 0.0);
    }
}
