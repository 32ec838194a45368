//! TOML run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use hfm_core::datagen::{AnalyticFlow, FlowKind, InitialCondition, SolverConfig};
use hfm_core::network::{Activation, MlpArchitecture, SpatialDim};
use hfm_core::physics::FlowParams;
use hfm_core::postproc::{GridSpec, SurfaceDiscretization};
use hfm_core::training::{AdamConfig, LossWeights, ResidualPolicy, TrainConfig};
use hfm_core::{HfmError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds sampling, weight initialisation and shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    pub flow: Option<FlowSection>,
    pub solver: Option<SolverSection>,
    pub sampling: Option<SamplingSection>,
    pub network: Option<NetworkSection>,
    pub training: Option<TrainingSection>,
    pub post: Option<PostSection>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub collocation: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub surface: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub variant: String,
    pub reynolds: f64,
    pub peclet: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_interval: f64,
    #[serde(default = "yes")]
    pub dealias: bool,
    #[serde(default)]
    pub initial: InitialCondition,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub count: usize,
    #[serde(default)]
    pub noise: f64,
    /// Extra uniformly drawn residual points, written to `paths.collocation`.
    #[serde(default)]
    pub collocation: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    #[serde(default)]
    pub activation: Option<Activation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub stage_epochs: Vec<usize>,
    pub stage_rates: Vec<f64>,
    pub batch_size: usize,
    #[serde(default)]
    pub residual_points: ResidualPolicy,
    #[serde(default)]
    pub trainable: bool,
    #[serde(default = "one")]
    pub re_guess: f64,
    #[serde(default = "one")]
    pub pec_guess: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn one() -> f64 {
    1.0
}

/// Field source for the post-processing commands.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    Checkpoint,
    Analytic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSection {
    pub center: [f64; 2],
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostSection {
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub times: Vec<f64>,
    pub grid: Option<GridSpec>,
    #[serde(default = "yes")]
    pub align_pressure: bool,
    pub circle: Option<CircleSection>,
    /// Whether a surface read from `paths.surface` is closed.
    #[serde(default = "yes")]
    pub closed: bool,
}

fn missing(what: &str) -> HfmError {
    HfmError::InvalidInput(format!("configuration lacks {what}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HfmError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| HfmError::Parse {
            path: path.into(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1),
            message: e.message().to_string(),
        })?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = p.as_ref().ok_or_else(|| missing(&format!("paths.{what}")))?;
        Ok(self.base.join(p))
    }

    /// An input path that must exist.
    pub fn input(&self, p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let path = self.resolve(p, what)?;
        if !path.exists() {
            return Err(HfmError::InvalidInput(format!(
                "paths.{what} = {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// An output path whose directory is created if needed.
    pub fn output(&self, p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let path = self.resolve(p, what)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| HfmError::Io {
                path: dir.into(),
                source,
            })?;
        }
        Ok(path)
    }

    pub fn flow(&self) -> Result<&FlowSection> {
        self.flow.as_ref().ok_or_else(|| missing("a [flow] section"))
    }

    pub fn analytic_flow(&self) -> Result<AnalyticFlow> {
        let f = self.flow()?;
        AnalyticFlow::new(FlowKind::parse(&f.variant)?, f.reynolds)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = self.solver.as_ref().ok_or_else(|| missing("a [solver] section"))?;
        let pec = self.flow()?.peclet;
        if !(pec > 0.0) {
            return Err(HfmError::InvalidInput(format!("Péclet number must be positive, got {pec}")));
        }
        Ok(SolverConfig {
            n: s.n,
            dt: s.dt,
            kappa: 1.0 / pec,
            t_final: s.t_final,
            snapshot_interval: s.snapshot_interval,
            dealias: s.dealias,
            initial: s.initial.clone(),
            unit_interval: true,
        })
    }

    pub fn architecture(&self, dim: SpatialDim) -> Result<MlpArchitecture> {
        let n = self.network.as_ref().ok_or_else(|| missing("a [network] section"))?;
        let mut arch = MlpArchitecture::new(dim, n.hidden_layers, n.hidden_width)?;
        if let Some(a) = n.activation {
            arch.activation = a;
        }
        Ok(arch)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = self.training.as_ref().ok_or_else(|| missing("a [training] section"))?;
        let flow = if t.trainable {
            FlowParams::trainable(t.re_guess, t.pec_guess)?
        } else {
            let f = self.flow()?;
            FlowParams::fixed(f.reynolds, f.peclet)?
        };
        let cfg = TrainConfig {
            stage_epochs: t.stage_epochs.clone(),
            stage_rates: t.stage_rates.clone(),
            batch_size: t.batch_size,
            seed: self.seed,
            adam: t.adam,
            residual_points: t.residual_points,
            flow,
            weights: t.weights,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn post(&self) -> Result<&PostSection> {
        self.post.as_ref().ok_or_else(|| missing("a [post] section"))
    }

    pub fn times(&self) -> Result<&[f64]> {
        let t = &self.post()?.times;
        if t.is_empty() || t.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::InvalidInput("post.times must list finite times".into()));
        }
        Ok(t)
    }

    pub fn surface(&self) -> Result<SurfaceDiscretization> {
        let post = self.post()?;
        match (&post.circle, &self.paths.surface) {
            (Some(c), None) => SurfaceDiscretization::circle(c.center, c.radius, c.points),
            (None, Some(_)) => {
                SurfaceDiscretization::read_csv(&self.input(&self.paths.surface, "surface")?, post.closed)
            }
            _ => Err(HfmError::InvalidInput(
                "give exactly one of post.circle and paths.surface".into(),
            )),
        }
    }
}
