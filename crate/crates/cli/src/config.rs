//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use marginlab::data::{self, Dataset, Label};
use marginlab::margin::{region_of, RegionLabel};
use marginlab::model::{ModelKind, MultiNeuronNet};
use marginlab::optim::{RecordStride, StepSchedule};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub stride: RecordStride,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub analysis: AnalysisRequest,
}

fn default_model() -> ModelKind {
    ModelKind::Relu
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Gd,
    Sgd,
    GdNet,
    SgdNet,
}

impl Algorithm {
    pub fn is_net(self) -> bool {
        matches!(self, Algorithm::GdNet | Algorithm::SgdNet)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Algorithm::Sgd | Algorithm::SgdNet)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Separable {
        n_pos: usize,
        n_neg: usize,
        dim: usize,
        #[serde(default = "default_min_margin")]
        min_margin: f64,
        seed: u64,
    },
    Combes {
        n_pos: usize,
        n_neg: usize,
        dim: usize,
        seed: u64,
    },
    Example1,
    Example2,
    /// Two symmetric cones in 3-D with clear support vectors.
    TwoCone,
    File {
        path: PathBuf,
    },
}

fn default_min_margin() -> f64 {
    0.1
}

impl DatasetSpec {
    /// Relative file paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Dataset, CliError> {
        Ok(match self {
            DatasetSpec::Separable {
                n_pos,
                n_neg,
                dim,
                min_margin,
                seed,
            } => data::gen_separable(*n_pos, *n_neg, *dim, *min_margin, *seed)?,
            DatasetSpec::Combes {
                n_pos,
                n_neg,
                dim,
                seed,
            } => data::gen_combes(*n_pos, *n_neg, *dim, *seed)?,
            DatasetSpec::Example1 => data::gen_example1(),
            DatasetSpec::Example2 => data::gen_example2(),
            DatasetSpec::TwoCone => two_cone(),
            DatasetSpec::File { path } => Dataset::load(base.join(path))?,
        })
    }

    pub fn set_seed(&mut self, s: u64) {
        match self {
            DatasetSpec::Separable { seed, .. } | DatasetSpec::Combes { seed, .. } => *seed = s,
            _ => {}
        }
    }
}

/// Positives around `+e₁` and negatives around `−e₁`: four support vectors
/// per class placed symmetrically, four more points well past the margin.
pub fn two_cone() -> Dataset {
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    let mut cone = |r0: f64, r1: f64, sv: [(f64, f64); 4], far: f64, label: Label| {
        for (a, b) in sv {
            pts.push(vec![r0, a, b]);
            labels.push(label);
        }
        for (a, b) in [(far, 0.0), (-far, 0.0), (0.0, far), (0.0, -far)] {
            pts.push(vec![r1, a, b]);
            labels.push(label);
        }
    };
    cone(
        1.0,
        2.5,
        [(0.3, 0.3), (0.3, -0.3), (-0.3, 0.3), (-0.3, -0.3)],
        0.5,
        Label::Positive,
    );
    cone(
        -1.2,
        -3.0,
        [(0.2, 0.4), (0.2, -0.4), (-0.2, 0.4), (-0.2, -0.4)],
        0.6,
        Label::Negative,
    );
    Dataset::new(pts, labels).expect("fixed instance is valid")
}

/// Initial weights. An explicit `w` wins; otherwise `N(0, scale²)` entries
/// are drawn from `seed`, redrawn while they sit in a finite local minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    0.1
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            w: None,
            seed: 0,
            scale: default_scale(),
        }
    }
}

impl InitSpec {
    pub fn weights(&self, ds: &Dataset) -> Result<Vec<f64>, CliError> {
        if let Some(w) = &self.w {
            if w.len() != ds.dim() {
                return Err(CliError::Config(format!(
                    "init.w has {} entries, the dataset has dimension {}",
                    w.len(),
                    ds.dim()
                )));
            }
            return Ok(w.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..1000 {
            let w: Vec<f64> = (0..ds.dim())
                .map(|_| self.scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if region_of(&w, ds)? != RegionLabel::FiniteLocalMin {
                return Ok(w);
            }
        }
        Err(CliError::Config(
            "could not draw an initialization outside the finite local minima".into(),
        ))
    }
}

/// Output weights `v` and optionally the hidden columns; missing columns are
/// drawn like [`InitSpec`] weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<Vec<f64>>>,
}

impl NetworkSpec {
    pub fn build(&self, ds: &Dataset, init: &InitSpec) -> Result<MultiNeuronNet, CliError> {
        let cols = match &self.columns {
            Some(c) => c.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
                (0..self.v.len())
                    .map(|_| {
                        (0..ds.dim())
                            .map(|_| init.scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(MultiNeuronNet::new(cols, self.v.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    #[serde(default = "yes")]
    pub regime: bool,
    #[serde(default = "yes")]
    pub rates: bool,
    #[serde(default = "yes")]
    pub variance: bool,
    #[serde(default = "yes")]
    pub partitions: bool,
    #[serde(default = "default_flips")]
    pub flip_threshold: usize,
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    #[serde(default = "default_ratio_cap")]
    pub ratio_cap: f64,
    #[serde(default = "default_variance_cap")]
    pub variance_cap: f64,
}

fn yes() -> bool {
    true
}
fn default_flips() -> usize {
    marginlab::analysis::DEFAULT_FLIP_THRESHOLD
}
fn default_window() -> f64 {
    marginlab::analysis::DEFAULT_WINDOW_FRACTION
}
fn default_ratio_cap() -> f64 {
    marginlab::analysis::DEFAULT_RATIO_CAP
}
fn default_variance_cap() -> f64 {
    marginlab::analysis::DEFAULT_VARIANCE_CAP
}

impl Default for AnalysisRequest {
    fn default() -> Self {
        AnalysisRequest {
            regime: true,
            rates: true,
            variance: true,
            partitions: true,
            flip_threshold: default_flips(),
            window_fraction: default_window(),
            ratio_cap: default_ratio_cap(),
            variance_cap: default_variance_cap(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        self.model.validate()?;
        self.stride.validate()?;
        self.schedule.validate()?;
        match (self.algorithm.is_stochastic(), self.schedule) {
            (false, StepSchedule::Polynomial { .. }) => {
                return bad("gd and gd-net take a constant schedule".into())
            }
            (true, StepSchedule::Constant { .. }) => {
                return bad("sgd and sgd-net take a polynomial schedule".into())
            }
            _ => {}
        }
        if self.algorithm.is_stochastic() && self.seeds.is_empty() {
            return bad("stochastic algorithms need at least one seed".into());
        }
        if self.algorithm.is_net() {
            if self.network.is_none() {
                return bad("network algorithms need a [network] table".into());
            }
            if self.model != ModelKind::Relu {
                return bad("network algorithms use ReLU hidden units only".into());
            }
        } else if self.network.is_some() {
            return bad("[network] is only used by gd-net and sgd-net".into());
        }
        if !(self.init.scale > 0.0 && self.init.scale.is_finite()) {
            return bad("init.scale must be positive".into());
        }
        Ok(())
    }
}
