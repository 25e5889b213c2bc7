//! Canned experiments, each expressed as one or more configs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use marginlab::data::{self, leaky_transform, Dataset, Label};
use marginlab::linalg::{dist, norm};
use marginlab::margin::{self, max_margin, RegionLabel};
use marginlab::model::{activation_pattern, ModelKind, MultiNeuronNet};
use marginlab::optim::{RecordStride, StepSchedule};

use crate::config::{
    two_cone, Algorithm, AnalysisRequest, DatasetSpec, ExperimentConfig, InitSpec, NetworkSpec,
    CONFIG_SCHEMA_VERSION,
};
use crate::run::{self, Artifact};
use crate::{CliError, Log, Manifest, Result};

pub const SCENARIOS: [&str; 5] = ["example1", "example2", "combes-sgd", "leaky", "multi-neuron"];

/// Optional overrides for a scenario's defaults.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReproOptions {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
}

fn gd_eta(ds: &Dataset) -> f64 {
    0.1 / (ds.norm_bound() * ds.norm_bound())
}

fn base_config(algorithm: Algorithm, horizon: usize, dataset: DatasetSpec) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        algorithm,
        horizon,
        seeds: Vec::new(),
        out: None,
        dataset,
        model: ModelKind::Relu,
        schedule: StepSchedule::Constant { eta: 0.1 },
        stride: RecordStride::default(),
        init: InitSpec::default(),
        network: None,
        analysis: AnalysisRequest::default(),
    }
}

fn example(which: u8, opts: ReproOptions) -> ExperimentConfig {
    let (spec, ds, w0) = if which == 1 {
        (DatasetSpec::Example1, data::gen_example1(), data::example1_init())
    } else {
        (DatasetSpec::Example2, data::gen_example2(), data::example2_init())
    };
    let mut cfg = base_config(Algorithm::Gd, opts.horizon.unwrap_or(100_000), spec);
    cfg.schedule = StepSchedule::Constant { eta: gd_eta(&ds) };
    cfg.init.w = Some(w0);
    cfg
}

fn combes_sgd(opts: ReproOptions) -> ExperimentConfig {
    let base = opts.seed.unwrap_or(0);
    let spec = DatasetSpec::Combes {
        n_pos: 10,
        n_neg: 10,
        dim: 3,
        seed: base,
    };
    let mut cfg = base_config(Algorithm::Sgd, opts.horizon.unwrap_or(1_000_000), spec);
    cfg.schedule = StepSchedule::Polynomial { alpha: 0.6 };
    cfg.seeds = (0..20).map(|k| base.wrapping_add(k)).collect();
    cfg.init.seed = base;
    cfg.analysis.ratio_cap = 2.0;
    cfg
}

/// Two hidden units per class, each a perturbation of `±ŵ` for the signed
/// max-margin direction `ŵ`, redrawn until every positive activates exactly
/// units 0 and 1 and every negative exactly units 2 and 3.
fn multi_neuron_columns(ds: &Dataset, v: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    let sep = max_margin(&ds.signed_points(), margin::DEFAULT_TOL, margin::DEFAULT_MAX_ITER)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let cols: Vec<Vec<f64>> = [1.0, 1.0, -1.0, -1.0]
            .iter()
            .map(|s| {
                sep.direction
                    .iter()
                    .map(|a| 0.3 * (s * a + 0.3 * rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        let net = MultiNeuronNet::new(cols.clone(), v.to_vec())?;
        let mut ok = true;
        for (x, l) in ds.points().iter().zip(ds.labels()) {
            let p = activation_pattern(&net, x)?.0;
            ok &= match l {
                Label::Positive => p == [true, true, false, false],
                Label::Negative => p == [false, false, true, true],
            };
        }
        if ok {
            return Ok(cols);
        }
    }
    Err(CliError::Config("no disjoint-pattern initialization found".into()))
}

fn multi_neuron(opts: ReproOptions) -> Result<ExperimentConfig> {
    let ds = two_cone();
    let mut cfg = base_config(
        Algorithm::GdNet,
        opts.horizon.unwrap_or(100_000),
        DatasetSpec::TwoCone,
    );
    let v = vec![1.0, 0.5, -1.0, -0.5];
    cfg.schedule = StepSchedule::Constant { eta: gd_eta(&ds) };
    cfg.network = Some(NetworkSpec {
        columns: Some(multi_neuron_columns(&ds, &v, opts.seed.unwrap_or(12))?),
        v,
    });
    Ok(cfg)
}

#[derive(Serialize)]
struct LeakyComparison {
    lambda: f64,
    steps_compared: usize,
    max_relative_gap: f64,
    stayed_separable: bool,
}

/// Leaky SGD on the data against linear SGD on the leaky-scaled data, same
/// seed and start; the two runs go to `leaky/` and `linear/`.
fn leaky(opts: ReproOptions, out: &Path, log: Log) -> Result<Manifest> {
    let lambda = 0.3;
    let seed = opts.seed.unwrap_or(0);
    let spec = DatasetSpec::Combes {
        n_pos: 8,
        n_neg: 8,
        dim: 3,
        seed,
    };
    let ds = spec.build(out)?;
    let sep = max_margin(&ds.signed_points(), margin::DEFAULT_TOL, margin::DEFAULT_MAX_ITER)?;
    let mut cfg = base_config(Algorithm::Sgd, opts.horizon.unwrap_or(100_000), spec);
    cfg.model = ModelKind::Leaky(lambda);
    cfg.schedule = StepSchedule::Polynomial { alpha: 0.6 };
    cfg.seeds = vec![seed];
    cfg.init.w = Some(sep.direction.iter().map(|x| 0.5 * x).collect());

    let mut manifest = Manifest::default();
    let leaky_dir = out.join("leaky");
    let (m, _) = run::train(&cfg, out, &leaky_dir, log)?;
    manifest.merge("leaky", m);

    let linear_dir = out.join("linear");
    fs::create_dir_all(&linear_dir)?;
    leaky_transform(&ds, lambda)?.save(linear_dir.join("dataset.csv"))?;
    let mut lin = cfg.clone();
    lin.model = ModelKind::Linear;
    lin.dataset = DatasetSpec::File {
        path: "dataset.csv".into(),
    };
    let (m, _) = run::train(&lin, &linear_dir, &linear_dir, log)?;
    manifest.merge("linear", m);

    let load = |dir: &Path| -> Result<marginlab::optim::Trajectory> {
        let run: run::RunFile = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)?;
        match run.artifact {
            Artifact::Single(t) => Ok(*t),
            _ => unreachable!("single-seed sgd"),
        }
    };
    let a = load(&leaky_dir)?;
    let b = load(&linear_dir)?;
    let max_relative_gap = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| dist(&x.w, &y.w) / norm(&y.w).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let cmp = LeakyComparison {
        lambda,
        steps_compared: a.records.len().min(b.records.len()),
        max_relative_gap,
        stayed_separable: a.records.iter().all(|r| r.region == RegionLabel::Separable),
    };
    let text = serde_json::to_string_pretty(&cmp)?;
    manifest.write("comparison", out, "leaky.json", text.as_bytes())?;
    Ok(manifest)
}

/// Config for a single-config scenario; `None` for `leaky`.
pub fn scenario_config(name: &str, opts: ReproOptions) -> Result<Option<ExperimentConfig>> {
    Ok(Some(match name {
        "example1" => example(1, opts),
        "example2" => example(2, opts),
        "combes-sgd" => combes_sgd(opts),
        "multi-neuron" => multi_neuron(opts)?,
        "leaky" => return Ok(None),
        other => {
            return Err(CliError::Config(format!(
                "unknown scenario {other:?}; expected one of {}",
                SCENARIOS.join(", ")
            )))
        }
    }))
}

pub fn repro(name: &str, opts: ReproOptions, out: &Path, log: Log) -> Result<Manifest> {
    fs::create_dir_all(out)?;
    match scenario_config(name, opts)? {
        Some(cfg) => Ok(run::train(&cfg, out, out, log)?.0),
        None => leaky(opts, out, log),
    }
}
