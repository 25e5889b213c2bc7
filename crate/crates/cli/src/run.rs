//! Running a configured experiment and analysing its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use marginlab::analysis::{
    self, classify_trajectory, direction_error_series, ensemble_direction_error_series,
    ensemble_norm_series, fit_rate, global_target, norm_growth, norm_series, variance_window,
    verify_partition_claims, verify_variance_bound, NamedFit, RateModel, Regime, Report,
};
use marginlab::data::Dataset;
use marginlab::io::fmt_f64;
use marginlab::linalg::direction_error;
use marginlab::model::ModelKind;
use marginlab::optim::{
    run_gd, run_gd_net, run_sgd, run_sgd_ensemble, Ensemble, NetTrajectory, Trajectory,
};
use marginlab::Error;

use crate::config::{Algorithm, AnalysisRequest, ExperimentConfig};
use crate::{CliError, Log, Manifest, Result};

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// What a run produced, stored in `run.json` next to `dataset.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "kebab-case")]
pub enum Artifact {
    Single(Box<Trajectory>),
    Ensemble(Box<Ensemble>),
    Net(Vec<NetTrajectory>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub artifact: Artifact,
}

/// Runs the optimizer described by `cfg` on `ds`.
pub fn execute(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Artifact> {
    let t = cfg.horizon;
    Ok(match cfg.algorithm {
        Algorithm::Gd => {
            let w0 = cfg.init.weights(ds)?;
            Artifact::Single(Box::new(run_gd(ds, cfg.model, &w0, cfg.schedule, t, cfg.stride)?))
        }
        Algorithm::Sgd => {
            let w0 = cfg.init.weights(ds)?;
            if cfg.seeds.len() == 1 {
                Artifact::Single(Box::new(run_sgd(
                    ds,
                    cfg.model,
                    &w0,
                    cfg.schedule,
                    t,
                    cfg.seeds[0],
                    cfg.stride,
                )?))
            } else {
                Artifact::Ensemble(Box::new(run_sgd_ensemble(
                    ds,
                    cfg.model,
                    &w0,
                    cfg.schedule,
                    t,
                    &cfg.seeds,
                    cfg.stride,
                )?))
            }
        }
        Algorithm::GdNet | Algorithm::SgdNet => {
            let spec = cfg.network.as_ref().expect("validated");
            let net = spec.build(ds, &cfg.init)?;
            if cfg.algorithm == Algorithm::GdNet {
                let eta = match cfg.schedule {
                    marginlab::optim::StepSchedule::Constant { eta } => eta,
                    _ => unreachable!("validated"),
                };
                Artifact::Net(vec![run_gd_net(ds, &net, eta, t, cfg.stride)?])
            } else {
                use rayon::prelude::*;
                let mut seeds = cfg.seeds.clone();
                seeds.sort_unstable();
                let runs = seeds
                    .par_iter()
                    .map(|&s| {
                        marginlab::optim::run_sgd_net(ds, &net, cfg.schedule, t, s, cfg.stride)
                    })
                    .collect::<marginlab::Result<Vec<_>>>()?;
                Artifact::Net(runs)
            }
        }
    })
}

/// Turns a refusal into a report note; other errors propagate.
fn soft<T>(r: marginlab::Result<T>, what: &str, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Refused(m)) => {
            notes.push(format!("{what}: {m}"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn limit_loss(ds: &Dataset, kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Relu => ds.n_neg() as f64 / ds.len() as f64,
        _ => 0.0,
    }
}

fn excess(series: impl Iterator<Item = (usize, f64)>, floor: f64) -> Vec<(usize, f64)> {
    series.map(|(t, l)| (t, l - floor)).collect()
}

/// Runs the requested analyses. Refused analyses become notes.
pub fn analyze(ds: &Dataset, artifact: &Artifact, req: &AnalysisRequest) -> Result<Report> {
    let mut rep = Report::new();
    let mut notes = Vec::new();
    let fit = |s: &[(usize, f64)], m: RateModel, a: Option<f64>, cap: f64| {
        fit_rate(s, m, a, req.window_fraction, cap)
    };
    match artifact {
        Artifact::Single(tr) => {
            let regime = if req.regime {
                soft(classify_trajectory(tr, ds, req.flip_threshold), "regime", &mut notes)?
            } else {
                None
            };
            let stochastic = tr.rng_seed.is_some();
            if req.rates {
                if let Some(target) = regime
                    .as_ref()
                    .filter(|r| !matches!(r.regime, Regime::Oscillation | Regime::FiniteTermination))
                    .and_then(|r| r.target_direction.clone())
                {
                    let series = direction_error_series(tr, &target, stochastic);
                    let (quantity, series, model) = if stochastic {
                        let sq = series.into_iter().map(|(t, e)| (t, e * e)).collect();
                        ("squared_avg_direction_error", sq, RateModel::InvLog)
                    } else {
                        ("direction_error", series, RateModel::LogLogOverLog)
                    };
                    if let Some(f) = soft(fit(&series, model, None, req.ratio_cap), quantity, &mut notes)? {
                        rep.rates.push(NamedFit { quantity: quantity.into(), fit: f });
                    }
                }
                if let Some(alpha) = tr.schedule.alpha() {
                    let floor = limit_loss(ds, tr.kind);
                    let s = excess(tr.records.iter().map(|r| (r.t, r.avg_loss)), floor);
                    if let Some(f) = soft(
                        fit(&s, RateModel::PolyLog, Some(alpha), req.ratio_cap),
                        "excess_avg_loss",
                        &mut notes,
                    )? {
                        rep.rates.push(NamedFit { quantity: "excess_avg_loss".into(), fit: f });
                    }
                }
                rep.norm_growth = soft(
                    norm_growth(&norm_series(tr, stochastic), req.window_fraction),
                    "norm_growth",
                    &mut notes,
                )?;
            }
            if req.variance && stochastic {
                rep.variance = soft(verify_variance_bound(tr, req.variance_cap), "variance", &mut notes)?;
            }
            rep.regime = regime;
        }
        Artifact::Ensemble(ens) => {
            if ens.tainted {
                return Err(Error::Tainted("an ensemble member clamped an exponent".into()).into());
            }
            let first = &ens.members[0];
            if req.regime {
                let mut labels = Vec::new();
                for m in &ens.members {
                    if let Some(r) = soft(classify_trajectory(m, ds, req.flip_threshold), "regime", &mut notes)? {
                        labels.push(r.regime.clone());
                        if rep.regime.is_none() {
                            rep.regime = Some(r);
                        }
                    }
                }
                let agree = labels.iter().filter(|r| Some(*r) == labels.first()).count();
                notes.push(format!(
                    "regime shown for seed {}; {agree} of {} members share it",
                    ens.seeds[0],
                    ens.members.len()
                ));
            }
            let last_t = ens.points.last().map_or(0, |p| p.t);
            if req.rates {
                let alpha = first.schedule.alpha();
                let floor = limit_loss(ds, first.kind);
                let s = excess(ens.points.iter().map(|p| (p.t, p.mean_avg_loss)), floor);
                if let Some(f) = soft(
                    fit(&s, RateModel::PolyLog, alpha, req.ratio_cap),
                    "excess_avg_loss",
                    &mut notes,
                )? {
                    rep.rates.push(NamedFit { quantity: "excess_avg_loss".into(), fit: f });
                }
                let target = global_target(ds, first.kind)?;
                let sq: Vec<(usize, f64)> = ensemble_direction_error_series(ens, &target.direction)
                    .into_iter()
                    .map(|(t, e)| (t, e * e))
                    .collect();
                if let Some(f) = soft(
                    fit(&sq, RateModel::InvLog, None, req.ratio_cap),
                    "squared_avg_direction_error",
                    &mut notes,
                )? {
                    rep.rates.push(NamedFit {
                        quantity: "squared_avg_direction_error".into(),
                        fit: f,
                    });
                }
                rep.norm_growth = soft(
                    norm_growth(&ensemble_norm_series(ens), req.window_fraction),
                    "norm_growth",
                    &mut notes,
                )?;
            }
            if req.variance {
                let stab = ens
                    .members
                    .iter()
                    .map(|m| m.transitions.last().map_or(0, |t| t.t))
                    .max()
                    .unwrap_or(0);
                let series: Vec<(usize, f64)> =
                    ens.points.iter().map(|p| (p.t, p.mean_var_sum)).collect();
                rep.variance = soft(
                    variance_window(&series, (last_t / 2).max(stab), req.variance_cap),
                    "variance",
                    &mut notes,
                )?;
            }
        }
        Artifact::Net(runs) => {
            if req.partitions {
                rep.partitions = Some(verify_partition_claims(runs, ds, None)?);
            }
        }
    }
    rep.notes = notes;
    Ok(rep)
}

fn ensemble_csv(ens: &Ensemble, global: &[f64]) -> String {
    let mut s = String::from(
        "t,mean_avg_loss,se_avg_loss,mean_var_sum,se_var_sum,norm_mean_avg_w,dir_err_global\n",
    );
    for p in &ens.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.t,
            fmt_f64(p.mean_avg_loss),
            fmt_f64(p.se_avg_loss),
            fmt_f64(p.mean_var_sum),
            fmt_f64(p.se_var_sum),
            fmt_f64(marginlab::linalg::norm(&p.mean_avg_w)),
            direction_error(&p.mean_avg_w, global).map(fmt_f64).unwrap_or_default()
        );
    }
    s
}

fn net_csv(runs: &[NetTrajectory]) -> String {
    let mut s = String::from("seed,t,loss,patterns,overflow\n");
    for r in runs {
        let seed = r.rng_seed.map(|x| x.to_string()).unwrap_or_default();
        for rec in &r.records {
            let pats: Vec<String> = rec.patterns.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                s,
                "{seed},{},{},{},{}",
                rec.t,
                fmt_f64(rec.loss),
                pats.join(";"),
                rec.overflow
            );
        }
    }
    s
}

fn effective_csv(runs: &[NetTrajectory]) -> String {
    let d = runs[0].final_net.dim();
    let mut s = String::from("seed,t,pattern,samples");
    for prefix in ["def", "rec", "avg"] {
        for j in 0..d {
            let _ = write!(s, ",{prefix}{j}");
        }
    }
    s.push('\n');
    for r in runs {
        let seed = r.rng_seed.map(|x| x.to_string()).unwrap_or_default();
        for rec in &r.records {
            for e in &rec.effective {
                let samples: Vec<String> = e.samples.iter().map(|i| i.to_string()).collect();
                let _ = write!(s, "{seed},{},{},{}", rec.t, e.pattern, samples.join(";"));
                for v in &e.definition {
                    let _ = write!(s, ",{}", fmt_f64(*v));
                }
                match &e.recursion {
                    Some(rv) => rv.iter().for_each(|v| {
                        let _ = write!(s, ",{}", fmt_f64(*v));
                    }),
                    None => s.push_str(&",".repeat(d)),
                }
                for v in &e.average {
                    let _ = write!(s, ",{}", fmt_f64(*v));
                }
                s.push('\n');
            }
        }
    }
    s
}

/// Writes the run artifacts (everything except the report) into `out`.
pub fn write_artifacts(
    out: &Path,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    artifact: &Artifact,
    manifest: &mut Manifest,
) -> Result<()> {
    manifest.write("dataset", out, "dataset.csv", ds.to_csv().as_bytes())?;
    manifest.write("config", out, "config.toml", cfg.to_toml()?.as_bytes())?;
    match artifact {
        Artifact::Single(tr) => {
            let global = global_target(ds, tr.kind)?;
            let target = analysis::classify_trajectory(tr, ds, cfg.analysis.flip_threshold)
                .ok()
                .and_then(|r| r.target_direction);
            let csv = tr.to_csv(Some(&global.direction), target.as_deref());
            manifest.write("trajectory", out, "trajectory.csv", csv.as_bytes())?;
            manifest.write("weights", out, "weights.csv", tr.weights_csv().as_bytes())?;
            manifest.write("transitions", out, "transitions.csv", tr.transitions_csv().as_bytes())?;
        }
        Artifact::Ensemble(ens) => {
            let global = global_target(ds, ens.members[0].kind)?;
            let csv = ensemble_csv(ens, &global.direction);
            manifest.write("ensemble_csv", out, "ensemble.csv", csv.as_bytes())?;
            let summary = serde_json::json!({
                "seeds": ens.seeds,
                "tainted": ens.tainted,
                "points": ens.points,
            });
            let text = serde_json::to_string_pretty(&summary)?;
            manifest.write("ensemble", out, "ensemble.json", text.as_bytes())?;
        }
        Artifact::Net(runs) => {
            manifest.write("net_trajectory", out, "net_trajectory.csv", net_csv(runs).as_bytes())?;
            manifest.write("effective", out, "effective.csv", effective_csv(runs).as_bytes())?;
        }
    }
    let run = RunFile {
        schema_version: RUN_SCHEMA_VERSION,
        config: cfg.clone(),
        artifact: artifact.clone(),
    };
    manifest.write("run", out, "run.json", serde_json::to_string(&run)?.as_bytes())?;
    Ok(())
}

pub fn write_report(out: &Path, report: &Report, manifest: &mut Manifest) -> Result<()> {
    manifest.write("report", out, "report.json", report.to_json()?.as_bytes())
}

/// `train`: build data, run, write artifacts and the report.
pub fn train(cfg: &ExperimentConfig, base: &Path, out: &Path, log: Log) -> Result<(Manifest, Report)> {
    let ds = cfg.dataset.build(base)?;
    fs::create_dir_all(out)?;
    log.say(format!(
        "training {:?} on {} samples in dimension {}, T = {}",
        cfg.algorithm,
        ds.len(),
        ds.dim(),
        cfg.horizon
    ));
    let artifact = execute(cfg, &ds)?;
    let mut manifest = Manifest::default();
    write_artifacts(out, cfg, &ds, &artifact, &mut manifest)?;
    let report = analyze(&ds, &artifact, &cfg.analysis)?;
    write_report(out, &report, &mut manifest)?;
    Ok((manifest, report))
}

/// `analyze`: re-run the analyses on a finished run directory.
pub fn analyze_dir(run_dir: &Path, out: &Path) -> Result<(Manifest, Report)> {
    let text = fs::read_to_string(run_dir.join("run.json"))?;
    let run: RunFile = serde_json::from_str(&text)?;
    if run.schema_version != RUN_SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "run.json schema_version {} is not supported",
            run.schema_version
        )));
    }
    let ds = Dataset::load(run_dir.join("dataset.csv"))?;
    let report = analyze(&ds, &run.artifact, &run.config.analysis)?;
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::default();
    write_report(out, &report, &mut manifest)?;
    Ok((manifest, report))
}
