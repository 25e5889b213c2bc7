use serde::{Deserialize, Serialize};

use crate::data::{leaky_transform, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{direction_error, normalized};
use crate::margin::{self, local_margin, max_margin, MarginResult, RegionLabel};
use crate::model::ModelKind;
use crate::optim::{Ensemble, Trajectory};

/// Region flips in the final half of a run at or above which it counts as oscillating.
pub const DEFAULT_FLIP_THRESHOLD: usize = 4;

/// Minimum number of records [`classify_trajectory`] accepts.
pub const MIN_RECORDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", content = "subset", rename_all = "kebab-case")]
pub enum Regime {
    GlobalMaxMargin,
    Oscillation,
    LocalMaxMargin(Vec<usize>),
    FiniteTermination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub target_direction: Option<Vec<f64>>,
    pub target_gamma: Option<f64>,
    /// For local targets: whether the target lies in its own region.
    pub target_membership: Option<bool>,
    /// Last region change; the region is constant from here to the end.
    pub stabilization_step: Option<usize>,
    /// `‖w_T/‖w_T‖ − target‖` on the final record.
    pub final_direction_error: Option<f64>,
    /// Same for the running average `w̄_T`.
    pub final_avg_direction_error: Option<f64>,
    pub region_flip_count: usize,
    pub final_half_flips: usize,
    pub final_region: RegionLabel,
    pub notes: Vec<String>,
}

/// Points whose max-margin direction is the global target for `kind`:
/// positives for ReLU, signed points for linear, signed leaky-scaled points
/// for leaky ReLU.
pub fn global_target_points(ds: &Dataset, kind: ModelKind) -> Result<Vec<Vec<f64>>> {
    Ok(match kind {
        ModelKind::Relu => ds.positive_points(),
        ModelKind::Linear => ds.signed_points(),
        ModelKind::Leaky(l) => leaky_transform(ds, l)?.signed_points(),
    })
}

/// Global max-margin target for `kind`, accepting a non-converged best iterate.
pub fn global_target(ds: &Dataset, kind: ModelKind) -> Result<MarginResult> {
    let pts = global_target_points(ds, kind)?;
    match max_margin(&pts, margin::DEFAULT_TOL, margin::DEFAULT_MAX_ITER) {
        Err(Error::Convergence { best, .. }) => Ok(*best),
        r => r,
    }
}

/// Maps a GD (or SGD) trajectory onto the four-way regime taxonomy.
///
/// Oscillation is declared when at least `flip_threshold` region changes
/// fall in the final half of the run; this is a heuristic stand-in for
/// non-convergence and is labelled as such in the notes.
pub fn classify_trajectory(
    traj: &Trajectory,
    ds: &Dataset,
    flip_threshold: usize,
) -> Result<RegimeReport> {
    if traj.tainted {
        return Err(Error::Tainted("trajectory clamped an exponent".into()));
    }
    let last = traj.last();
    let flips = traj.transitions.len();
    let half = last.t / 2;
    let final_half_flips = traj.transitions.iter().filter(|tr| tr.t >= half).count();
    let mut report = RegimeReport {
        regime: Regime::FiniteTermination,
        target_direction: None,
        target_gamma: None,
        target_membership: None,
        stabilization_step: None,
        final_direction_error: None,
        final_avg_direction_error: None,
        region_flip_count: flips,
        final_half_flips,
        final_region: last.region.clone(),
        notes: Vec::new(),
    };
    if let Some(t) = traj.terminated_early {
        report.stabilization_step = Some(t);
        report.notes.push(format!("gradient exactly zero at step {t}"));
        return Ok(report);
    }
    if traj.records.len() < MIN_RECORDS {
        return Err(Error::Refused(format!(
            "{} records, need at least {MIN_RECORDS}",
            traj.records.len()
        )));
    }
    if final_half_flips >= flip_threshold {
        report.regime = Regime::Oscillation;
        report.notes.push(format!(
            "{final_half_flips} region flips in the final half (threshold {flip_threshold}); flip counting is a heuristic for non-convergence"
        ));
        return Ok(report);
    }
    report.stabilization_step = Some(traj.transitions.last().map_or(0, |tr| tr.t));
    let (target, regime) = match &last.region {
        RegionLabel::Separable => (global_target(ds, traj.kind)?, Regime::GlobalMaxMargin),
        RegionLabel::LocalRegion(j) => {
            let (r, member) = match local_margin(ds, j, margin::DEFAULT_TOL, margin::DEFAULT_MAX_ITER)
            {
                Err(Error::Convergence { best, .. }) => {
                    let member = crate::margin::in_local_region(&best.direction, ds, j);
                    (*best, member)
                }
                r => r?,
            };
            report.target_membership = Some(member);
            if !member {
                report
                    .notes
                    .push("local target lies outside its own region".to_string());
            }
            (r, Regime::LocalMaxMargin(j.clone()))
        }
        RegionLabel::FiniteLocalMin => {
            report
                .notes
                .push("settled where no sample is active without an exactly zero gradient".into());
            return Ok(report);
        }
        RegionLabel::NegativeMisclassified => {
            return Err(Error::Refused(
                "run settled with an active negative sample, which no regime covers".into(),
            ));
        }
    };
    report.regime = regime;
    report.final_direction_error = direction_error(&last.w, &target.direction);
    report.final_avg_direction_error = direction_error(&last.avg_w, &target.direction);
    report.target_gamma = Some(target.gamma);
    report.target_direction = Some(target.direction);
    Ok(report)
}

/// `(t, ‖u_t/‖u_t‖ − target‖)` for the raw or averaged iterate. Zero
/// iterates are skipped.
pub fn direction_error_series(
    traj: &Trajectory,
    target: &[f64],
    use_average: bool,
) -> Vec<(usize, f64)> {
    traj.records
        .iter()
        .filter_map(|r| {
            let u = if use_average { &r.avg_w } else { &r.w };
            direction_error(u, target).map(|e| (r.t, e))
        })
        .collect()
}

/// Direction error of the normalized ensemble mean `mean w̄_t / ‖mean w̄_t‖`.
pub fn ensemble_direction_error_series(ens: &Ensemble, target: &[f64]) -> Vec<(usize, f64)> {
    ens.points
        .iter()
        .filter_map(|p| direction_error(&p.mean_avg_w, target).map(|e| (p.t, e)))
        .collect()
}

/// `‖mean w̄_t‖` per recorded step.
pub fn ensemble_norm_series(ens: &Ensemble) -> Vec<(usize, f64)> {
    ens.points
        .iter()
        .map(|p| (p.t, crate::linalg::norm(&p.mean_avg_w)))
        .collect()
}

/// `‖w_t‖` or `‖w̄_t‖` per recorded step.
pub fn norm_series(traj: &Trajectory, use_average: bool) -> Vec<(usize, f64)> {
    traj.records
        .iter()
        .map(|r| {
            let u = if use_average { &r.avg_w } else { &r.w };
            (r.t, crate::linalg::norm(u))
        })
        .collect()
}

/// Unit vector of `u`, if nonzero.
pub fn unit(u: &[f64]) -> Option<Vec<f64>> {
    normalized(u, 1e-12)
}
