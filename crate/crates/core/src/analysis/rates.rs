//! Checking asymptotic rate claims on finite runs.
//!
//! An `O(g(t))` claim is read as "observed(t)/g(t) does not grow". On the
//! final window, with `r(t) = observed(t)/g(t)`:
//!
//! - the coefficient is the Chebyshev fit `c = (max r + min r)/2`, which
//!   minimizes `max |r/c − 1|`;
//! - `sup_ratio = max_{a ≤ b} r(b)/r(a)`, the largest growth of the ratio
//!   across the window. It is 1 for an exact model, at most 1 for a series
//!   decaying faster than the model, and about `ln t_hi / ln t_lo` for a
//!   constant series against `1/ln t`.
//!
//! The claim holds when `sup_ratio ≤ ratio_cap`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{StepSchedule, Trajectory};

pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
pub const DEFAULT_RATIO_CAP: f64 = 1.5;
pub const DEFAULT_VARIANCE_CAP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModel {
    /// `1/ln t`
    InvLog,
    /// `ln ln t / ln t`
    LogLogOverLog,
    /// `ln² t / t^(1−α)`
    PolyLog,
}

impl RateModel {
    pub fn eval(self, t: f64, alpha: Option<f64>) -> f64 {
        let l = t.ln();
        match self {
            RateModel::InvLog => 1.0 / l,
            RateModel::LogLogOverLog => l.ln() / l,
            RateModel::PolyLog => l * l / t.powf(1.0 - alpha.unwrap_or(f64::NAN)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub alpha: Option<f64>,
    pub coefficient: f64,
    pub sup_ratio: f64,
    /// `max_t observed/(c·model)` with the fitted `c`; always below 2.
    pub chebyshev_max: f64,
    pub window: (usize, usize),
    pub window_points: usize,
    pub ratio_cap: f64,
    pub holds: bool,
}

/// Final `fraction` of the points with `t ≥ 3` (by count, at least two).
fn window<T: Copy>(series: &[(usize, T)], fraction: f64) -> Result<Vec<(usize, T)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("window fraction must lie in (0, 1]"));
    }
    let eligible: Vec<(usize, T)> = series.iter().copied().filter(|&(t, _)| t >= 3).collect();
    let k = ((eligible.len() as f64) * fraction).ceil() as usize;
    if k < 2 {
        return Err(Error::Refused(format!(
            "window holds {k} points with t ≥ 3, need at least 2"
        )));
    }
    Ok(eligible[eligible.len() - k..].to_vec())
}

/// Fits `observed ≈ c·model(t)` on the final window of `series`.
pub fn fit_rate(
    series: &[(usize, f64)],
    model: RateModel,
    alpha: Option<f64>,
    window_fraction: f64,
    ratio_cap: f64,
) -> Result<RateFit> {
    if model == RateModel::PolyLog && !alpha.is_some_and(|a| a > 0.0 && a < 1.0) {
        return Err(Error::param("the polylog model needs alpha in (0, 1)"));
    }
    let win = window(series, window_fraction)?;
    let mut ratios = Vec::with_capacity(win.len());
    for &(t, v) in &win {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Refused(format!(
                "series value {v} at t = {t} is not positive"
            )));
        }
        ratios.push(v / model.eval(t as f64, alpha));
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c = 0.5 * (hi + lo);
    let mut sup_ratio: f64 = 1.0;
    let mut run_min = f64::INFINITY;
    for &r in &ratios {
        run_min = run_min.min(r);
        sup_ratio = sup_ratio.max(r / run_min);
    }
    Ok(RateFit {
        model,
        alpha,
        coefficient: c,
        sup_ratio,
        chebyshev_max: hi / c,
        window: (win[0].0, win[win.len() - 1].0),
        window_points: win.len(),
        ratio_cap,
        holds: sup_ratio <= ratio_cap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    /// `(t, value/ln t)` on the window.
    pub series: Vec<(usize, f64)>,
    pub window_max: f64,
    pub window_min: f64,
    pub window_median: f64,
    pub pass: bool,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn summarize(series: Vec<(usize, f64)>, pass: impl Fn(f64, f64, f64) -> bool) -> WindowCheck {
    let vals: Vec<f64> = series.iter().map(|&(_, v)| v).collect();
    let window_max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window_min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let window_median = median(&vals);
    WindowCheck {
        pass: pass(window_max, window_min, window_median),
        series,
        window_max,
        window_min,
        window_median,
    }
}

/// `var_sum(t)/ln t` over the post-stabilization part of the final half of
/// an SGD run; passes when its maximum is at most `cap` times its median.
pub fn verify_variance_bound(traj: &Trajectory, cap: f64) -> Result<WindowCheck> {
    if traj.tainted {
        return Err(Error::Tainted("trajectory clamped an exponent".into()));
    }
    if !matches!(traj.schedule, StepSchedule::Polynomial { .. }) {
        return Err(Error::Refused(
            "variance bound needs a decaying polynomial schedule".into(),
        ));
    }
    let last = traj.last();
    if last.region == crate::margin::RegionLabel::NegativeMisclassified {
        return Err(Error::Refused("region never stabilized".into()));
    }
    let stab = traj.transitions.last().map_or(0, |tr| tr.t);
    let half = last.t / 2;
    if stab > half {
        return Err(Error::Refused(format!(
            "region last changed at t = {stab}, after the window start {half}"
        )));
    }
    let series: Vec<(usize, f64)> = traj.records.iter().map(|r| (r.t, r.var_sum)).collect();
    variance_window(&series, half.max(stab), cap)
}

/// `var_sum(t)/ln t` for recorded `t ≥ max(start, 2)`; passes when the
/// maximum is at most `cap` times the median.
pub fn variance_window(var_sums: &[(usize, f64)], start: usize, cap: f64) -> Result<WindowCheck> {
    let series: Vec<(usize, f64)> = var_sums
        .iter()
        .filter(|&&(t, _)| t >= start.max(2))
        .map(|&(t, v)| (t, v / (t as f64).ln()))
        .collect();
    if series.len() < 3 {
        return Err(Error::Refused("fewer than 3 records in the window".into()));
    }
    Ok(summarize(series, |max, _, med| max <= cap * med))
}

/// `(t, ‖u_t‖/ln t)` on the final window of a norm series; passes when the
/// window minimum is at least half the window median.
pub fn norm_growth(norms: &[(usize, f64)], window_fraction: f64) -> Result<WindowCheck> {
    let win = window(norms, window_fraction)?;
    let series = win
        .into_iter()
        .map(|(t, n)| (t, n / (t as f64).ln()))
        .collect();
    Ok(summarize(series, |_, min, med| min >= 0.5 * med && med > 0.0))
}
