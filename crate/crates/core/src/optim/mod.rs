//! GD and with-replacement SGD runners and their recorded trajectories.
//!
//! SGD draws `ξ_t` uniformly from `{0, …, n−1}` with `rand`'s
//! `random_range` on a `ChaCha8Rng` seeded by `seed_from_u64(seed)`, one draw
//! per step in step order. The index stream is therefore a fixed function of
//! the seed and of `n`.

mod ensemble;
mod net;
mod single;

pub use ensemble::{run_sgd_ensemble, Ensemble, EnsemblePoint};
pub use net::{run_gd_net, run_sgd_net, EffectiveEntry, NetRecord, NetTrajectory};
pub use single::{run_gd, run_sgd};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::direction_error;
use crate::margin::RegionLabel;
use crate::model::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `η_k = (k+1)^(−alpha)`, `0.5 < alpha < 1`.
    Polynomial { alpha: f64 },
}

impl StepSchedule {
    #[inline]
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Polynomial { alpha } => ((k + 1) as f64).powf(-alpha),
        }
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            StepSchedule::Constant { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(Error::param(format!("step size {eta} must be positive")))
            }
            StepSchedule::Polynomial { alpha } if !(alpha > 0.5 && alpha < 1.0) => {
                Err(Error::param(format!("exponent {alpha} outside (0.5, 1)")))
            }
            s => Ok(s),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            StepSchedule::Polynomial { alpha } => Some(alpha),
            StepSchedule::Constant { .. } => None,
        }
    }
}

/// Which steps get a full record. Step 0 and step `T` are always recorded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RecordStride {
    /// `{0} ∪ {⌈ratio^j⌉ : j ≥ 0} ∪ {T}`.
    Geometric { ratio: f64 },
    /// Every `every` steps.
    Linear { every: usize },
}

impl Default for RecordStride {
    fn default() -> Self {
        RecordStride::Geometric { ratio: 1.1 }
    }
}

impl RecordStride {
    pub fn validate(self) -> Result<Self> {
        match self {
            RecordStride::Geometric { ratio } if !(ratio > 1.0 && ratio.is_finite()) => {
                Err(Error::param(format!("geometric ratio {ratio} must exceed 1")))
            }
            RecordStride::Linear { every: 0 } => Err(Error::param("linear stride must be ≥ 1")),
            s => Ok(s),
        }
    }

    /// Sorted, deduplicated record steps in `[0, horizon]`.
    pub fn steps(&self, horizon: usize) -> Vec<usize> {
        let mut out = vec![0];
        match *self {
            RecordStride::Geometric { ratio } => {
                let mut j = 0i32;
                loop {
                    let t = ratio.powi(j).ceil();
                    if t > horizon as f64 {
                        break;
                    }
                    let t = t as usize;
                    if t > *out.last().unwrap() {
                        out.push(t);
                    }
                    j += 1;
                }
            }
            RecordStride::Linear { every } => {
                out.extend((1..=horizon / every).map(|k| k * every));
            }
        }
        if *out.last().unwrap() != horizon {
            out.push(horizon);
        }
        out
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::param("horizon T must be at least 1"));
    }
    Ok(())
}

/// State at step `t`, before the step-`t` update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: usize,
    pub w: Vec<f64>,
    /// `w̄_t = (1/t) Σ_{k<t} w_k`, with `w̄_0 = w_0`.
    pub avg_w: Vec<f64>,
    /// `L(w_t)`.
    pub loss: f64,
    /// `L(w̄_t)`.
    pub avg_loss: f64,
    pub norm: f64,
    pub region: RegionLabel,
    /// `Σ_{k<t} η_k² ‖∇ℓ(w_k, z_{ξ_k})‖²`; zero for GD.
    pub var_sum: f64,
    pub overflow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: usize,
    pub from: RegionLabel,
    pub to: RegionLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionTracking {
    /// Region checked after every step (GD).
    EveryStep,
    /// Region checked at recorded steps only (SGD).
    RecordedSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub transitions: Vec<Transition>,
    pub tracking: RegionTracking,
    /// Step at which the full gradient was exactly zero.
    pub terminated_early: Option<usize>,
    /// Some exponent was clamped during the run.
    pub tainted: bool,
    pub final_w: Vec<f64>,
    pub rng_seed: Option<u64>,
    pub horizon: usize,
    pub kind: ModelKind,
    pub schedule: StepSchedule,
    pub stride: RecordStride,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectories always hold step 0")
    }

    /// Header `t,loss,norm_w,var_sum,region,dir_err_global,dir_err_target,overflow`.
    /// Direction errors use the raw iterate; empty cells when no target is
    /// given or the iterate is zero.
    pub fn to_csv(&self, global: Option<&[f64]>, target: Option<&[f64]>) -> String {
        let mut s =
            String::from("t,loss,norm_w,var_sum,region,dir_err_global,dir_err_target,overflow\n");
        let err = |w: &[f64], tgt: Option<&[f64]>| {
            tgt.and_then(|g| direction_error(w, g))
                .map(fmt_f64)
                .unwrap_or_default()
        };
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.t,
                fmt_f64(r.loss),
                fmt_f64(r.norm),
                fmt_f64(r.var_sum),
                r.region,
                err(&r.w, global),
                err(&r.w, target),
                r.overflow
            );
        }
        s
    }

    /// Sidecar with `t,w0..w{d-1},avg0..avg{d-1}`.
    pub fn weights_csv(&self) -> String {
        let d = self.final_w.len();
        let mut s = String::from("t");
        for j in 0..d {
            let _ = write!(s, ",w{j}");
        }
        for j in 0..d {
            let _ = write!(s, ",avg{j}");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{}", r.t);
            for v in r.w.iter().chain(&r.avg_w) {
                let _ = write!(s, ",{}", fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }

    /// Header `t,from,to`.
    pub fn transitions_csv(&self) -> String {
        let mut s = String::from("t,from,to\n");
        for tr in &self.transitions {
            let _ = writeln!(s, "{},{},{}", tr.t, tr.from, tr.to);
        }
        s
    }
}

/// Running-mean update `avg ← avg + (w − avg)/(t+1)`.
#[inline]
pub(crate) fn update_average(avg: &mut [f64], w: &[f64], t: usize) {
    let inv = 1.0 / (t + 1) as f64;
    for (a, x) in avg.iter_mut().zip(w) {
        *a += (x - *a) * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_schedule_values() {
        let s = StepSchedule::Polynomial { alpha: 0.6 };
        assert_eq!(s.eta(0), 1.0);
        assert_eq!(s.eta(3), 4f64.powf(-0.6));
        assert_eq!(StepSchedule::Constant { eta: 0.3 }.eta(1000), 0.3);
        assert!(StepSchedule::Polynomial { alpha: 0.5 }.validate().is_err());
        assert!(StepSchedule::Polynomial { alpha: 1.0 }.validate().is_err());
        assert!(StepSchedule::Constant { eta: 0.0 }.validate().is_err());
    }

    #[test]
    fn geometric_steps() {
        let s = RecordStride::default().steps(20);
        assert_eq!(s[..4], [0, 1, 2, 3]);
        assert_eq!(*s.last().unwrap(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let big = RecordStride::default().steps(1_000_000);
        assert!(big.len() < 200, "{}", big.len());
    }

    #[test]
    fn linear_steps() {
        assert_eq!(RecordStride::Linear { every: 3 }.steps(10), vec![0, 3, 6, 9, 10]);
        assert_eq!(RecordStride::Linear { every: 5 }.steps(10), vec![0, 5, 10]);
        assert!(RecordStride::Linear { every: 0 }.validate().is_err());
    }

    #[test]
    fn running_mean_matches_direct_mean() {
        let ws = [vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5], vec![2.0, 2.0]];
        let mut avg = ws[0].clone();
        for (t, w) in ws.iter().enumerate() {
            update_average(&mut avg, w, t);
        }
        let direct: Vec<f64> = (0..2).map(|j| ws.iter().map(|w| w[j]).sum::<f64>() / 4.0).collect();
        for j in 0..2 {
            assert!((avg[j] - direct[j]).abs() < 1e-15);
        }
    }
}
