use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_horizon, update_average, Record, RecordStride, RegionTracking, StepSchedule,
    Trajectory, Transition,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::margin::RegionLabel;
use crate::model::{self, ModelKind};

fn check_start(ds: &Dataset, kind: ModelKind, w0: &[f64]) -> Result<()> {
    kind.validate()?;
    ds.check_dim(w0.len())?;
    if w0.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("initial weights must be finite"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    ds: &Dataset,
    kind: ModelKind,
    t: usize,
    w: &[f64],
    avg: &[f64],
    loss: f64,
    region: RegionLabel,
    var_sum: f64,
    overflow: bool,
) -> Result<Record> {
    let avg_eval = model::loss(avg, ds, kind)?;
    Ok(Record {
        t,
        w: w.to_vec(),
        avg_w: avg.to_vec(),
        loss,
        avg_loss: avg_eval.value,
        norm: norm(w),
        region,
        var_sum,
        overflow: overflow || avg_eval.overflow,
    })
}

/// Full-batch gradient descent with a constant step for `horizon` steps.
///
/// The region is checked after every step and every change is logged as a
/// transition. The run stops early, recording the step, if the gradient is
/// exactly zero.
pub fn run_gd(
    ds: &Dataset,
    kind: ModelKind,
    w0: &[f64],
    schedule: StepSchedule,
    horizon: usize,
    stride: RecordStride,
) -> Result<Trajectory> {
    check_start(ds, kind, w0)?;
    check_horizon(horizon)?;
    let schedule = schedule.validate()?;
    let StepSchedule::Constant { eta } = schedule else {
        return Err(Error::param("gradient descent takes a constant step size"));
    };
    let stride = stride.validate()?;
    let steps = stride.steps(horizon);

    let mut w = w0.to_vec();
    let mut avg = w0.to_vec();
    let mut records = Vec::with_capacity(steps.len());
    let mut transitions = Vec::new();
    let mut tainted = false;
    let mut terminated_early = None;
    let mut prev: Option<RegionLabel> = None;
    let mut next = 0;

    for t in 0..=horizon {
        let ev = model::evaluate(&w, ds, kind)?;
        tainted |= ev.overflow;
        let region = RegionLabel::from_products(&ev.products, ds);
        if let Some(p) = &prev {
            if *p != region {
                transitions.push(Transition {
                    t,
                    from: p.clone(),
                    to: region.clone(),
                });
            }
        }
        let zero = ev.grad.iter().all(|&g| g == 0.0);
        if steps[next] == t || zero {
            records.push(make_record(
                ds,
                kind,
                t,
                &w,
                &avg,
                ev.loss,
                region.clone(),
                0.0,
                ev.overflow,
            )?);
            if steps[next] == t {
                next += 1;
            }
        }
        if t == horizon {
            break;
        }
        if zero {
            terminated_early = Some(t);
            break;
        }
        prev = Some(region);
        update_average(&mut avg, &w, t);
        axpy(-eta, &ev.grad, &mut w);
    }

    Ok(Trajectory {
        records,
        transitions,
        tracking: RegionTracking::EveryStep,
        terminated_early,
        tainted,
        final_w: w,
        rng_seed: None,
        horizon,
        kind,
        schedule,
        stride,
    })
}

/// With-replacement SGD with a polynomially decaying step.
///
/// Region labels and full losses are evaluated at recorded steps only;
/// transitions compare consecutive records.
pub fn run_sgd(
    ds: &Dataset,
    kind: ModelKind,
    w0: &[f64],
    schedule: StepSchedule,
    horizon: usize,
    seed: u64,
    stride: RecordStride,
) -> Result<Trajectory> {
    check_start(ds, kind, w0)?;
    check_horizon(horizon)?;
    let schedule = schedule.validate()?;
    if !matches!(schedule, StepSchedule::Polynomial { .. }) {
        return Err(Error::param("SGD takes a polynomial step schedule"));
    }
    let stride = stride.validate()?;
    let steps = stride.steps(horizon);
    let sq_norms: Vec<f64> = ds.points().iter().map(|x| dot(x, x)).collect();
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut w = w0.to_vec();
    let mut avg = w0.to_vec();
    let mut var_sum = 0.0;
    let mut records = Vec::with_capacity(steps.len());
    let mut transitions = Vec::new();
    let mut tainted = false;
    let mut step_overflow = false;
    let mut next = 0;

    for t in 0..=horizon {
        if steps[next] == t {
            next += 1;
            let ev = model::evaluate(&w, ds, kind)?;
            tainted |= ev.overflow;
            let region = RegionLabel::from_products(&ev.products, ds);
            if let Some(p) = records.last().map(|r: &Record| &r.region) {
                if *p != region {
                    transitions.push(Transition {
                        t,
                        from: p.clone(),
                        to: region.clone(),
                    });
                }
            }
            records.push(make_record(
                ds,
                kind,
                t,
                &w,
                &avg,
                ev.loss,
                region,
                var_sum,
                ev.overflow || step_overflow,
            )?);
            step_overflow = false;
        }
        if t == horizon {
            break;
        }
        let i = rng.random_range(0..n);
        let x = ds.point(i);
        let (_, c, of) = model::term(dot(&w, x), ds.label(i), kind);
        tainted |= of;
        step_overflow |= of;
        let eta = schedule.eta(t);
        var_sum += eta * eta * c * c * sq_norms[i];
        update_average(&mut avg, &w, t);
        axpy(-eta * c, x, &mut w);
    }

    Ok(Trajectory {
        records,
        transitions,
        tracking: RegionTracking::RecordedSteps,
        terminated_early: None,
        tainted,
        final_w: w,
        rng_seed: Some(seed),
        horizon,
        kind,
        schedule,
        stride,
    })
}
