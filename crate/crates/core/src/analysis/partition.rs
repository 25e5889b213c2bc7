use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::{direction_error, dist, norm};
use crate::margin::{self, max_margin, MarginResult};
use crate::model::Pattern;
use crate::optim::{NetTrajectory, StepSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionLabel {
    Positive,
    Negative,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub pattern: Pattern,
    pub samples: Vec<usize>,
    pub label: PartitionLabel,
    /// All `v_k` with `k` active in the pattern share one sign.
    pub v_sign_uniform: bool,
    /// Max-margin direction of `{y_i x_i : i ∈ 𝓑_h}`; absent for the empty pattern.
    pub margin: Option<MarginResult>,
    /// `(t, ‖u_h/‖u_h‖ − ŵ_h‖)` from the reference step on, where `u_h` is
    /// `w̃_h` for GD and the across-run mean of `w̆_h` for SGD.
    pub direction_error_series: Vec<(usize, f64)>,
    /// Error at the last record is strictly below the error at the first
    /// record with `t ≥ T/10`.
    pub final_decade_decrease: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub reference_step: usize,
    pub partitions: Vec<Partition>,
    pub disjointness_ok: bool,
    pub labels_uniform: bool,
    pub v_sign_uniform: bool,
    pub loss_at_reference: f64,
    pub loss_below_inv_n: bool,
    /// Patterns identical at every step from the reference step on, in all runs.
    pub pattern_stable: bool,
    /// Latest pattern change over all runs (0 if none).
    pub pattern_stable_after: usize,
    /// First pattern change after the reference step, if any.
    pub first_violation: Option<usize>,
    /// `max ‖recursion − definition‖/‖definition‖` from the reference step on.
    pub recursion_max_rel_err: Option<f64>,
    pub uses_average: bool,
}

fn default_reference(runs: &[NetTrajectory], inv_n: f64) -> usize {
    let stable = runs.iter().map(|r| r.pattern_stable_after()).max().unwrap_or(0);
    let base = &runs[0];
    base.records
        .iter()
        .find(|r| r.t >= stable && r.loss < inv_n)
        .or_else(|| base.records.iter().find(|r| r.t >= stable))
        .unwrap_or_else(|| base.records.last().unwrap())
        .t
}

/// Checks the pattern-partition claims on one GD run or on several SGD runs
/// sharing a record grid. Instability is reported through the flags rather
/// than as an error.
pub fn verify_partition_claims(
    runs: &[NetTrajectory],
    ds: &Dataset,
    reference_step: Option<usize>,
) -> Result<PartitionReport> {
    let base = runs
        .first()
        .ok_or_else(|| Error::param("need at least one network trajectory"))?;
    if runs.iter().any(|r| r.tainted) {
        return Err(Error::Tainted("network trajectory clamped an exponent".into()));
    }
    let grid: Vec<usize> = base.records.iter().map(|r| r.t).collect();
    if runs
        .iter()
        .any(|r| r.records.iter().map(|x| x.t).ne(grid.iter().copied()))
    {
        return Err(Error::param("runs must share one record grid"));
    }
    let inv_n = 1.0 / ds.len() as f64;
    let reference = reference_step.unwrap_or_else(|| default_reference(runs, inv_n));
    let ref_idx = grid
        .iter()
        .position(|&t| t == reference)
        .ok_or_else(|| Error::param(format!("step {reference} is not a recorded step")))?;
    let rec = &base.records[ref_idx];

    let first_violation = runs
        .iter()
        .filter_map(|r| r.pattern_change_steps.iter().copied().find(|&t| t > reference))
        .min();
    let pattern_stable_after = runs.iter().map(|r| r.pattern_stable_after()).max().unwrap_or(0);
    let uses_average = matches!(base.schedule, StepSchedule::Polynomial { .. });

    let mut groups: Vec<(Pattern, Vec<usize>)> = Vec::new();
    for (i, p) in rec.patterns.iter().enumerate() {
        match groups.iter_mut().find(|(q, _)| q == p) {
            Some((_, s)) => s.push(i),
            None => groups.push((p.clone(), vec![i])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));

    let nonempty: Vec<&Pattern> = groups.iter().map(|(p, _)| p).filter(|p| !p.is_empty()).collect();
    let disjointness_ok = nonempty
        .iter()
        .enumerate()
        .all(|(a, p)| nonempty[a + 1..].iter().all(|q| p.disjoint(q)));

    let last_t = *grid.last().unwrap();
    let decade_idx = grid.iter().position(|&t| t * 10 >= last_t).unwrap_or(0);

    let mut partitions = Vec::with_capacity(groups.len());
    for (pattern, samples) in groups {
        let pos = samples.iter().all(|&i| ds.label(i) == Label::Positive);
        let neg = samples.iter().all(|&i| ds.label(i) == Label::Negative);
        let label = match (pos, neg) {
            (true, _) => PartitionLabel::Positive,
            (_, true) => PartitionLabel::Negative,
            _ => PartitionLabel::Mixed,
        };
        let signs: Vec<f64> = pattern.active().map(|k| base.v[k].signum()).collect();
        let v_sign_uniform = signs.windows(2).all(|w| w[0] == w[1]);
        let mut part = Partition {
            pattern: pattern.clone(),
            samples: samples.clone(),
            label,
            v_sign_uniform,
            margin: None,
            direction_error_series: Vec::new(),
            final_decade_decrease: None,
        };
        if !pattern.is_empty() {
            let pts: Vec<Vec<f64>> = samples
                .iter()
                .map(|&i| {
                    let s = ds.label(i).sign();
                    ds.point(i).iter().map(|x| s * x).collect()
                })
                .collect();
            let m = match max_margin(&pts, margin::DEFAULT_TOL, margin::DEFAULT_MAX_ITER) {
                Err(Error::Convergence { best, .. }) => *best,
                r => r?,
            };
            part.direction_error_series = effective_series(runs, &pattern, uses_average, ref_idx)
                .into_iter()
                .filter_map(|(t, u)| direction_error(&u, &m.direction).map(|e| (t, e)))
                .collect();
            let at = |t: usize| {
                part.direction_error_series
                    .iter()
                    .find(|&&(s, _)| s == t)
                    .map(|&(_, e)| e)
            };
            part.final_decade_decrease = match (at(grid[decade_idx]), at(last_t)) {
                (Some(a), Some(b)) if grid[decade_idx] < last_t => Some(b < a),
                _ => None,
            };
            part.margin = Some(m);
        }
        partitions.push(part);
    }

    let mut recursion_max_rel_err: Option<f64> = None;
    for run in runs {
        for r in &run.records[ref_idx..] {
            for e in &r.effective {
                if let Some(rec) = &e.recursion {
                    let rel = dist(rec, &e.definition) / norm(&e.definition).max(f64::MIN_POSITIVE);
                    recursion_max_rel_err = Some(recursion_max_rel_err.map_or(rel, |m| m.max(rel)));
                }
            }
        }
    }

    Ok(PartitionReport {
        reference_step: reference,
        labels_uniform: partitions
            .iter()
            .filter(|p| !p.pattern.is_empty())
            .all(|p| p.label != PartitionLabel::Mixed),
        v_sign_uniform: partitions.iter().all(|p| p.v_sign_uniform),
        partitions,
        disjointness_ok,
        loss_at_reference: rec.loss,
        loss_below_inv_n: rec.loss < inv_n,
        pattern_stable: first_violation.is_none(),
        pattern_stable_after,
        first_violation,
        recursion_max_rel_err,
        uses_average,
    })
}

/// Per-record `w̃_h` (single run) or mean of `w̆_h` over runs, from `from` on.
fn effective_series(
    runs: &[NetTrajectory],
    pattern: &Pattern,
    use_average: bool,
    from: usize,
) -> Vec<(usize, Vec<f64>)> {
    let base = &runs[0];
    (from..base.records.len())
        .filter_map(|k| {
            let mut acc: Option<Vec<f64>> = None;
            for run in runs {
                let e = run.records[k].effective.iter().find(|e| &e.pattern == pattern)?;
                let u = if use_average { &e.average } else { &e.definition };
                match &mut acc {
                    None => acc = Some(u.clone()),
                    Some(a) => a.iter_mut().zip(u).for_each(|(x, y)| *x += y),
                }
            }
            let m = runs.len() as f64;
            acc.map(|a| (base.records[k].t, a.into_iter().map(|x| x / m).collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MultiNeuronNet;
    use crate::optim::{run_gd_net, RecordStride};

    fn two_cone() -> Dataset {
        Dataset::new(
            vec![vec![1.0, 0.2], vec![1.0, -0.3], vec![-1.0, 0.1], vec![-1.0, -0.25]],
            vec![Label::Positive, Label::Positive, Label::Negative, Label::Negative],
        )
        .unwrap()
    }

    #[test]
    fn two_neuron_opposite_cones() {
        let ds = two_cone();
        let net = MultiNeuronNet::new(vec![vec![0.5, 0.4], vec![-0.5, -0.4]], vec![1.0, -1.0])
            .unwrap();
        let nt = run_gd_net(&ds, &net, 0.1, 20_000, RecordStride::default()).unwrap();
        let rep = verify_partition_claims(&[nt], &ds, None).unwrap();
        assert_eq!(rep.partitions.len(), 2);
        assert!(rep.disjointness_ok);
        assert!(rep.labels_uniform);
        assert!(rep.v_sign_uniform);
        assert!(rep.pattern_stable);
        assert!(rep.loss_below_inv_n);
        assert!(rep.recursion_max_rel_err.unwrap() < 1e-8);
        for p in &rep.partitions {
            assert_eq!(p.final_decade_decrease, Some(true));
        }
    }

    #[test]
    fn single_partition_covers_active_samples() {
        let ds = Dataset::new(
            vec![vec![1.0, 0.2], vec![1.0, -0.3], vec![0.2, 1.0]],
            vec![Label::Positive, Label::Positive, Label::Negative],
        )
        .unwrap();
        let net = MultiNeuronNet::new(vec![vec![1.0, -2.0], vec![-1.0, -1.0]], vec![1.0, -1.0])
            .unwrap();
        let nt = run_gd_net(&ds, &net, 0.01, 20, RecordStride::Linear { every: 2 }).unwrap();
        let rep = verify_partition_claims(&[nt], &ds, Some(0)).unwrap();
        let active: Vec<&Partition> =
            rep.partitions.iter().filter(|p| !p.pattern.is_empty()).collect();
        assert_eq!(active.len(), 1);
        assert_eq!(active[0].samples, vec![0, 1]);
        let covered: usize = rep.partitions.iter().map(|p| p.samples.len()).sum();
        assert_eq!(covered, ds.len());
    }

    #[test]
    fn unrecorded_reference_is_rejected() {
        let ds = two_cone();
        let net = MultiNeuronNet::new(vec![vec![0.5, 0.0], vec![-0.5, 0.0]], vec![1.0, -1.0])
            .unwrap();
        let nt = run_gd_net(&ds, &net, 0.1, 20, RecordStride::Linear { every: 5 }).unwrap();
        assert!(verify_partition_claims(&[nt], &ds, Some(3)).is_err());
    }
}
