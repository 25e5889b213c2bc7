//! Runners for the one-hidden-layer network with fixed output weights.
//!
//! Besides `W`, the runners track for every activation pattern `h` present
//! in the data the effective weight `w̃_h = Σ_{k ∈ h} v_k w_k` and its running
//! average `w̆_h` since the last pattern change. While the nonempty patterns
//! are pairwise disjoint, `w̃_h` is also propagated by its own recursion
//!
//! `w̃_h ← w̃_h + η (Σ_{k∈h} v_k²) (1/n) Σ_{i∈𝓑_h} exp(−y_i w̃_hᵀx_i) y_i x_i`
//!
//! (one sample and no `1/n` for SGD), so the two can be compared.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_horizon, update_average, RecordStride, StepSchedule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::model::{self, clamped_exp, MultiNeuronNet, Pattern};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveEntry {
    pub pattern: Pattern,
    /// Samples with this pattern, ascending.
    pub samples: Vec<usize>,
    /// `Σ_{k∈h} v_k w_k` from the current `W`.
    pub definition: Vec<f64>,
    /// The recursion's value, when patterns have been disjoint since the last change.
    pub recursion: Option<Vec<f64>>,
    /// Mean of `definition` over the steps from the last pattern change up to `t`.
    pub average: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub t: usize,
    pub w: Vec<Vec<f64>>,
    pub loss: f64,
    pub patterns: Vec<Pattern>,
    /// One entry per distinct nonempty pattern, in pattern order.
    pub effective: Vec<EffectiveEntry>,
    pub overflow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetTrajectory {
    pub records: Vec<NetRecord>,
    pub v: Vec<f64>,
    /// Steps `t ≥ 1` at which some sample's pattern differs from step `t−1`.
    pub pattern_change_steps: Vec<usize>,
    pub terminated_early: Option<usize>,
    pub tainted: bool,
    pub final_net: MultiNeuronNet,
    pub rng_seed: Option<u64>,
    pub horizon: usize,
    pub schedule: StepSchedule,
    pub stride: RecordStride,
}

impl NetTrajectory {
    /// Step from which patterns stay constant to the end; 0 when they never changed.
    pub fn pattern_stable_after(&self) -> usize {
        self.pattern_change_steps.last().copied().unwrap_or(0)
    }
}

struct Group {
    samples: Vec<usize>,
    v_sq: f64,
    recursion: Option<Vec<f64>>,
    average: Vec<f64>,
    count: usize,
}

struct Tracker {
    patterns: Vec<Pattern>,
    groups: BTreeMap<Pattern, Group>,
}

impl Tracker {
    fn build(net: &MultiNeuronNet, patterns: Vec<Pattern>) -> Tracker {
        let mut members: BTreeMap<Pattern, Vec<usize>> = BTreeMap::new();
        for (i, p) in patterns.iter().enumerate() {
            if !p.is_empty() {
                members.entry(p.clone()).or_default().push(i);
            }
        }
        let keys: Vec<&Pattern> = members.keys().collect();
        let disjoint = keys
            .iter()
            .enumerate()
            .all(|(a, p)| keys[a + 1..].iter().all(|q| p.disjoint(q)));
        let v = net.output_weights();
        let groups = members
            .into_iter()
            .map(|(h, samples)| {
                let def = net.effective_weight(&h);
                let v_sq = h.active().map(|k| v[k] * v[k]).sum();
                let g = Group {
                    samples,
                    v_sq,
                    recursion: disjoint.then(|| def.clone()),
                    average: def,
                    count: 0,
                };
                (h, g)
            })
            .collect();
        Tracker { patterns, groups }
    }

    /// Folds the current definitions into the running averages.
    fn accumulate(&mut self, net: &MultiNeuronNet) {
        for (h, g) in &mut self.groups {
            let def = net.effective_weight(h);
            update_average(&mut g.average, &def, g.count);
            g.count += 1;
        }
    }

    fn entries(&self, net: &MultiNeuronNet) -> Vec<EffectiveEntry> {
        self.groups
            .iter()
            .map(|(h, g)| EffectiveEntry {
                pattern: h.clone(),
                samples: g.samples.clone(),
                definition: net.effective_weight(h),
                recursion: g.recursion.clone(),
                average: g.average.clone(),
            })
            .collect()
    }
}

fn patterns_of(net: &MultiNeuronNet, ds: &Dataset) -> Result<Vec<Pattern>> {
    ds.points()
        .iter()
        .map(|x| model::activation_pattern(net, x))
        .collect()
}

fn check_net(ds: &Dataset, net: &MultiNeuronNet, horizon: usize) -> Result<()> {
    ds.check_dim(net.dim())?;
    check_horizon(horizon)
}

/// Adds `scale · exp(−y_i w̃ᵀx_i) y_i x_i` over `samples` into `w̃`.
fn recursion_step(rec: &mut [f64], ds: &Dataset, samples: &[usize], scale: f64) -> bool {
    let mut sum = vec![0.0; rec.len()];
    let mut overflow = false;
    for &i in samples {
        let x = ds.point(i);
        let y = ds.label(i).sign();
        let (e, of) = clamped_exp(-y * dot(rec, x));
        overflow |= of;
        axpy(e * y, x, &mut sum);
    }
    axpy(scale, &sum, rec);
    overflow
}

/// Full-batch GD on `W` with constant step `eta`; `v` never changes.
pub fn run_gd_net(
    ds: &Dataset,
    net0: &MultiNeuronNet,
    eta: f64,
    horizon: usize,
    stride: RecordStride,
) -> Result<NetTrajectory> {
    check_net(ds, net0, horizon)?;
    let schedule = StepSchedule::Constant { eta }.validate()?;
    let stride = stride.validate()?;
    let steps = stride.steps(horizon);
    let n = ds.len() as f64;
    let mut net = net0.clone();
    let mut tracker: Option<Tracker> = None;
    let mut records = Vec::with_capacity(steps.len());
    let mut changes = Vec::new();
    let mut tainted = false;
    let mut terminated_early = None;
    let mut next = 0;

    for t in 0..=horizon {
        let ev = model::net_evaluate(&net, ds)?;
        tainted |= ev.overflow;
        let tr = match tracker.take() {
            Some(tr) if tr.patterns == ev.patterns => tr,
            prev => {
                if prev.is_some() {
                    changes.push(t);
                }
                Tracker::build(&net, ev.patterns.clone())
            }
        };
        let tr = tracker.insert(tr);
        tr.accumulate(&net);
        let zero = ev.grad.iter().flatten().all(|&g| g == 0.0);
        if steps[next] == t || zero {
            records.push(NetRecord {
                t,
                w: net.columns().to_vec(),
                loss: ev.loss,
                patterns: ev.patterns.clone(),
                effective: tr.entries(&net),
                overflow: ev.overflow,
            });
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
        for g in tr.groups.values_mut() {
            if let Some(rec) = &mut g.recursion {
                tainted |= recursion_step(rec, ds, &g.samples, eta * g.v_sq / n);
            }
        }
        net.step(-eta, &ev.grad);
    }

    Ok(NetTrajectory {
        records,
        v: net0.output_weights().to_vec(),
        pattern_change_steps: changes,
        terminated_early,
        tainted,
        final_net: net,
        rng_seed: None,
        horizon,
        schedule,
        stride,
    })
}

/// With-replacement SGD on `W` with a polynomial schedule, sampling as
/// [`super::run_sgd`] does.
pub fn run_sgd_net(
    ds: &Dataset,
    net0: &MultiNeuronNet,
    schedule: StepSchedule,
    horizon: usize,
    seed: u64,
    stride: RecordStride,
) -> Result<NetTrajectory> {
    check_net(ds, net0, horizon)?;
    let schedule = schedule.validate()?;
    if !matches!(schedule, StepSchedule::Polynomial { .. }) {
        return Err(Error::param("SGD takes a polynomial step schedule"));
    }
    let stride = stride.validate()?;
    let steps = stride.steps(horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = net0.clone();
    let mut tracker: Option<Tracker> = None;
    let mut records = Vec::with_capacity(steps.len());
    let mut changes = Vec::new();
    let mut tainted = false;
    let mut step_overflow = false;
    let mut next = 0;

    for t in 0..=horizon {
        let patterns = patterns_of(&net, ds)?;
        let tr = match tracker.take() {
            Some(tr) if tr.patterns == patterns => tr,
            prev => {
                if prev.is_some() {
                    changes.push(t);
                }
                Tracker::build(&net, patterns)
            }
        };
        let tr = tracker.insert(tr);
        tr.accumulate(&net);
        if steps[next] == t {
            next += 1;
            let l = model::net_loss(&net, ds)?;
            tainted |= l.overflow;
            records.push(NetRecord {
                t,
                w: net.columns().to_vec(),
                loss: l.value,
                patterns: tr.patterns.clone(),
                effective: tr.entries(&net),
                overflow: l.overflow || step_overflow,
            });
            step_overflow = false;
        }
        if t == horizon {
            break;
        }
        let i = rng.random_range(0..ds.len());
        let eta = schedule.eta(t);
        let g = model::net_sample_grad(&net, ds.point(i), ds.label(i))?;
        tainted |= g.overflow;
        step_overflow |= g.overflow;
        let h = &tr.patterns[i];
        if let Some(grp) = tr.groups.get_mut(h) {
            if let Some(rec) = &mut grp.recursion {
                let of = recursion_step(rec, ds, &[i], eta * grp.v_sq);
                tainted |= of;
            }
        }
        net.step(-eta, &g.grad);
    }

    Ok(NetTrajectory {
        records,
        v: net0.output_weights().to_vec(),
        pattern_change_steps: changes,
        terminated_early: None,
        tainted,
        final_net: net,
        rng_seed: Some(seed),
        horizon,
        schedule,
        stride,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::linalg::dist;
    use crate::model::ModelKind;
    use crate::optim::run_gd;

    fn two_cone() -> Dataset {
        Dataset::new(
            vec![
                vec![1.0, 0.2],
                vec![1.0, -0.3],
                vec![-1.0, 0.1],
                vec![-1.0, -0.25],
            ],
            vec![Label::Positive, Label::Positive, Label::Negative, Label::Negative],
        )
        .unwrap()
    }

    #[test]
    fn dead_neuron_reduces_to_single_neuron_gd() {
        // All samples lie in the open positive quadrant; neuron 2 points away.
        let ds = Dataset::new(
            vec![vec![1.0, 0.5], vec![0.5, 1.0], vec![0.5, 0.2]],
            vec![Label::Positive, Label::Positive, Label::Negative],
        )
        .unwrap();
        let net = MultiNeuronNet::new(vec![vec![0.2, 0.1], vec![-5.0, -5.0]], vec![1.0, -1.0])
            .unwrap();
        assert!(ds
            .points()
            .iter()
            .all(|x| !model::activation_pattern(&net, x).unwrap().0[1]));
        let nt = run_gd_net(&ds, &net, 0.1, 200, RecordStride::Linear { every: 50 }).unwrap();
        let single = run_gd(
            &ds,
            ModelKind::Relu,
            &[0.2, 0.1],
            StepSchedule::Constant { eta: 0.1 },
            200,
            RecordStride::Linear { every: 50 },
        )
        .unwrap();
        assert!(dist(nt.final_net.column(0), &single.final_w) < 1e-12);
        assert_eq!(nt.final_net.column(1), net.column(1));
    }

    #[test]
    fn recursion_tracks_definition_on_disjoint_patterns() {
        let ds = two_cone();
        let net = MultiNeuronNet::new(
            vec![vec![0.3, 0.0], vec![0.2, 0.05], vec![-0.3, 0.0], vec![-0.1, 0.02]],
            vec![1.0, 0.5, -1.0, -0.5],
        )
        .unwrap();
        let nt = run_gd_net(&ds, &net, 0.05, 2000, RecordStride::default()).unwrap();
        assert!(nt.pattern_change_steps.is_empty());
        assert_eq!(nt.final_net.output_weights(), net.output_weights());
        for r in &nt.records {
            assert_eq!(r.effective.len(), 2);
            for e in &r.effective {
                let rec = e.recursion.as_ref().unwrap();
                let scale = crate::linalg::norm(&e.definition);
                assert!(dist(rec, &e.definition) <= 1e-9 * scale, "t={}", r.t);
            }
        }
    }

    #[test]
    fn proportional_column_updates() {
        let ds = two_cone();
        let net = MultiNeuronNet::new(
            vec![vec![0.3, 0.0], vec![0.2, 0.05], vec![-0.3, 0.0], vec![-0.1, 0.02]],
            vec![1.0, 0.5, -1.0, -0.5],
        )
        .unwrap();
        let nt = run_gd_net(&ds, &net, 0.05, 10, RecordStride::Linear { every: 1 }).unwrap();
        let r0 = &nt.records[0];
        let r1 = &nt.records[1];
        let d = |k: usize, j: usize| (r1.w[k][j] - r0.w[k][j]) / net.output_weights()[k];
        for j in 0..2 {
            assert!((d(0, j) - d(1, j)).abs() <= 1e-12 * d(0, j).abs().max(1e-300));
            assert!((d(2, j) - d(3, j)).abs() <= 1e-12 * d(2, j).abs().max(1e-300));
        }
    }

    #[test]
    fn sgd_net_deterministic_and_recursion_consistent() {
        let ds = two_cone();
        let net = MultiNeuronNet::new(
            vec![vec![0.3, 0.0], vec![0.2, 0.05], vec![-0.3, 0.0], vec![-0.1, 0.02]],
            vec![1.0, 0.5, -1.0, -0.5],
        )
        .unwrap();
        let sched = StepSchedule::Polynomial { alpha: 0.6 };
        let a = run_sgd_net(&ds, &net, sched, 3000, 1, RecordStride::default()).unwrap();
        let b = run_sgd_net(&ds, &net, sched, 3000, 1, RecordStride::default()).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            for e in &r.effective {
                let rec = e.recursion.as_ref().unwrap();
                assert!(dist(rec, &e.definition) <= 1e-9 * crate::linalg::norm(&e.definition));
            }
        }
    }

    #[test]
    fn overlapping_patterns_disable_recursion() {
        let ds = two_cone();
        // Neuron 0 fires on everything with x0 > −0.5·x1·…; make it fire on both cones.
        let net = MultiNeuronNet::new(
            vec![vec![0.0, 1.0], vec![0.3, 0.0], vec![-0.3, 0.0]],
            vec![1.0, 0.5, -1.0],
        )
        .unwrap();
        let nt = run_gd_net(&ds, &net, 0.01, 1, RecordStride::default()).unwrap();
        let r = &nt.records[0];
        let pats: Vec<&Pattern> = r.effective.iter().map(|e| &e.pattern).collect();
        let disjoint = pats
            .iter()
            .enumerate()
            .all(|(a, p)| pats[a + 1..].iter().all(|q| p.disjoint(q)));
        assert!(!disjoint);
        assert!(r.effective.iter().all(|e| e.recursion.is_none()));
    }
}
