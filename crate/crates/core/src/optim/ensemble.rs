use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_sgd, RecordStride, StepSchedule, Trajectory};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelKind;

/// Across-seed statistics at one recorded step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub t: usize,
    /// Mean of `w̄_t`, the estimate of `E w̄_t`.
    pub mean_avg_w: Vec<f64>,
    /// Mean of `L(w̄_t)` and its standard error.
    pub mean_avg_loss: f64,
    pub se_avg_loss: f64,
    pub mean_var_sum: f64,
    pub se_var_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    /// Seeds in ascending order; `members[i]` ran with `seeds[i]`.
    pub seeds: Vec<u64>,
    pub members: Vec<Trajectory>,
    pub points: Vec<EnsemblePoint>,
    pub tainted: bool,
}

/// Mean and standard error `s/√m` (zero when `m = 1`).
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Runs one SGD trajectory per seed (in parallel) and merges them in seed order.
#[allow(clippy::too_many_arguments)]
pub fn run_sgd_ensemble(
    ds: &Dataset,
    kind: ModelKind,
    w0: &[f64],
    schedule: StepSchedule,
    horizon: usize,
    seeds: &[u64],
    stride: RecordStride,
) -> Result<Ensemble> {
    if seeds.len() < 2 {
        return Err(Error::param("an ensemble needs at least two seeds"));
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let members: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&s| run_sgd(ds, kind, w0, schedule, horizon, s, stride))
        .collect::<Result<_>>()?;
    let tainted = members.iter().any(|m| m.tainted);
    let d = ds.dim();
    let m = members.len() as f64;
    let points = (0..members[0].records.len())
        .map(|k| {
            let recs: Vec<_> = members.iter().map(|tr| &tr.records[k]).collect();
            let mut mean_avg_w = vec![0.0; d];
            for r in &recs {
                for (a, x) in mean_avg_w.iter_mut().zip(&r.avg_w) {
                    *a += x;
                }
            }
            for a in &mut mean_avg_w {
                *a /= m;
            }
            let losses: Vec<f64> = recs.iter().map(|r| r.avg_loss).collect();
            let vars: Vec<f64> = recs.iter().map(|r| r.var_sum).collect();
            let (mean_avg_loss, se_avg_loss) = mean_se(&losses);
            let (mean_var_sum, se_var_sum) = mean_se(&vars);
            EnsemblePoint {
                t: recs[0].t,
                mean_avg_w,
                mean_avg_loss,
                se_avg_loss,
                mean_var_sum,
                se_var_sum,
            }
        })
        .collect();
    Ok(Ensemble {
        seeds,
        members,
        points,
        tainted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_combes;

    #[test]
    fn duplicated_seed_equals_single_run() {
        let ds = gen_combes(3, 3, 3, 2).unwrap();
        let sched = StepSchedule::Polynomial { alpha: 0.6 };
        let w0 = [0.05, -0.02, 0.01];
        let e = run_sgd_ensemble(&ds, ModelKind::Relu, &w0, sched, 500, &[7, 7], RecordStride::default())
            .unwrap();
        let single = run_sgd(&ds, ModelKind::Relu, &w0, sched, 500, 7, RecordStride::default()).unwrap();
        for (p, r) in e.points.iter().zip(&single.records) {
            assert_eq!(p.mean_avg_w, r.avg_w);
            assert_eq!(p.mean_avg_loss, r.avg_loss);
            assert_eq!(p.se_avg_loss, 0.0);
        }
    }

    #[test]
    fn seeds_sorted_and_single_seed_rejected() {
        let ds = gen_combes(2, 2, 2, 0).unwrap();
        let sched = StepSchedule::Polynomial { alpha: 0.6 };
        let e = run_sgd_ensemble(&ds, ModelKind::Relu, &[0.1, 0.0], sched, 50, &[5, 1, 3], RecordStride::default())
            .unwrap();
        assert_eq!(e.seeds, vec![1, 3, 5]);
        assert_eq!(e.members[0].rng_seed, Some(1));
        assert!(run_sgd_ensemble(&ds, ModelKind::Relu, &[0.1, 0.0], sched, 50, &[5], RecordStride::default()).is_err());
    }

    #[test]
    fn mean_se_values() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
