use marginlab::data::{gen_combes, gen_separable, Dataset, Label};
use marginlab::linalg::{dist, norm};
use marginlab::margin::{region_of, RegionLabel};
use marginlab::model::ModelKind;
use marginlab::optim::{run_gd, run_sgd, run_sgd_ensemble, RecordStride, StepSchedule};
use proptest::prelude::*;

fn every(k: usize) -> RecordStride {
    RecordStride::Linear { every: k }
}

fn eta(ds: &Dataset) -> f64 {
    0.1 / (ds.norm_bound() * ds.norm_bound())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn running_average_matches_direct_mean(seed in any::<u64>(), alpha in 0.55f64..0.95) {
        let ds = gen_separable(5, 5, 3, 0.1, seed).unwrap();
        let sched = StepSchedule::Polynomial { alpha };
        let tr = run_sgd(&ds, ModelKind::Relu, &[0.1, -0.2, 0.05], sched, 300, seed, every(1)).unwrap();
        let mut sum = [0.0; 3];
        for (k, r) in tr.records.iter().enumerate() {
            // w̄_t is the mean of w_0..w_{t-1}, with w̄_0 = w_0.
            let mean: Vec<f64> = if k == 0 {
                r.w.clone()
            } else {
                sum.iter().map(|s| s / k as f64).collect()
            };
            prop_assert!(dist(&mean, &r.avg_w) <= 1e-12 * norm(&mean).max(1.0), "k={k} {mean:?} vs {:?}", r.avg_w);
            sum.iter_mut().zip(&r.w).for_each(|(s, w)| *s += w);
        }
    }

    #[test]
    fn linear_gd_loss_is_nonincreasing_below_smoothness_step(seed in any::<u64>()) {
        let ds = gen_separable(6, 6, 3, 0.1, seed).unwrap();
        let sched = StepSchedule::Constant { eta: eta(&ds) };
        let tr = run_gd(&ds, ModelKind::Linear, &[0.0; 3], sched, 2000, every(1)).unwrap();
        for pair in tr.records.windows(2) {
            prop_assert!(pair[1].loss <= pair[0].loss + 1e-15);
        }
    }

    #[test]
    fn sgd_on_combes_data_never_leaves_the_separable_region(seed in any::<u64>()) {
        let ds = gen_combes(6, 6, 3, seed).unwrap();
        let w0 = [0.05, -0.02, 0.03];
        prop_assume!(region_of(&w0, &ds).unwrap() != RegionLabel::FiniteLocalMin);
        let sched = StepSchedule::Polynomial { alpha: 0.6 };
        let tr = run_sgd(&ds, ModelKind::Relu, &w0, sched, 20_000, seed, every(10)).unwrap();
        let first = tr.records.iter().position(|r| r.region == RegionLabel::Separable);
        prop_assert!(first.is_some());
        prop_assert!(tr.records[first.unwrap()..].iter().all(|r| r.region == RegionLabel::Separable));
    }

    #[test]
    fn sgd_is_reproducible_from_its_seed(seed in any::<u64>()) {
        let ds = gen_separable(4, 4, 2, 0.1, 3).unwrap();
        let sched = StepSchedule::Polynomial { alpha: 0.7 };
        let a = run_sgd(&ds, ModelKind::Relu, &[0.1, 0.1], sched, 500, seed, every(7)).unwrap();
        let b = run_sgd(&ds, ModelKind::Relu, &[0.1, 0.1], sched, 500, seed, every(7)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn symmetric_data_keeps_linear_gd_on_the_bisector() {
    let ds = Dataset::new(
        vec![vec![1.0, 0.5], vec![1.0, -0.5], vec![-1.0, 0.5], vec![-1.0, -0.5]],
        vec![Label::Positive, Label::Positive, Label::Negative, Label::Negative],
    )
    .unwrap();
    let sched = StepSchedule::Constant { eta: eta(&ds) };
    let tr = run_gd(&ds, ModelKind::Linear, &[0.0, 0.0], sched, 5000, every(50)).unwrap();
    for r in &tr.records {
        assert_eq!(r.w[1], 0.0);
    }
    assert!(tr.last().w[0] > 1.0);
}

#[test]
fn ensemble_members_equal_single_runs_and_standard_error_shrinks() {
    let ds = gen_combes(5, 5, 3, 8).unwrap();
    let sched = StepSchedule::Polynomial { alpha: 0.6 };
    let w0 = [0.1, 0.0, -0.1];
    let small: Vec<u64> = (0..10).collect();
    let large: Vec<u64> = (0..160).collect();
    let e1 = run_sgd_ensemble(&ds, ModelKind::Relu, &w0, sched, 2000, &small, every(100)).unwrap();
    let e2 = run_sgd_ensemble(&ds, ModelKind::Relu, &w0, sched, 2000, &large, every(100)).unwrap();
    let single = run_sgd(&ds, ModelKind::Relu, &w0, sched, 2000, 3, every(100)).unwrap();
    assert_eq!(e1.members[3], single);
    let se = |e: &marginlab::optim::Ensemble| e.points.last().unwrap().se_var_sum;
    assert!(se(&e2) < se(&e1), "{} vs {}", se(&e2), se(&e1));
}

#[test]
fn constant_schedule_is_rejected_for_sgd_and_polynomial_for_gd() {
    let ds = gen_separable(2, 2, 2, 0.1, 1).unwrap();
    assert!(run_sgd(
        &ds,
        ModelKind::Relu,
        &[0.0, 0.0],
        StepSchedule::Constant { eta: 0.1 },
        10,
        1,
        every(1)
    )
    .is_err());
    assert!(run_gd(
        &ds,
        ModelKind::Relu,
        &[0.0, 0.0],
        StepSchedule::Polynomial { alpha: 0.6 },
        10,
        every(1)
    )
    .is_err());
}
