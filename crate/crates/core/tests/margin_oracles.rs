use marginlab::data::{Dataset, Label};
use marginlab::error::Error;
use marginlab::linalg::{dist, dot, norm};
use marginlab::margin::{
    enumerate_local_minima, in_local_region, local_margin, max_margin, region_of, RegionLabel,
};
use proptest::prelude::*;

const GRID: usize = 20_000;

/// `(best γ, best angle)` over a uniform angular grid.
fn grid_margin(points: &[Vec<f64>]) -> (f64, f64) {
    (0..GRID)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / GRID as f64;
            let g = points
                .iter()
                .map(|x| th.cos() * x[0] + th.sin() * x[1])
                .fold(f64::INFINITY, f64::min);
            (g, th)
        })
        .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
}

fn cone_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (0.0f64..std::f64::consts::TAU, 0.05f64..1.4).prop_flat_map(|(center, half)| {
        proptest::collection::vec((-half..half, 0.3f64..3.0), 1..8).prop_map(move |v| {
            v.into_iter()
                .map(|(a, r)| vec![r * (center + a).cos(), r * (center + a).sin()])
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agrees_with_angular_grid(pts in cone_points()) {
        let res = max_margin(&pts, 1e-10, 1_000_000).unwrap();
        let (g, _) = grid_margin(&pts);
        let r = pts.iter().map(|p| norm(p)).fold(0.0, f64::max);
        // The grid can only undershoot, by at most R times the grid spacing.
        prop_assert!(res.gamma >= g - 1e-9);
        prop_assert!(res.gamma <= g + r * std::f64::consts::TAU / GRID as f64);
        prop_assert!(res.certified);
    }

    #[test]
    fn weak_duality_and_primal_feasibility(pts in cone_points(), raw in proptest::collection::vec(0.01f64..1.0, 8)) {
        let res = max_margin(&pts, 1e-10, 1_000_000).unwrap();
        prop_assert!((norm(&res.direction) - 1.0).abs() < 1e-12);
        let primal = pts.iter().map(|p| dot(p, &res.direction)).fold(f64::INFINITY, f64::min);
        prop_assert!((primal - res.gamma).abs() < 1e-12);
        // ‖Xᵀq‖ bounds γ from above for every q in the simplex.
        let q: Vec<f64> = raw[..pts.len()].to_vec();
        let s: f64 = q.iter().sum();
        let mut p = [0.0; 2];
        for (qi, x) in q.iter().zip(&pts) {
            p[0] += qi / s * x[0];
            p[1] += qi / s * x[1];
        }
        prop_assert!(res.gamma <= norm(&p) + 1e-12);
        let qsum: f64 = res.dual_q.iter().sum();
        prop_assert!((qsum - 1.0).abs() < 1e-9);
        prop_assert!(res.dual_q.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn scale_and_rotation_equivariance(pts in cone_points(), c in 0.1f64..20.0, th in 0.0f64..std::f64::consts::TAU) {
        let base = max_margin(&pts, 1e-10, 1_000_000).unwrap();
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0], c * p[1]]).collect();
        let s = max_margin(&scaled, 1e-10, 1_000_000).unwrap();
        prop_assert!((s.gamma - c * base.gamma).abs() <= 1e-8 * c);
        prop_assert!(dist(&s.direction, &base.direction) < 1e-4);
        let rot = |p: &[f64]| vec![th.cos() * p[0] - th.sin() * p[1], th.sin() * p[0] + th.cos() * p[1]];
        let rotated: Vec<Vec<f64>> = pts.iter().map(|p| rot(p)).collect();
        let r = max_margin(&rotated, 1e-10, 1_000_000).unwrap();
        prop_assert!((r.gamma - base.gamma).abs() <= 1e-8);
        prop_assert!(dist(&r.direction, &rot(&base.direction)) < 1e-4);
    }
}

#[test]
fn hull_containing_origin_is_not_certified() {
    let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.5], vec![-1.0, -0.5]];
    let res = max_margin(&pts, 1e-8, 100_000).unwrap();
    assert!(!res.certified);
    assert!(res.gamma <= 0.0);
}

#[test]
fn singleton_local_margin_is_the_point_direction() {
    let ds = Dataset::new(
        vec![vec![2.0, 0.0], vec![-0.5, 1.5], vec![-0.5, -1.0], vec![0.1, -3.0]],
        vec![Label::Positive, Label::Positive, Label::Negative, Label::Positive],
    )
    .unwrap();
    for &i in ds.positives() {
        let (r, _) = local_margin(&ds, &[i], 1e-10, 100_000).unwrap();
        let x = ds.point(i);
        assert!((r.gamma - norm(x)).abs() < 1e-12);
        let u: Vec<f64> = x.iter().map(|v| v / norm(x)).collect();
        assert!(dist(&r.direction, &u) < 1e-12);
    }
}

/// Positives on a fan in the upper half plane, negatives underneath.
fn fan(seed: u64, n_pos: usize) -> Dataset {
    let mut s = seed;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_pos {
        let a = 0.1 + 2.9 * next();
        let r = 0.5 + next();
        points.push(vec![r * a.cos(), r * a.sin()]);
        labels.push(Label::Positive);
    }
    for _ in 0..3 {
        let a = -0.3 - 2.5 * next();
        let r = 0.5 + next();
        points.push(vec![r * a.cos(), r * a.sin()]);
        labels.push(Label::Negative);
    }
    Dataset::new(points, labels).unwrap()
}

#[test]
fn local_minima_match_subset_enumeration_oracle() {
    let mut checked = 0;
    let mut nonempty = 0;
    for seed in 0..12u64 {
        let ds = fan(seed, 6);
        let got = enumerate_local_minima(&ds, None, 1e-10, 1_000_000).unwrap();
        let pos = ds.positives().to_vec();
        let mut expected = Vec::new();
        let mut ambiguous = false;
        for mask in 1u64..(1 << pos.len()) - 1 {
            let j: Vec<usize> = (0..pos.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| pos[b])
                .collect();
            let pts: Vec<Vec<f64>> = j.iter().map(|&i| ds.point(i).to_vec()).collect();
            let (g, th) = grid_margin(&pts);
            if g <= 0.0 {
                continue;
            }
            let u = [th.cos(), th.sin()];
            // Membership with a safety band; near-boundary subsets are skipped.
            let prods: Vec<f64> = ds.points().iter().map(|x| dot(&u, x)).collect();
            let band = prods.iter().any(|p| p.abs() < 1e-3);
            let member = (0..ds.len()).all(|i| (prods[i] > 0.0) == j.contains(&i));
            if band {
                ambiguous = true;
                continue;
            }
            if member {
                expected.push(j);
            }
        }
        if ambiguous {
            continue;
        }
        let found: Vec<Vec<usize>> = got.local.iter().map(|(j, _)| j.clone()).collect();
        let mut a = expected.clone();
        let mut b = found.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b, "seed {seed}");
        checked += 1;
        nonempty += !a.is_empty() as usize;
        for (j, r) in &got.local {
            assert!(in_local_region(&r.direction, &ds, j));
        }
    }
    assert!(checked >= 6 && nonempty >= 1, "{checked} checked, {nonempty} with minima");
}

#[test]
fn region_labels_follow_sign_patterns() {
    let ds = fan(3, 4);
    let l = region_of(&[0.0, 1.0], &ds).unwrap();
    assert!(matches!(l, RegionLabel::Separable | RegionLabel::LocalRegion(_)));
    assert_eq!(region_of(&[0.0, 0.0], &ds).unwrap(), RegionLabel::FiniteLocalMin);
    assert_eq!(region_of(&[0.0, -1.0], &ds).unwrap(), RegionLabel::NegativeMisclassified);
}

#[test]
fn convergence_error_carries_a_usable_iterate() {
    let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
    match max_margin(&pts, 1e-12, 0) {
        Err(Error::Convergence { best, .. }) => {
            assert!((norm(&best.direction) - 1.0).abs() < 1e-12);
        }
        other => panic!("expected a convergence error, got {other:?}"),
    }
}
