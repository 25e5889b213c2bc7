//! Max-margin directions through the dual `min_{q ∈ Δ} ‖Xᵀq‖` and region labels.
//!
//! The dual is solved with away-step Frank–Wolfe and exact line search on
//! `½‖Xᵀq‖²`. When the optimum `p = Xᵀq̄` is nonzero, `p/‖p‖` is the
//! max-margin direction and `‖p‖` its margin. The reported gap is
//! `‖p‖ − min_i x_iᵀp/‖p‖`, the difference between the dual value and the
//! primal margin of the recovered direction.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, scale};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Largest number of candidate subsets [`enumerate_local_minima`] will visit.
pub const ENUMERATION_CAP: usize = 1 << 15;

/// Iterations between exact recomputations of `p` from `q`.
const REFRESH_EVERY: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub direction: Vec<f64>,
    pub gamma: f64,
    pub dual_q: Vec<f64>,
    pub duality_gap: f64,
    pub iterations: usize,
    /// False when the origin lies in the convex hull (within tolerance) and
    /// the direction is only the best primal candidate seen.
    pub certified: bool,
}

fn primal_value(points: &[Vec<f64>], w: &[f64]) -> f64 {
    points.iter().map(|x| dot(x, w)).fold(f64::INFINITY, f64::min)
}

fn recompute(points: &[Vec<f64>], q: &mut [f64], dim: usize) -> Vec<f64> {
    let s: f64 = q.iter().sum();
    let mut p = vec![0.0; dim];
    for (qi, x) in q.iter_mut().zip(points) {
        *qi /= s;
        if *qi != 0.0 {
            for (pj, xj) in p.iter_mut().zip(x) {
                *pj += *qi * xj;
            }
        }
    }
    p
}

struct Best {
    value: f64,
    direction: Vec<f64>,
}

impl Best {
    fn offer(&mut self, points: &[Vec<f64>], cand: &[f64]) {
        let n = norm(cand);
        if n > 0.0 && n.is_finite() {
            let u = scale(1.0 / n, cand);
            let v = primal_value(points, &u);
            if v > self.value {
                self.value = v;
                self.direction = u;
            }
        }
    }
}

/// Certified max-margin direction of `points`.
///
/// Stops when the gap is at most `tol`, or when `‖Xᵀq‖ ≤ tol` (origin in the
/// hull: `certified = false`, `gamma ≤ 0` up to `tol`). Running out of
/// iterations returns [`Error::Convergence`] carrying the last iterate.
pub fn max_margin(points: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<MarginResult> {
    let m = points.len();
    if m == 0 {
        return Err(Error::param("max_margin needs at least one point"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol must be positive"));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::param("points must have positive dimension"));
    }
    if let Some(x) = points.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.len(),
        });
    }

    let start = (0..m)
        .min_by(|&a, &b| norm(&points[a]).total_cmp(&norm(&points[b])))
        .unwrap();
    let mut q = vec![0.0; m];
    q[start] = 1.0;
    let mut p = points[start].clone();
    let mut best = Best {
        value: f64::NEG_INFINITY,
        direction: {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        },
    };
    for x in points {
        best.offer(points, x);
    }

    let mut prods = vec![0.0; m];
    let mut iter = 0usize;
    let mut gap;
    loop {
        if iter > 0 && iter.is_multiple_of(REFRESH_EVERY) {
            p = recompute(points, &mut q, dim);
        }
        for (pr, x) in prods.iter_mut().zip(points) {
            *pr = dot(x, &p);
        }
        let pp = dot(&p, &p);
        let pn = pp.sqrt();
        let (s, smin) = argmin(&prods);

        if pn <= tol {
            p = recompute(points, &mut q, dim);
            if norm(&p) <= tol {
                best.offer(points, &p);
                let gamma = best.value;
                return Ok(MarginResult {
                    direction: best.direction,
                    gamma,
                    duality_gap: (norm(&p) - gamma).max(0.0),
                    dual_q: q,
                    iterations: iter,
                    certified: false,
                });
            }
            continue;
        }
        gap = pn - smin / pn;
        if gap <= tol {
            // Confirm on an exactly recomputed p before certifying.
            p = recompute(points, &mut q, dim);
            let pn = norm(&p);
            if pn > tol {
                let direction = scale(1.0 / pn, &p);
                let gamma = primal_value(points, &direction);
                let g = pn - gamma;
                if g <= tol {
                    return Ok(MarginResult {
                        direction,
                        gamma,
                        dual_q: q,
                        duality_gap: g.max(0.0),
                        iterations: iter,
                        certified: true,
                    });
                }
                gap = g;
            }
        }
        if iter >= max_iter {
            break;
        }
        iter += 1;
        if iter.is_multiple_of(64) {
            best.offer(points, &p);
        }

        // Away vertex: largest x_iᵀp among the support.
        let mut a = usize::MAX;
        let mut amax = f64::NEG_INFINITY;
        for i in 0..m {
            if q[i] > 0.0 && prods[i] > amax {
                amax = prods[i];
                a = i;
            }
        }
        let fw_gap = pp - smin;
        let away_gap = amax - pp;
        if fw_gap >= away_gap || a == s {
            // Toward vertex s: p ← p + γ (x_s − p).
            let d: Vec<f64> = points[s].iter().zip(&p).map(|(x, pi)| x - pi).collect();
            let dd = dot(&d, &d);
            if dd == 0.0 {
                continue;
            }
            let g = (-dot(&p, &d) / dd).clamp(0.0, 1.0);
            if g == 1.0 {
                q.iter_mut().for_each(|v| *v = 0.0);
                q[s] = 1.0;
                p = points[s].clone();
            } else {
                for v in q.iter_mut() {
                    *v *= 1.0 - g;
                }
                q[s] += g;
                for (pi, di) in p.iter_mut().zip(&d) {
                    *pi += g * di;
                }
            }
        } else {
            // Away from vertex a: p ← p + γ (p − x_a), γ ≤ q_a / (1 − q_a).
            let qa = q[a];
            let gmax = qa / (1.0 - qa);
            let d: Vec<f64> = p.iter().zip(&points[a]).map(|(pi, x)| pi - x).collect();
            let dd = dot(&d, &d);
            if dd == 0.0 {
                continue;
            }
            let g = (-dot(&p, &d) / dd).clamp(0.0, gmax);
            for v in q.iter_mut() {
                *v *= 1.0 + g;
            }
            if g == gmax {
                q[a] = 0.0;
            } else {
                q[a] -= g;
            }
            for (pi, di) in p.iter_mut().zip(&d) {
                *pi += g * di;
            }
        }
    }

    p = recompute(points, &mut q, dim);
    best.offer(points, &p);
    let pn = norm(&p);
    let (direction, gamma) = if pn > tol {
        let u = scale(1.0 / pn, &p);
        let g = primal_value(points, &u);
        (u, g)
    } else {
        (best.direction.clone(), best.value)
    };
    Err(Error::Convergence {
        iterations: iter,
        gap,
        best: Box::new(MarginResult {
            direction,
            gamma,
            dual_q: q,
            duality_gap: (pn - gamma).max(0.0),
            iterations: iter,
            certified: false,
        }),
    })
}

fn argmin(v: &[f64]) -> (usize, f64) {
    let mut k = 0;
    let mut b = v[0];
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < b {
            b = x;
            k = i;
        }
    }
    (k, b)
}

/// Weight-space region of `w`, compared against `0.0` exactly.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RegionLabel {
    /// Every sample correctly classified by sign.
    Separable,
    /// Exactly the positives in the set are active; no negative is active.
    LocalRegion(Vec<usize>),
    /// Some negative sample has `wᵀx > 0`.
    NegativeMisclassified,
    /// No sample is active.
    FiniteLocalMin,
}

impl RegionLabel {
    /// Region from precomputed products `wᵀx_i`.
    pub fn from_products(products: &[f64], ds: &Dataset) -> RegionLabel {
        let mut all_neg_strict = true;
        for &i in ds.negatives() {
            let p = products[i];
            if p > 0.0 {
                return RegionLabel::NegativeMisclassified;
            }
            if p == 0.0 {
                all_neg_strict = false;
            }
        }
        let active: Vec<usize> = ds
            .positives()
            .iter()
            .copied()
            .filter(|&i| products[i] > 0.0)
            .collect();
        if active.is_empty() {
            RegionLabel::FiniteLocalMin
        } else if active.len() == ds.n_pos() && all_neg_strict {
            RegionLabel::Separable
        } else {
            RegionLabel::LocalRegion(active)
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, RegionLabel::Separable)
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionLabel::Separable => f.write_str("separable"),
            RegionLabel::NegativeMisclassified => f.write_str("neg-misclassified"),
            RegionLabel::FiniteLocalMin => f.write_str("finite-local-min"),
            RegionLabel::LocalRegion(j) => {
                f.write_str("local:")?;
                for (k, i) in j.iter().enumerate() {
                    if k > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{i}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for RegionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(RegionLabel::Separable),
            "neg-misclassified" => Ok(RegionLabel::NegativeMisclassified),
            "finite-local-min" => Ok(RegionLabel::FiniteLocalMin),
            _ => {
                let rest = s
                    .strip_prefix("local:")
                    .ok_or_else(|| Error::param(format!("unknown region `{s}`")))?;
                let idx = rest
                    .split(';')
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::param(format!("bad index list in `{s}`")))?;
                if idx.is_empty() {
                    return Err(Error::param("empty local region"));
                }
                Ok(RegionLabel::LocalRegion(idx))
            }
        }
    }
}

impl From<RegionLabel> for String {
    fn from(r: RegionLabel) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for RegionLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Region of `w`. The zero vector activates nothing and is a finite local min.
pub fn region_of(w: &[f64], ds: &Dataset) -> Result<RegionLabel> {
    ds.check_dim(w.len())?;
    let products: Vec<f64> = ds.points().iter().map(|x| dot(w, x)).collect();
    Ok(RegionLabel::from_products(&products, ds))
}

/// True iff `w` activates exactly the samples in `j` (all positives).
pub fn in_local_region(w: &[f64], ds: &Dataset, j: &[usize]) -> bool {
    let mut inside = vec![false; ds.len()];
    for &i in j {
        inside[i] = true;
    }
    ds.points()
        .iter()
        .enumerate()
        .all(|(i, x)| (dot(w, x) > 0.0) == inside[i])
}

/// Max-margin direction of the positives in `j`, and whether it lies in
/// the region activating exactly `j`.
pub fn local_margin(
    ds: &Dataset,
    j: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<(MarginResult, bool)> {
    validate_subset(ds, j)?;
    let pts: Vec<Vec<f64>> = j.iter().map(|&i| ds.point(i).to_vec()).collect();
    let r = max_margin(&pts, tol, max_iter)?;
    let member = in_local_region(&r.direction, ds, j);
    Ok((r, member))
}

fn validate_subset(ds: &Dataset, j: &[usize]) -> Result<()> {
    if j.is_empty() {
        return Err(Error::param("index subset must be non-empty"));
    }
    for w in j.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::param("index subset must be strictly increasing"));
        }
    }
    for &i in j {
        if i >= ds.len() || ds.label(i) != Label::Positive {
            return Err(Error::param(format!("index {i} is not a positive sample")));
        }
    }
    Ok(())
}

/// Output of [`enumerate_local_minima`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalMinima {
    /// Max-margin direction over all positives.
    pub global: MarginResult,
    /// Whether the global direction classifies every sample correctly.
    pub global_separable: bool,
    /// Proper subsets `J ⊊ I⁺` whose local direction lies in its own region,
    /// in increasing bitmask order over positive ranks.
    pub local: Vec<(Vec<usize>, MarginResult)>,
}

/// Enumerates the asymptotic local minima `J⁺ ⊊ I⁺` with `|J⁺| ≤ max_subset_size`.
pub fn enumerate_local_minima(
    ds: &Dataset,
    max_subset_size: Option<usize>,
    tol: f64,
    max_iter: usize,
) -> Result<LocalMinima> {
    let pos = ds.positives();
    let np = pos.len();
    let limit = max_subset_size.unwrap_or(np).min(np);
    let count: f64 = (1..=limit).map(|k| binomial(np, k)).sum();
    if np > 63 || count > ENUMERATION_CAP as f64 {
        return Err(Error::EnumerationCap {
            positives: np,
            cap: ENUMERATION_CAP,
        });
    }
    let global = max_margin(&ds.positive_points(), tol, max_iter)?;
    let global_separable = region_of(&global.direction, ds)? == RegionLabel::Separable;

    let full = (1u64 << np) - 1;
    let masks: Vec<u64> = (1..full)
        .filter(|m| (m.count_ones() as usize) <= limit)
        .collect();
    let found: Vec<Option<(Vec<usize>, MarginResult)>> = masks
        .par_iter()
        .map(|&m| {
            let j: Vec<usize> = (0..np).filter(|b| m >> b & 1 == 1).map(|b| pos[b]).collect();
            let (r, member) = local_margin(ds, &j, tol, max_iter)?;
            Ok(member.then_some((j, r)))
        })
        .collect::<Result<_>>()?;
    Ok(LocalMinima {
        global,
        global_separable,
        local: found.into_iter().flatten().collect(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_example1, gen_separable};

    #[test]
    fn single_point() {
        let r = max_margin(&[vec![3.0, 4.0]], 1e-10, 1000).unwrap();
        assert!((r.direction[0] - 0.6).abs() < 1e-12);
        assert!((r.direction[1] - 0.8).abs() < 1e-12);
        assert!((r.gamma - 5.0).abs() < 1e-12);
        assert!(r.certified);
        assert_eq!(r.dual_q, vec![1.0]);
    }

    #[test]
    fn symmetric_pair_gives_bisector() {
        let r = max_margin(&[vec![1.0, 1.0], vec![1.0, -1.0]], 1e-10, 10_000).unwrap();
        assert!((r.direction[0] - 1.0).abs() < 1e-9);
        assert!(r.direction[1].abs() < 1e-9);
        assert!((r.gamma - 1.0).abs() < 1e-9);
        assert!((r.dual_q[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn redundant_interior_point_gets_zero_weight() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![3.0, 0.0]];
        let r = max_margin(&pts, 1e-10, 10_000).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-9);
        assert_eq!(r.dual_q[2], 0.0);
    }

    #[test]
    fn origin_in_hull_is_not_certified() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.1], vec![0.0, -1.0]];
        let r = max_margin(&pts, 1e-8, 100_000).unwrap();
        assert!(!r.certified);
        assert!(r.gamma <= 1e-8);
        assert!((norm(&r.direction) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_point_is_not_certified() {
        let r = max_margin(&[vec![0.0, 0.0], vec![1.0, 0.0]], 1e-8, 1000).unwrap();
        assert!(!r.certified);
        assert!(r.gamma <= 0.0);
    }

    #[test]
    fn convergence_error_carries_best() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
        match max_margin(&pts, 1e-10, 0) {
            Err(Error::Convergence { best, iterations, gap }) => {
                assert_eq!(iterations, 0);
                assert!(gap > 1e-10);
                assert!((norm(&best.direction) - 1.0).abs() < 1e-12);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(max_margin(&[], 1e-8, 10).is_err());
        assert!(max_margin(&[vec![1.0]], 0.0, 10).is_err());
        assert!(max_margin(&[vec![1.0], vec![1.0, 2.0]], 1e-8, 10).is_err());
    }

    #[test]
    fn region_labels() {
        let ds = gen_example1();
        assert_eq!(
            region_of(&[1.0, 0.0], &ds).unwrap(),
            RegionLabel::LocalRegion(vec![0])
        );
        assert_eq!(region_of(&[0.1, 1.0], &ds).unwrap(), RegionLabel::Separable);
        assert_eq!(
            region_of(&[0.0, -1.0], &ds).unwrap(),
            RegionLabel::NegativeMisclassified
        );
        assert_eq!(region_of(&[0.0, 0.0], &ds).unwrap(), RegionLabel::FiniteLocalMin);
        // All positives active but the negative sits on the boundary.
        let ds2 = Dataset::new(
            vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            vec![Label::Positive, Label::Negative],
        )
        .unwrap();
        assert_eq!(
            region_of(&[1.0, 0.0], &ds2).unwrap(),
            RegionLabel::LocalRegion(vec![0])
        );
    }

    #[test]
    fn separating_direction_is_separable() {
        let ds = gen_separable(10, 10, 4, 0.2, 5).unwrap();
        let r = max_margin(&ds.signed_points(), 1e-9, 1_000_000).unwrap();
        assert_eq!(region_of(&r.direction, &ds).unwrap(), RegionLabel::Separable);
    }

    #[test]
    fn region_label_round_trip() {
        for r in [
            RegionLabel::Separable,
            RegionLabel::NegativeMisclassified,
            RegionLabel::FiniteLocalMin,
            RegionLabel::LocalRegion(vec![0, 2, 7]),
        ] {
            assert_eq!(r.to_string().parse::<RegionLabel>().unwrap(), r);
            let js = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<RegionLabel>(&js).unwrap(), r);
        }
        assert_eq!(RegionLabel::LocalRegion(vec![0, 2]).to_string(), "local:0;2");
        assert!("local:".parse::<RegionLabel>().is_err());
        assert!("nope".parse::<RegionLabel>().is_err());
    }

    #[test]
    fn example1_local_margin() {
        let ds = gen_example1();
        let (r, member) = local_margin(&ds, &[0], 1e-10, 1000).unwrap();
        assert!(member);
        assert!((r.direction[0] - 1.0).abs() < 1e-12);
        let all = enumerate_local_minima(&ds, None, 1e-10, 100_000).unwrap();
        assert!(all.local.iter().any(|(j, _)| j == &vec![0]));
        assert!(local_margin(&ds, &[2], 1e-8, 10).is_err());
        assert!(local_margin(&ds, &[], 1e-8, 10).is_err());
    }

    #[test]
    fn enumeration_cap_refuses() {
        let ds = gen_separable(20, 2, 3, 0.1, 1).unwrap();
        assert!(matches!(
            enumerate_local_minima(&ds, None, 1e-8, 1000),
            Err(Error::EnumerationCap { positives: 20, .. })
        ));
        assert!(enumerate_local_minima(&ds, Some(2), 1e-8, 100_000).is_ok());
    }
}
