//! Labelled datasets: construction, validation, generators, transforms and CSV I/O.
//!
//! A [`Dataset`] is immutable once built. It caches the positive and negative
//! index sets and the exact maximum Euclidean norm `B` of its points.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, fmt_f64};
use crate::linalg::{dot, norm};
use crate::margin::{self, MarginResult};

/// Inner products with magnitude at or below this are treated as ties.
pub const STRICT_TOL: f64 = 1e-12;

/// Retry budget for [`gen_combes`].
pub const COMBES_MAX_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(s: i64) -> Option<Label> {
        match s {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => f.write_str("1"),
            Label::Negative => f.write_str("-1"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
    dim: usize,
    norm_bound: f64,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl Dataset {
    /// Validates and builds a dataset. Both classes must be present, every
    /// point must have the same dimension and all coordinates must be finite.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::param(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = points
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::param("dataset is empty"))?;
        if dim == 0 {
            return Err(Error::param("points must have positive dimension"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("non-finite coordinate"));
            }
        }
        let positives: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == Label::Positive)
            .collect();
        let negatives: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == Label::Negative)
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::param("both label classes must be non-empty"));
        }
        let norm_bound = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
        Ok(Dataset {
            points,
            labels,
            dim,
            norm_bound,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    /// `B = max_i ‖x_i‖`.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Indices with label +1, ascending.
    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    /// Indices with label −1, ascending.
    pub fn negatives(&self) -> &[usize] {
        &self.negatives
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    /// Points `y_i x_i`.
    pub fn signed_points(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .zip(&self.labels)
            .map(|(p, l)| p.iter().map(|v| l.sign() * v).collect())
            .collect()
    }

    pub fn positive_points(&self) -> Vec<Vec<f64>> {
        self.positives.iter().map(|&i| self.points[i].clone()).collect()
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }

    /// Writes the dataset as CSV: header `x0,...,x{d-1},label`, one sample per row.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            out.push_str(&format!("x{j},"));
        }
        out.push_str("label\n");
        for (p, l) in self.points.iter().zip(&self.labels) {
            for v in p {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| csv_err(e, 1))?.clone();
        let width = header.len();
        if width < 2 {
            return Err(Error::Parse {
                line: 1,
                field: None,
                message: "header needs at least one coordinate and a label column".into(),
            });
        }
        for (j, name) in header.iter().enumerate() {
            let want = if j + 1 == width {
                "label".to_string()
            } else {
                format!("x{j}")
            };
            if name != want {
                return Err(Error::Parse {
                    line: 1,
                    field: Some(j),
                    message: format!("expected header `{want}`, found `{name}`"),
                });
            }
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(e, 0))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    field: None,
                    message: format!("row has {} fields, header has {width}", rec.len()),
                });
            }
            let mut p = Vec::with_capacity(width - 1);
            for (j, s) in rec.iter().take(width - 1).enumerate() {
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line,
                    field: Some(j),
                    message: format!("`{s}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        field: Some(j),
                        message: format!("`{s}` is not finite"),
                    });
                }
                p.push(v);
            }
            let ls = &rec[width - 1];
            let label = ls
                .trim_start_matches('+')
                .parse::<i64>()
                .ok()
                .and_then(Label::from_sign)
                .ok_or_else(|| Error::Parse {
                    line,
                    field: Some(width - 1),
                    message: format!("label `{ls}` is not 1 or -1"),
                })?;
            points.push(p);
            labels.push(label);
        }
        Dataset::new(points, labels)
    }
}

fn csv_err(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse {
        line,
        field: None,
        message: e.to_string(),
    }
}

/// Result of checking the acute/obtuse (Combes) condition and separability.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub combes_ok: bool,
    /// `(i, j, x_iᵀx_j)` for every pair with the wrong (or tied) sign.
    pub violating_pairs: Vec<(usize, usize, f64)>,
    pub separable: bool,
    pub separability_witness: Option<Vec<f64>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector orthogonal to the unit vector `u`.
fn random_orthogonal_unit(rng: &mut ChaCha8Rng, u: &[f64]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..u.len()).map(|_| rng.sample(StandardNormal)).collect();
        let c = dot(&v, u);
        for (vi, ui) in v.iter_mut().zip(u) {
            *vi -= c * ui;
        }
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn check_counts(n_pos: usize, n_neg: usize, dim: usize) -> Result<()> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::param("n_pos and n_neg must be at least 1"));
    }
    if dim < 2 {
        return Err(Error::param("dim must be at least 2"));
    }
    Ok(())
}

/// Separable data through the origin: a hidden unit `u` is drawn, positives
/// get `uᵀx ≥ min_margin` and negatives `uᵀx ≤ −min_margin`.
pub fn gen_separable(
    n_pos: usize,
    n_neg: usize,
    dim: usize,
    min_margin: f64,
    seed: u64,
) -> Result<Dataset> {
    check_counts(n_pos, n_neg, dim)?;
    if !(min_margin > 0.0 && min_margin.is_finite()) {
        return Err(Error::param("min_margin must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit(&mut rng, dim);
    let mut points = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let label = if i < n_pos {
            Label::Positive
        } else {
            Label::Negative
        };
        loop {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let c = dot(&x, &u);
            let extra: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let s = label.sign() * (min_margin + extra);
            for (xi, ui) in x.iter_mut().zip(&u) {
                *xi += (s - c) * ui;
            }
            // Rounding can leave uᵀx a few ulps short; redraw in that case.
            if label.sign() * dot(&x, &u) >= min_margin {
                points.push(x);
                labels.push(label);
                break;
            }
        }
    }
    Dataset::new(points, labels)
}

/// Data satisfying the Combes condition: positives inside a cone of half-angle
/// 40° around a hidden unit `u`, negatives inside the antipodal cone. Any two
/// same-cone points are less than 80° apart and any cross pair more than 100°.
pub fn gen_combes(n_pos: usize, n_neg: usize, dim: usize, seed: u64) -> Result<Dataset> {
    check_counts(n_pos, n_neg, dim)?;
    let half_angle = 40f64.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..COMBES_MAX_RETRIES {
        let u = random_unit(&mut rng, dim);
        let mut points = Vec::with_capacity(n_pos + n_neg);
        let mut labels = Vec::with_capacity(n_pos + n_neg);
        for i in 0..n_pos + n_neg {
            let label = if i < n_pos {
                Label::Positive
            } else {
                Label::Negative
            };
            let v = random_orthogonal_unit(&mut rng, &u);
            let phi = rng.random_range(0.0..half_angle);
            let r = rng.random_range(0.5..1.5);
            let x: Vec<f64> = u
                .iter()
                .zip(&v)
                .map(|(ui, vi)| label.sign() * r * (phi.cos() * ui + phi.sin() * vi))
                .collect();
            points.push(x);
            labels.push(label);
        }
        let ds = Dataset::new(points, labels)?;
        if combes_violations(&ds).is_empty() {
            return Ok(ds);
        }
    }
    Err(Error::Generation(format!(
        "no conforming Combes dataset after {COMBES_MAX_RETRIES} draws"
    )))
}

/// Two positives and one negative in the plane with `x₁ᵀx₂ < 0` and
/// `x₁ᵀx₃ < 0`: `x₁ = (1, 0)`, `x₂ = (−0.5, 1)`, `x₃ = (−0.5, −1)`.
/// `w = (0.1, 1)` separates it.
pub fn gen_example1() -> Dataset {
    Dataset::new(
        vec![vec![1.0, 0.0], vec![-0.5, 1.0], vec![-0.5, -1.0]],
        vec![Label::Positive, Label::Positive, Label::Negative],
    )
    .expect("fixed dataset is valid")
}

/// Initialization for [`gen_example1`]: active on `x₁` only.
pub fn example1_init() -> Vec<f64> {
    vec![1.0, -0.3]
}

/// One positive `x₁ = (1, 0.6)` and one negative `x₂ = (1, −0.6)`, so that
/// `x₁ᵀx₂ = 0.64 ≤ 0.5‖x₂‖² = 0.68`.
pub fn gen_example2() -> Dataset {
    Dataset::new(
        vec![vec![1.0, 0.6], vec![1.0, -0.6]],
        vec![Label::Positive, Label::Negative],
    )
    .expect("fixed dataset is valid")
}

/// Initialization for [`gen_example2`]: `wᵀx₁ > 0`, `wᵀx₂ < 0`.
pub fn example2_init() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn combes_violations(ds: &Dataset) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            let ip = dot(ds.point(i), ds.point(j));
            let ok = if ds.label(i) == ds.label(j) {
                ip > STRICT_TOL
            } else {
                ip < -STRICT_TOL
            };
            if !ok {
                out.push((i, j, ip));
            }
        }
    }
    out
}

/// Checks the Combes condition pairwise and assesses separability through
/// the origin with the margin solver on `{y_i x_i}`.
pub fn check_combes(ds: &Dataset) -> ConditionReport {
    let violating_pairs = combes_violations(ds);
    let (separable, witness) = separability(ds);
    ConditionReport {
        combes_ok: violating_pairs.is_empty(),
        violating_pairs,
        separable,
        separability_witness: witness,
    }
}

/// `(γ > 0, witness)` from the signed max-margin problem. A non-converged
/// solver result still counts when its primal direction separates.
pub fn separability(ds: &Dataset) -> (bool, Option<Vec<f64>>) {
    let signed = ds.signed_points();
    let res: Option<MarginResult> = match margin::max_margin(
        &signed,
        margin::DEFAULT_TOL,
        margin::DEFAULT_MAX_ITER,
    ) {
        Ok(r) => Some(r),
        Err(Error::Convergence { best, .. }) => Some(*best),
        Err(_) => None,
    };
    match res {
        Some(r) if signed.iter().all(|p| dot(p, &r.direction) > 0.0) => {
            (true, Some(r.direction))
        }
        _ => (false, None),
    }
}

/// Appends `+1` to positive samples and `−1` to negative samples.
pub fn augment(ds: &Dataset) -> Dataset {
    let points = ds
        .points()
        .iter()
        .zip(ds.labels())
        .map(|(p, l)| {
            let mut q = p.clone();
            q.push(l.sign());
            q
        })
        .collect();
    Dataset::new(points, ds.labels().to_vec()).expect("augmentation preserves validity")
}

/// Scales negative samples by `lambda ∈ [0, 1]`; positives and labels are kept.
pub fn leaky_transform(ds: &Dataset, lambda: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda {lambda} outside [0, 1]")));
    }
    let points = ds
        .points()
        .iter()
        .zip(ds.labels())
        .map(|(p, l)| match l {
            Label::Positive => p.clone(),
            Label::Negative => p.iter().map(|v| lambda * v).collect(),
        })
        .collect();
    Dataset::new(points, ds.labels().to_vec())
}
