//! Minimal dense vector helpers. Every reduction runs left to right so
//! results are bit-reproducible across runs.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Unit vector along `a`, or `None` when `‖a‖` is below `min_norm`.
pub fn normalized(a: &[f64], min_norm: f64) -> Option<Vec<f64>> {
    let n = norm(a);
    if n <= min_norm || !n.is_finite() {
        None
    } else {
        Some(scale(1.0 / n, a))
    }
}

/// `‖u/‖u‖ − target‖` for a unit `target`; `None` when `u` is (numerically) zero.
pub fn direction_error(u: &[f64], target: &[f64]) -> Option<f64> {
    normalized(u, 1e-12).map(|d| dist(&d, target))
}
