//! Exponential-loss objective and gradients.
//!
//! Single neuron: `L(w) = (1/n) Σ exp(−y_i σ(wᵀx_i))` with `σ(v) = max(λv, v)`.
//! ReLU is `λ = 0`, linear is `λ = 1`.
//!
//! Network: `f(x) = Σ_k v_k relu(w_kᵀx)`, `L(W) = (1/n) Σ exp(−y_i f(x_i))`,
//! with `v` fixed.
//!
//! Every full-batch gradient is computed as the left-to-right sum of the
//! per-sample gradients divided by `n`, so the averaging identity holds
//! bit for bit. Exponent arguments are clamped at [`EXP_CLAMP`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};

/// Largest exponent passed to `exp`; `e^700 ≈ 1e304`.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "lowercase")]
pub enum ModelKind {
    Relu,
    Leaky(f64),
    Linear,
}

impl ModelKind {
    pub fn validate(self) -> Result<Self> {
        if let ModelKind::Leaky(l) = self {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::param(format!("leaky slope {l} outside (0, 1)")));
            }
        }
        Ok(self)
    }

    #[inline]
    pub fn activation(self, v: f64) -> f64 {
        match self {
            ModelKind::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            ModelKind::Leaky(l) => {
                if v > 0.0 {
                    v
                } else {
                    l * v
                }
            }
            ModelKind::Linear => v,
        }
    }

    /// Derivative used in the gradient; the kink at 0 takes the left slope.
    #[inline]
    pub fn slope(self, v: f64) -> f64 {
        match self {
            ModelKind::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Leaky(l) => {
                if v > 0.0 {
                    1.0
                } else {
                    l
                }
            }
            ModelKind::Linear => 1.0,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Relu => f.write_str("relu"),
            ModelKind::Leaky(l) => write!(f, "leaky:{l}"),
            ModelKind::Linear => f.write_str("linear"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ModelKind::Relu),
            "linear" => Ok(ModelKind::Linear),
            _ => {
                let l = s
                    .strip_prefix("leaky:")
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| Error::param(format!("unknown model kind `{s}`")))?;
                ModelKind::Leaky(l).validate()
            }
        }
    }
}

/// `exp(a)` with `a` clamped to [`EXP_CLAMP`]; the flag reports clamping.
#[inline]
pub fn clamped_exp(a: f64) -> (f64, bool) {
    if a > EXP_CLAMP {
        (EXP_CLAMP.exp(), true)
    } else {
        (a.exp(), false)
    }
}

/// A loss value and whether any exponent was clamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eval {
    pub value: f64,
    pub overflow: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEval {
    pub grad: Vec<f64>,
    pub overflow: bool,
}

/// Loss, gradient and the products `wᵀx_i` from one pass over the data.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub products: Vec<f64>,
    pub overflow: bool,
}

/// `(ℓ, ∂ℓ/∂(wᵀx))` for one sample given `p = wᵀx`.
#[inline]
pub(crate) fn term(p: f64, y: Label, kind: ModelKind) -> (f64, f64, bool) {
    let s = y.sign();
    let (e, of) = clamped_exp(-s * kind.activation(p));
    (e, -s * kind.slope(p) * e, of)
}

pub fn sample_loss(w: &[f64], x: &[f64], y: Label, kind: ModelKind) -> Result<Eval> {
    check_len(w.len(), x.len())?;
    let (e, _, overflow) = term(dot(w, x), y, kind);
    Ok(Eval { value: e, overflow })
}

pub fn sample_grad(w: &[f64], x: &[f64], y: Label, kind: ModelKind) -> Result<GradEval> {
    check_len(w.len(), x.len())?;
    let (_, c, overflow) = term(dot(w, x), y, kind);
    Ok(GradEval {
        grad: x.iter().map(|v| c * v).collect(),
        overflow,
    })
}

pub fn loss(w: &[f64], ds: &Dataset, kind: ModelKind) -> Result<Eval> {
    ds.check_dim(w.len())?;
    let mut sum = 0.0;
    let mut overflow = false;
    for (x, &y) in ds.points().iter().zip(ds.labels()) {
        let (e, _, of) = term(dot(w, x), y, kind);
        sum += e;
        overflow |= of;
    }
    Ok(Eval {
        value: sum / ds.len() as f64,
        overflow,
    })
}

pub fn grad(w: &[f64], ds: &Dataset, kind: ModelKind) -> Result<GradEval> {
    let ev = evaluate(w, ds, kind)?;
    Ok(GradEval {
        grad: ev.grad,
        overflow: ev.overflow,
    })
}

pub fn evaluate(w: &[f64], ds: &Dataset, kind: ModelKind) -> Result<Evaluation> {
    ds.check_dim(w.len())?;
    let n = ds.len() as f64;
    let mut g = vec![0.0; ds.dim()];
    let mut products = Vec::with_capacity(ds.len());
    let mut sum = 0.0;
    let mut overflow = false;
    for (x, &y) in ds.points().iter().zip(ds.labels()) {
        let p = dot(w, x);
        let (e, c, of) = term(p, y, kind);
        sum += e;
        overflow |= of;
        axpy(c, x, &mut g);
        products.push(p);
    }
    for gi in &mut g {
        *gi /= n;
    }
    Ok(Evaluation {
        loss: sum / n,
        grad: g,
        products,
        overflow,
    })
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Activation pattern of one sample: bit `k` is set iff `w_kᵀx > 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern(pub Vec<bool>);

impl Pattern {
    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    /// True iff no neuron is active in both patterns.
    pub fn disjoint(&self, other: &Pattern) -> bool {
        !self.0.iter().zip(&other.0).any(|(&a, &b)| a && b)
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// One hidden ReLU layer with fixed output weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiNeuronNet {
    /// Column `k` is `w_k`.
    w: Vec<Vec<f64>>,
    v: Vec<f64>,
}

impl MultiNeuronNet {
    /// Requires `K ≥ 2`, equal column dimensions, and `v` nonzero with both signs.
    pub fn new(w: Vec<Vec<f64>>, v: Vec<f64>) -> Result<Self> {
        if w.len() != v.len() {
            return Err(Error::param(format!(
                "{} hidden columns but {} output weights",
                w.len(),
                v.len()
            )));
        }
        if w.len() < 2 {
            return Err(Error::param("need at least two hidden neurons"));
        }
        let d = w[0].len();
        if d == 0 {
            return Err(Error::param("hidden weights must have positive dimension"));
        }
        for col in &w {
            check_len(d, col.len())?;
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("non-finite hidden weight"));
            }
        }
        if v.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(Error::param("output weights must be finite and nonzero"));
        }
        if !v.iter().any(|&x| x > 0.0) || !v.iter().any(|&x| x < 0.0) {
            return Err(Error::param("output weights must contain both signs"));
        }
        Ok(MultiNeuronNet { w, v })
    }

    pub fn width(&self) -> usize {
        self.v.len()
    }

    pub fn dim(&self) -> usize {
        self.w[0].len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.w[k]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.v
    }

    /// Applies `w_k += a · delta_k` to every column.
    pub(crate) fn step(&mut self, a: f64, delta: &[Vec<f64>]) {
        for (col, d) in self.w.iter_mut().zip(delta) {
            axpy(a, d, col);
        }
    }

    /// `Σ_{k ∈ h} v_k w_k`.
    pub fn effective_weight(&self, pattern: &Pattern) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for k in pattern.active() {
            axpy(self.v[k], &self.w[k], &mut out);
        }
        out
    }
}

fn check_net(net: &MultiNeuronNet, len: usize) -> Result<()> {
    check_len(net.dim(), len)
}

/// Pre-activations `w_kᵀx`, output `f(x)`.
fn forward_parts(net: &MultiNeuronNet, x: &[f64]) -> (Vec<f64>, f64) {
    let pre: Vec<f64> = net.w.iter().map(|col| dot(col, x)).collect();
    let mut f = 0.0;
    for (p, vk) in pre.iter().zip(&net.v) {
        if *p > 0.0 {
            f += vk * p;
        }
    }
    (pre, f)
}

pub fn net_forward(net: &MultiNeuronNet, x: &[f64]) -> Result<f64> {
    check_net(net, x.len())?;
    Ok(forward_parts(net, x).1)
}

pub fn activation_pattern(net: &MultiNeuronNet, x: &[f64]) -> Result<Pattern> {
    check_net(net, x.len())?;
    Ok(Pattern(net.w.iter().map(|col| dot(col, x) > 0.0).collect()))
}

pub fn net_loss(net: &MultiNeuronNet, ds: &Dataset) -> Result<Eval> {
    check_net(net, ds.dim())?;
    let mut sum = 0.0;
    let mut overflow = false;
    for (x, &y) in ds.points().iter().zip(ds.labels()) {
        let (e, of) = clamped_exp(-y.sign() * forward_parts(net, x).1);
        sum += e;
        overflow |= of;
    }
    Ok(Eval {
        value: sum / ds.len() as f64,
        overflow,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetGradEval {
    /// Column `k` is `∂L/∂w_k`.
    pub grad: Vec<Vec<f64>>,
    pub overflow: bool,
}

/// Adds sample `x`'s gradient into `g`, returning `(ℓ, overflow, pattern)`.
fn accumulate_sample(
    net: &MultiNeuronNet,
    x: &[f64],
    y: Label,
    g: &mut [Vec<f64>],
) -> (f64, bool, Pattern) {
    let (pre, f) = forward_parts(net, x);
    let s = y.sign();
    let (e, of) = clamped_exp(-s * f);
    for (k, col) in g.iter_mut().enumerate() {
        if pre[k] > 0.0 {
            axpy(-net.v[k] * e * s, x, col);
        }
    }
    (e, of, Pattern(pre.iter().map(|&p| p > 0.0).collect()))
}

pub fn net_sample_grad(net: &MultiNeuronNet, x: &[f64], y: Label) -> Result<NetGradEval> {
    check_net(net, x.len())?;
    let mut g = vec![vec![0.0; net.dim()]; net.width()];
    let (_, overflow, _) = accumulate_sample(net, x, y, &mut g);
    Ok(NetGradEval { grad: g, overflow })
}

pub fn net_grad(net: &MultiNeuronNet, ds: &Dataset) -> Result<NetGradEval> {
    let ev = net_evaluate(net, ds)?;
    Ok(NetGradEval {
        grad: ev.grad,
        overflow: ev.overflow,
    })
}

/// Loss, gradient and per-sample patterns from one pass.
#[derive(Clone, Debug)]
pub struct NetEvaluation {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    pub patterns: Vec<Pattern>,
    pub overflow: bool,
}

pub fn net_evaluate(net: &MultiNeuronNet, ds: &Dataset) -> Result<NetEvaluation> {
    check_net(net, ds.dim())?;
    let n = ds.len() as f64;
    let mut g = vec![vec![0.0; net.dim()]; net.width()];
    let mut sum = 0.0;
    let mut overflow = false;
    let mut patterns = Vec::with_capacity(ds.len());
    for (x, &y) in ds.points().iter().zip(ds.labels()) {
        let (e, of, pat) = accumulate_sample(net, x, y, &mut g);
        sum += e;
        overflow |= of;
        patterns.push(pat);
    }
    for col in &mut g {
        for gi in col.iter_mut() {
            *gi /= n;
        }
    }
    Ok(NetEvaluation {
        loss: sum / n,
        grad: g,
        patterns,
        overflow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_example2, gen_separable};

    fn ds(points: Vec<Vec<f64>>, labels: &[i64]) -> Dataset {
        Dataset::new(
            points,
            labels.iter().map(|&l| Label::from_sign(l).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_loss_is_one() {
        let d = gen_separable(4, 5, 3, 0.1, 3).unwrap();
        for kind in [ModelKind::Relu, ModelKind::Leaky(0.3), ModelKind::Linear] {
            let e = loss(&[0.0; 3], &d, kind).unwrap();
            assert_eq!(e.value, 1.0);
            assert!(!e.overflow);
        }
    }

    #[test]
    fn inactive_relu_loss_one_and_gradient_zero() {
        let d = ds(vec![vec![1.0, 0.5], vec![0.5, 1.0], vec![0.5, 0.2]], &[1, 1, -1]);
        let w = [-1.0, -1.0];
        assert_eq!(loss(&w, &d, ModelKind::Relu).unwrap().value, 1.0);
        assert_eq!(grad(&w, &d, ModelKind::Relu).unwrap().grad, vec![0.0, 0.0]);
    }

    #[test]
    fn example2_closed_form() {
        let d = gen_example2();
        let w = [1.0, 0.1];
        let p1 = dot(&w, d.point(0));
        let p2 = dot(&w, d.point(1));
        assert!(p1 > 0.0 && p2 > 0.0);
        let want = ((-p1).exp() + p2.exp()) / 2.0;
        let got = loss(&w, &d, ModelKind::Relu).unwrap().value;
        assert!((got - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn single_sample_gradient_by_hand() {
        let d = ds(vec![vec![2.0, 0.0], vec![0.0, -1.0]], &[1, -1]);
        let g = sample_grad(&[1.0, 0.0], d.point(0), Label::Positive, ModelKind::Relu).unwrap();
        let e = (-2.0f64).exp();
        assert_eq!(g.grad, vec![-e * 2.0, 0.0]);
    }

    #[test]
    fn misclassified_negative_sample_gradient() {
        let x = [0.5, 1.0];
        let w = [1.0, 1.0];
        let g = sample_grad(&w, &x, Label::Negative, ModelKind::Relu).unwrap();
        let e = 1.5f64.exp();
        assert_eq!(g.grad, vec![e * 0.5, e * 1.0]);
        let z = sample_grad(&[-1.0, -1.0], &x, Label::Negative, ModelKind::Relu).unwrap();
        assert_eq!(z.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn averaging_identity_is_exact() {
        let d = gen_separable(7, 6, 4, 0.1, 11).unwrap();
        let w = [0.3, -0.7, 1.1, 0.2];
        for kind in [ModelKind::Relu, ModelKind::Leaky(0.2), ModelKind::Linear] {
            let mut sum = [0.0; 4];
            for i in 0..d.len() {
                let g = sample_grad(&w, d.point(i), d.label(i), kind).unwrap().grad;
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / d.len() as f64).collect();
            assert_eq!(grad(&w, &d, kind).unwrap().grad, mean);
        }
    }

    #[test]
    fn clamp_sets_overflow() {
        let d = ds(vec![vec![1.0, 0.0], vec![1.0, 0.0]], &[1, -1]);
        let e = loss(&[1000.0, 0.0], &d, ModelKind::Relu).unwrap();
        assert!(e.overflow);
        assert!(e.value.is_finite());
        assert!(grad(&[1000.0, 0.0], &d, ModelKind::Relu).unwrap().overflow);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let d = gen_example2();
        assert!(matches!(
            loss(&[1.0], &d, ModelKind::Relu),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(grad(&[1.0, 2.0, 3.0], &d, ModelKind::Linear).is_err());
    }

    #[test]
    fn kind_parsing_and_validation() {
        assert_eq!("relu".parse::<ModelKind>().unwrap(), ModelKind::Relu);
        assert_eq!("leaky:0.25".parse::<ModelKind>().unwrap(), ModelKind::Leaky(0.25));
        assert!("leaky:1".parse::<ModelKind>().is_err());
        assert!("leaky:0".parse::<ModelKind>().is_err());
        assert!("tanh".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::Leaky(0.25).to_string(), "leaky:0.25");
    }

    #[test]
    fn net_validation() {
        let w = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(MultiNeuronNet::new(w.clone(), vec![1.0, -1.0]).is_ok());
        assert!(MultiNeuronNet::new(w.clone(), vec![1.0, 1.0]).is_err());
        assert!(MultiNeuronNet::new(w.clone(), vec![1.0, 0.0]).is_err());
        assert!(MultiNeuronNet::new(vec![vec![1.0, 0.0]], vec![1.0]).is_err());
        assert!(MultiNeuronNet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn net_forward_cancellation_and_zero_input() {
        let net = MultiNeuronNet::new(vec![vec![0.4, -0.2], vec![0.4, -0.2]], vec![1.0, -1.0])
            .unwrap();
        assert_eq!(net_forward(&net, &[3.0, 1.0]).unwrap(), 0.0);
        assert_eq!(net_forward(&net, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(activation_pattern(&net, &[0.0, 0.0]).unwrap().is_empty());
    }

    #[test]
    fn identity_columns_pattern() {
        let net = MultiNeuronNet::new(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let p = activation_pattern(&net, &[1.0, -1.0, -1.0]).unwrap();
        assert_eq!(p, Pattern(vec![true, false, false]));
        assert_eq!(p.to_string(), "100");
    }

    #[test]
    fn all_inactive_net() {
        let d = ds(vec![vec![1.0, 1.0], vec![-1.0, -0.5]], &[1, -1]);
        let net = MultiNeuronNet::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![2.0, -1.0])
            .unwrap();
        assert_eq!(net_loss(&net, &d).unwrap().value, 1.0);
        assert!(net_grad(&net, &d).unwrap().grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn net_averaging_identity_is_exact() {
        let d = gen_separable(5, 5, 3, 0.1, 2).unwrap();
        let net = MultiNeuronNet::new(
            vec![vec![0.3, -0.1, 0.5], vec![-0.2, 0.4, 0.1], vec![0.1, 0.1, -0.3]],
            vec![1.0, -0.5, 0.7],
        )
        .unwrap();
        let mut sum = vec![vec![0.0; 3]; 3];
        for i in 0..d.len() {
            let g = net_sample_grad(&net, d.point(i), d.label(i)).unwrap().grad;
            for (s, gk) in sum.iter_mut().zip(&g) {
                for (a, b) in s.iter_mut().zip(gk) {
                    *a += b;
                }
            }
        }
        let mean: Vec<Vec<f64>> = sum
            .iter()
            .map(|c| c.iter().map(|s| s / d.len() as f64).collect())
            .collect();
        assert_eq!(net_grad(&net, &d).unwrap().grad, mean);
    }

    #[test]
    fn proportional_columns_with_identical_activation() {
        let d = gen_separable(4, 4, 3, 0.2, 8).unwrap();
        let w1 = vec![0.2, -0.3, 0.6];
        let w2: Vec<f64> = w1.iter().map(|x| 2.0 * x).collect();
        let net = MultiNeuronNet::new(vec![w1, w2, vec![-0.1, 0.2, 0.3]], vec![1.5, -0.5, 1.0])
            .unwrap();
        let g = net_grad(&net, &d).unwrap().grad;
        for j in 0..3 {
            let want = (1.5 / -0.5) * g[1][j];
            assert!((g[0][j] - want).abs() <= 1e-14 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn effective_weight_sums_active_columns() {
        let net = MultiNeuronNet::new(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            vec![1.0, -2.0, 0.5],
        )
        .unwrap();
        let h = Pattern(vec![true, false, true]);
        assert_eq!(net.effective_weight(&h), vec![3.5, 5.0]);
        assert!(h.disjoint(&Pattern(vec![false, true, false])));
        assert!(!h.disjoint(&Pattern(vec![true, true, false])));
    }
}
