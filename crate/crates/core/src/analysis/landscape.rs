use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm, scale};
use crate::margin::{region_of, RegionLabel};
use crate::model::{self, ModelKind};

pub const DEFAULT_SCALE_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", content = "subset", rename_all = "kebab-case")]
pub enum LandscapeCase {
    /// Separating direction: `L(αw) → n⁻/n`.
    Global,
    /// Activates exactly the positives in the subset: `L(αw) → (n⁻ + n⁺ − |J|)/n`.
    AsymptoticLocal(Vec<usize>),
    /// Activates nothing: `L(αw) = 1` for every `α ≥ 0`.
    FiniteLocal,
    /// Some negative is active, so `L(αw) → ∞`; not a critical direction.
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub case: LandscapeCase,
    /// `f64::INFINITY` for [`LandscapeCase::Divergent`].
    pub limit_loss: f64,
    /// `(α, L(αw))` over the scale grid (ReLU loss).
    pub scale_losses: Vec<(f64, f64)>,
    /// `|L(αw) − limit|` is nonincreasing along the grid. Reported, not enforced.
    pub monotone_approach: bool,
}

/// `(n⁻ + n⁺ − j)/n` as a single rounded division.
pub fn limit_loss_for(ds: &Dataset, active_positives: usize) -> f64 {
    (ds.n_neg() + ds.n_pos() - active_positives) as f64 / ds.len() as f64
}

/// Classifies a unit direction by the exact sign pattern of `wᵀx_i`.
pub fn classify_direction(w: &[f64], ds: &Dataset, scale_grid: &[f64]) -> Result<LandscapeReport> {
    ds.check_dim(w.len())?;
    if (norm(w) - 1.0).abs() > 1e-9 {
        return Err(Error::param("direction must have unit norm"));
    }
    if scale_grid.windows(2).any(|p| p[0] >= p[1]) || scale_grid.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::param("scale grid must be positive and increasing"));
    }
    let (case, limit_loss) = match region_of(w, ds)? {
        RegionLabel::Separable => (LandscapeCase::Global, limit_loss_for(ds, ds.n_pos())),
        RegionLabel::LocalRegion(j) => {
            let l = limit_loss_for(ds, j.len());
            (LandscapeCase::AsymptoticLocal(j), l)
        }
        RegionLabel::FiniteLocalMin => (LandscapeCase::FiniteLocal, 1.0),
        RegionLabel::NegativeMisclassified => (LandscapeCase::Divergent, f64::INFINITY),
    };
    let scale_losses = scale_grid
        .iter()
        .map(|&a| Ok((a, model::loss(&scale(a, w), ds, ModelKind::Relu)?.value)))
        .collect::<Result<Vec<_>>>()?;
    let monotone_approach = if limit_loss.is_finite() {
        scale_losses
            .windows(2)
            .all(|p| (p[1].1 - limit_loss).abs() <= (p[0].1 - limit_loss).abs())
    } else {
        scale_losses.windows(2).all(|p| p[1].1 >= p[0].1)
    };
    Ok(LandscapeReport {
        case,
        limit_loss,
        scale_losses,
        monotone_approach,
    })
}
