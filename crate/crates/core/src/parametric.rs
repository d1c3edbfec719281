//! Parametric PTE estimation from the interaction model
//! `E(Y | Z, S) = b0 + b1 Z + b2 S + b3 S Z`.
//!
//! With arm means `a0 = E(S | Z=0)` and `a1 = E(S | Z=1)` the plug-in effects are
//!
//! ```text
//! Δ   = b1 + (b2 + b3) a1 - b2 a0
//! Δ_S = b1 + b3 a0
//! R_S = 1 - Δ_S / Δ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, EstimandSet, TrialData};
use crate::error::{PteError, Result};
use crate::ipw::WeightSet;

/// Smallest/largest singular value ratio below which a design is singular.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// `(b0, b1, b2, b3)`: intercept, treatment, surrogate, interaction.
    pub beta: [f64; 4],
    /// Maximum-likelihood residual scale `sqrt(Σ w r² / Σ w)`.
    pub sigma: f64,
}

impl LinearFit {
    pub fn mean(&self, s: f64, z: Arm) -> f64 {
        let zf = z.indicator();
        self.beta[0] + self.beta[1] * zf + self.beta[2] * s + self.beta[3] * s * zf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmMeans {
    pub alpha0: f64,
    pub alpha1: f64,
}

/// One regression row `(y, s, z)` with a fully observed surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub s: f64,
    pub z: Arm,
}

pub fn design_row(s: f64, z: Arm) -> [f64; 4] {
    let zf = z.indicator();
    [1.0, zf, s, s * zf]
}

/// Weighted least squares on `[1, z, s, s z]`.
///
/// Rows are scaled by `sqrt(w)` and solved through a Householder QR; the
/// singular values of the triangular factor (equal to those of the scaled
/// design) decide rank deficiency.
pub fn fit_wls(rows: &[Observation], weights: &[f64]) -> Result<LinearFit> {
    if rows.len() != weights.len() {
        return Err(PteError::Validation(format!(
            "{} rows but {} weights",
            rows.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(PteError::Validation(format!(
            "weights must be positive and finite, got {w}"
        )));
    }
    if rows.len() < 4 {
        return Err(PteError::SingularDesign(format!(
            "{} rows for 4 coefficients",
            rows.len()
        )));
    }

    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, 4);
    let mut y = DVector::<f64>::zeros(n);
    for (i, (row, &w)) in rows.iter().zip(weights).enumerate() {
        let sw = w.sqrt();
        for (j, v) in design_row(row.s, row.z).iter().enumerate() {
            x[(i, j)] = sw * v;
        }
        y[i] = sw * row.y;
    }

    let beta = solve_least_squares(x, &y)?;
    let beta = [beta[0], beta[1], beta[2], beta[3]];
    let fit = LinearFit { beta, sigma: 0.0 };

    let (rss, wsum) = rows
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(rss, ws), (row, &w)| {
            let r = row.y - fit.mean(row.s, row.z);
            (rss + w * r * r, ws + w)
        });
    Ok(LinearFit {
        beta,
        sigma: (rss / wsum).sqrt(),
    })
}

/// Minimizes `|x b - y|` for a tall `x`, rejecting rank-deficient designs.
pub(crate) fn solve_least_squares(x: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let qr = x.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || !(min / max >= RANK_TOL) {
        return Err(PteError::SingularDesign(format!(
            "singular value ratio {:e} below {RANK_TOL:e}",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| PteError::SingularDesign("triangular solve failed".into()))
}

/// Plug-in `(Δ, Δ_S, R_S)` from a fitted model and arm means.
pub fn pte_from_components(fit: &LinearFit, means: &ArmMeans) -> Result<EstimandSet> {
    let [_, b1, b2, b3] = fit.beta;
    let delta = b1 + (b2 + b3) * means.alpha1 - b2 * means.alpha0;
    let delta_s = b1 + b3 * means.alpha0;
    EstimandSet::from_effects(delta, delta_s)
}

/// Parametric estimate on the observed surrogates.
///
/// Without weights this is the complete-case estimator; with a [`WeightSet`]
/// the regression is weighted and the arm means are Horvitz-Thompson means.
pub fn estimate_parametric(data: &TrialData, weights: Option<&WeightSet>) -> Result<EstimandSet> {
    Ok(fit_parametric(data, weights)?.estimands)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParametricFit {
    pub fit: LinearFit,
    pub means: ArmMeans,
    pub estimands: EstimandSet,
}

pub fn fit_parametric(data: &TrialData, weights: Option<&WeightSet>) -> Result<ParametricFit> {
    if let Some(ws) = weights {
        ws.check_len(data.len())?;
    }
    let mut rows = Vec::with_capacity(data.len());
    let mut w = Vec::with_capacity(data.len());
    let mut sums = [(0.0f64, 0.0f64); 2];
    for (i, r) in data.records().iter().enumerate() {
        let Some(s) = r.s else { continue };
        let wi = weights.map_or(1.0, |ws| ws.weights[i]);
        rows.push(Observation { y: r.y, s, z: r.z });
        w.push(wi);
        let acc = &mut sums[r.z.index()];
        acc.0 += wi * s;
        acc.1 += wi;
    }
    for arm in Arm::BOTH {
        if sums[arm.index()].1 == 0.0 {
            return Err(PteError::EmptyArmAfterFilter(arm.index() as u8));
        }
    }

    let fit = fit_wls(&rows, &w)?;
    let means = ArmMeans {
        alpha0: sums[0].0 / sums[0].1,
        alpha1: sums[1].0 / sums[1].1,
    };
    let estimands = pte_from_components(&fit, &means)?;
    Ok(ParametricFit {
        fit,
        means,
        estimands,
    })
}
