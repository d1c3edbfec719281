//! Semiparametric maximum likelihood for the parametric PTE with missing
//! surrogates.
//!
//! The outcome model is the normal linear regression `Y | S, Z ~ N(x'β, σ²)`
//! with `x = (1, z, s, s z)`. The surrogate law `Pr(S | Z = z)` is left
//! nonparametric: a probability vector `p_z` over the distinct observed
//! surrogate values of arm `z`. EM alternates
//!
//! * E-step: for a patient with missing `s`, `φ_k ∝ N(y; x_k'β, σ²) p_kz` over
//!   the arm's support; observed patients are one-hot at their own value.
//! * M-step: weighted least squares of `y` on the support-expanded design with
//!   weights `φ`, `σ² = Σ φ r² / Σ φ`, and `p_kz ∝ Σ_i I(z_i = z) φ_ki`.
//!
//! [`e_step`] and [`m_step`] are the literal operations on a dense `φ` and an
//! expanded pseudo-row design. [`em_fit`] runs the same recursion on
//! accumulated moments with duplicate patients collapsed, which is what makes
//! bootstrap-scale use affordable; tests pin it to the literal path.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, EstimandSet, TrialData};
use crate::error::{PteError, Result};
use crate::parametric::{fit_wls, pte_from_components, ArmMeans, LinearFit, Observation};

pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const SIGMA_FLOOR: f64 = 1e-6;
const INITIAL_SIGMA: f64 = 0.1;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Sorted distinct observed surrogate values per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub points0: Vec<f64>,
    pub points1: Vec<f64>,
}

impl SupportSet {
    pub fn points(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Control => &self.points0,
            Arm::Treated => &self.points1,
        }
    }

    pub fn m(&self, arm: Arm) -> usize {
        self.points(arm).len()
    }

    /// Index of an observed value within its arm's support.
    pub fn index_of(&self, arm: Arm, s: f64) -> Option<usize> {
        self.points(arm).binary_search_by(|v| v.total_cmp(&s)).ok()
    }
}

pub fn build_support(data: &TrialData) -> Result<SupportSet> {
    let distinct = |arm: Arm| -> Result<Vec<f64>> {
        let mut v: Vec<f64> = data.arm_view(arm).filter_map(|r| r.s).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        if v.len() < 2 {
            return Err(PteError::InsufficientSupport {
                arm: arm.index() as u8,
                distinct: v.len(),
            });
        }
        Ok(v)
    };
    Ok(SupportSet {
        points0: distinct(Arm::Control)?,
        points1: distinct(Arm::Treated)?,
    })
}

/// `(β, σ, p0, p1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmleParams {
    pub beta: [f64; 4],
    pub sigma: f64,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
}

impl SmleParams {
    /// `β = 0`, `σ = 0.1`, uniform `p`.
    pub fn initial(support: &SupportSet) -> Self {
        let uniform = |m: usize| vec![1.0 / m as f64; m];
        SmleParams {
            beta: [0.0; 4],
            sigma: INITIAL_SIGMA,
            p0: uniform(support.points0.len()),
            p1: uniform(support.points1.len()),
        }
    }

    pub fn p(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Control => &self.p0,
            Arm::Treated => &self.p1,
        }
    }

    /// Intercept and slope of `E(Y | S = s, Z = arm)` as a line in `s`.
    fn line(&self, arm: Arm) -> (f64, f64) {
        let [b0, b1, b2, b3] = self.beta;
        match arm {
            Arm::Control => (b0, b2),
            Arm::Treated => (b0 + b1, b2 + b3),
        }
    }

    fn max_abs_change(&self, other: &SmleParams) -> f64 {
        let scalars = self
            .beta
            .iter()
            .zip(&other.beta)
            .chain(std::iter::once((&self.sigma, &other.sigma)));
        let probs = self.p0.iter().zip(&other.p0).chain(self.p1.iter().zip(&other.p1));
        scalars
            .chain(probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmleFit {
    #[serde(flatten)]
    pub params: SmleParams,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `σ` hit [`SIGMA_FLOOR`] at some iteration.
    pub sigma_floored: bool,
    /// Observed-data log-likelihood at the initial values and after every
    /// iteration, when requested through [`EmOptions::trace_loglik`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Stop once the largest absolute change over `(β, σ, p0, p1)` is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub trace_loglik: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            trace_loglik: false,
        }
    }
}

/// Conditional support probabilities `φ_ki`, one row per patient over that
/// patient's arm support.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiMatrix {
    pub rows: Vec<Vec<f64>>,
}

fn normal_log_kernel(y: f64, mean: f64, sigma: f64) -> f64 {
    let r = (y - mean) / sigma;
    -0.5 * r * r
}

/// Fills `out` with normalized `φ` for one missing patient; log-space with
/// max-subtraction before exponentiation.
fn posterior_row(y: f64, line: (f64, f64), sigma: f64, points: &[f64], log_p: &[f64], out: &mut [f64]) -> Result<()> {
    let (a, b) = line;
    let mut max = f64::NEG_INFINITY;
    for ((o, &s), &lp) in out.iter_mut().zip(points).zip(log_p) {
        *o = normal_log_kernel(y, a + b * s, sigma) + lp;
        max = max.max(*o);
    }
    if !max.is_finite() {
        return Err(PteError::Internal("E-step numerators all vanish".into()));
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

fn check_params(params: &SmleParams, support: &SupportSet) -> Result<()> {
    if !(params.sigma > 0.0) {
        return Err(PteError::Validation(format!("sigma must be positive, got {}", params.sigma)));
    }
    if params.p0.len() != support.points0.len() || params.p1.len() != support.points1.len() {
        return Err(PteError::Validation("probability vectors do not match the support".into()));
    }
    Ok(())
}

pub fn e_step(params: &SmleParams, data: &TrialData, support: &SupportSet) -> Result<PhiMatrix> {
    check_params(params, support)?;
    let log_p = [
        params.p0.iter().map(|p| p.ln()).collect::<Vec<_>>(),
        params.p1.iter().map(|p| p.ln()).collect::<Vec<_>>(),
    ];
    let mut rows = Vec::with_capacity(data.len());
    for r in data.records() {
        let points = support.points(r.z);
        let mut row = vec![0.0; points.len()];
        match r.s {
            Some(s) => {
                let k = support.index_of(r.z, s).ok_or_else(|| {
                    PteError::Validation(format!("surrogate {s} is not a support point"))
                })?;
                row[k] = 1.0;
            }
            None => posterior_row(
                r.y,
                params.line(r.z),
                params.sigma,
                points,
                &log_p[r.z.index()],
                &mut row,
            )?,
        }
        rows.push(row);
    }
    Ok(PhiMatrix { rows })
}

/// `p_kz = Σ_i I(z_i = z) φ_ki / Σ_k Σ_i I(z_i = z) φ_ki`.
pub fn update_probabilities(phi: &PhiMatrix, data: &TrialData, support: &SupportSet) -> (Vec<f64>, Vec<f64>) {
    let mut counts = [vec![0.0; support.m(Arm::Control)], vec![0.0; support.m(Arm::Treated)]];
    for (r, row) in data.records().iter().zip(&phi.rows) {
        for (c, v) in counts[r.z.index()].iter_mut().zip(row) {
            *c += v;
        }
    }
    let [c0, c1] = counts.map(|c| {
        let total: f64 = c.iter().sum();
        c.into_iter().map(|v| v / total).collect::<Vec<_>>()
    });
    (c0, c1)
}

/// M-step on the expanded design: each patient contributes one pseudo-row
/// `(y_i, s_k, z_i)` with weight `φ_ki` per support point of its arm.
pub fn m_step(phi: &PhiMatrix, data: &TrialData, support: &SupportSet) -> Result<(LinearFit, Vec<f64>, Vec<f64>)> {
    if phi.rows.len() != data.len() {
        return Err(PteError::Validation("phi rows do not match records".into()));
    }
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (r, row) in data.records().iter().zip(&phi.rows) {
        for (&s, &w) in support.points(r.z).iter().zip(row) {
            if w > 0.0 {
                rows.push(Observation { y: r.y, s, z: r.z });
                weights.push(w);
            }
        }
    }
    let fit = fit_wls(&rows, &weights)?;
    let (p0, p1) = update_probabilities(phi, data, support);
    Ok((fit, p0, p1))
}

/// Observed-data log-likelihood of `(β, σ, p0, p1)`.
pub fn observed_loglik(params: &SmleParams, data: &TrialData, support: &SupportSet) -> Result<f64> {
    check_params(params, support)?;
    let sigma = params.sigma;
    let norm = -sigma.ln() - LN_SQRT_2PI;
    let mut total = 0.0;
    for r in data.records() {
        let (a, b) = params.line(r.z);
        let p = params.p(r.z);
        match r.s {
            Some(s) => {
                let k = support.index_of(r.z, s).ok_or_else(|| {
                    PteError::Validation(format!("surrogate {s} is not a support point"))
                })?;
                total += normal_log_kernel(r.y, a + b * s, sigma) + norm + p[k].ln();
            }
            None => {
                let terms: Vec<f64> = support
                    .points(r.z)
                    .iter()
                    .zip(p)
                    .map(|(&s, &pk)| normal_log_kernel(r.y, a + b * s, sigma) + pk.ln())
                    .collect();
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
                total += max + sum.ln() + norm;
            }
        }
    }
    Ok(total)
}

/// Weighted moments of `(s, y)` about fixed per-arm shifts.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    w: f64,
    s: f64,
    ss: f64,
    y: f64,
    yy: f64,
    sy: f64,
}

impl Moments {
    /// Adds `mult` copies of a patient whose `φ`-weighted surrogate moments
    /// are `(1, m1, m2)`; `y` is already shifted.
    fn add(&mut self, mult: f64, y: f64, m1: f64, m2: f64) {
        self.w += mult;
        self.s += mult * m1;
        self.ss += mult * m2;
        self.y += mult * y;
        self.yy += mult * y * y;
        self.sy += mult * y * m1;
    }

    /// Weighted line fit in shifted coordinates: `(intercept, slope, rss)`.
    fn line_fit(&self, arm: Arm) -> Result<(f64, f64, f64)> {
        let s_bar = self.s / self.w;
        let y_bar = self.y / self.w;
        let sxx = self.ss - self.w * s_bar * s_bar;
        let sxy = self.sy - self.w * s_bar * y_bar;
        let syy = self.yy - self.w * y_bar * y_bar;
        if !(self.w > 0.0) || !(sxx > 1e-20 * self.ss.max(self.w)) {
            return Err(PteError::SingularDesign(format!(
                "no surrogate spread in arm {arm} of the expanded design"
            )));
        }
        let slope = sxy / sxx;
        Ok((y_bar - slope * s_bar, slope, (syy - slope * sxy).max(0.0)))
    }
}

/// Patients collapsed for the accumulated EM recursion.
struct CollapsedArm {
    arm: Arm,
    shift_s: f64,
    shift_y: f64,
    /// Shifted support points.
    points: Vec<f64>,
    observed_counts: Vec<f64>,
    observed_moments: Moments,
    /// Distinct missing-surrogate outcomes (unshifted) and multiplicities.
    missing: Vec<(f64, f64)>,
}

impl CollapsedArm {
    fn new(data: &TrialData, support: &SupportSet, arm: Arm) -> Result<Self> {
        let raw = support.points(arm);
        let shift_s = raw.iter().sum::<f64>() / raw.len() as f64;
        let n = data.n_arm(arm) as f64;
        let shift_y = data.arm_view(arm).map(|r| r.y).sum::<f64>() / n;
        let points: Vec<f64> = raw.iter().map(|s| s - shift_s).collect();

        let mut observed_counts = vec![0.0; raw.len()];
        let mut observed_moments = Moments::default();
        let mut missing: Vec<(f64, f64)> = Vec::new();
        let mut seen: HashMap<u64, usize> = HashMap::new();
        for r in data.arm_view(arm) {
            match r.s {
                Some(s) => {
                    let k = support.index_of(arm, s).ok_or_else(|| {
                        PteError::Internal(format!("surrogate {s} missing from support"))
                    })?;
                    observed_counts[k] += 1.0;
                    let sp = points[k];
                    observed_moments.add(1.0, r.y - shift_y, sp, sp * sp);
                }
                None => match seen.get(&r.y.to_bits()) {
                    Some(&j) => missing[j].1 += 1.0,
                    None => {
                        seen.insert(r.y.to_bits(), missing.len());
                        missing.push((r.y, 1.0));
                    }
                },
            }
        }
        Ok(CollapsedArm {
            arm,
            shift_s,
            shift_y,
            points,
            observed_counts,
            observed_moments,
            missing,
        })
    }

    /// One E-step over this arm's missing patients, accumulated directly into
    /// M-step moments and support counts.
    fn accumulate(&self, line: (f64, f64), sigma: f64, p: &[f64], scratch: &mut Vec<f64>) -> Result<(Moments, Vec<f64>)> {
        let (a, b) = line;
        // Mean at shifted support point k: a + b (s_k' + shift_s).
        let a_shifted = a + b * self.shift_s;
        let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let mut moments = self.observed_moments;
        let mut counts = self.observed_counts.clone();
        scratch.resize(self.points.len(), 0.0);
        let inv_sigma = 1.0 / sigma;

        for &(y, mult) in &self.missing {
            let mut max = f64::NEG_INFINITY;
            for ((o, &s), &lp) in scratch.iter_mut().zip(&self.points).zip(&log_p) {
                let r = (y - a_shifted - b * s) * inv_sigma;
                *o = lp - 0.5 * r * r;
                max = max.max(*o);
            }
            if !max.is_finite() {
                return Err(PteError::Internal("E-step numerators all vanish".into()));
            }
            let mut total = 0.0;
            for o in scratch.iter_mut() {
                *o = (*o - max).exp();
                total += *o;
            }
            let (mut m1, mut m2) = (0.0, 0.0);
            for (o, &s) in scratch.iter().zip(&self.points) {
                m1 += o * s;
                m2 += o * s * s;
            }
            let inv = 1.0 / total;
            let scale = mult * inv;
            for (o, c) in scratch.iter().zip(counts.iter_mut()) {
                *c += scale * o;
            }
            moments.add(mult, y - self.shift_y, m1 * inv, m2 * inv);
        }
        Ok((moments, counts))
    }
}

/// EM for the semiparametric likelihood from `β = 0`, `σ = 0.1`, uniform `p`.
///
/// Reaching `max_iter` is not an error: the fit is returned with
/// `converged = false`.
pub fn em_fit(data: &TrialData, options: &EmOptions) -> Result<SmleFit> {
    let support = build_support(data)?;
    em_fit_with_support(data, &support, options)
}

pub fn em_fit_with_support(data: &TrialData, support: &SupportSet, options: &EmOptions) -> Result<SmleFit> {
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(PteError::Validation("EM needs tol > 0 and max_iter >= 1".into()));
    }
    let arms = [
        CollapsedArm::new(data, support, Arm::Control)?,
        CollapsedArm::new(data, support, Arm::Treated)?,
    ];
    let mut params = SmleParams::initial(support);
    let mut trace = options
        .trace_loglik
        .then(|| observed_loglik(&params, data, support))
        .transpose()?
        .map(|ll| vec![ll]);
    let mut scratch = Vec::new();
    let mut sigma_floored = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let mut next_p: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut lines = [(0.0, 0.0); 2];
        let mut rss = 0.0;
        let mut wsum = 0.0;
        for arm in &arms {
            let (moments, counts) =
                arm.accumulate(params.line(arm.arm), params.sigma, params.p(arm.arm), &mut scratch)?;
            let (a_shift, slope, arm_rss) = moments.line_fit(arm.arm)?;
            // Back to raw coordinates: y = shift_y + a' + b (s - shift_s).
            lines[arm.arm.index()] = (arm.shift_y + a_shift - slope * arm.shift_s, slope);
            rss += arm_rss;
            wsum += moments.w;
            let total: f64 = counts.iter().sum();
            next_p[arm.arm.index()] = counts.into_iter().map(|c| c / total).collect();
        }
        let [(a0, b0), (a1, b1)] = lines;
        let mut sigma = (rss / wsum).sqrt();
        if !(sigma >= SIGMA_FLOOR) {
            if !sigma_floored {
                log::warn!("EM: sigma collapsed to {sigma:e}; flooring at {SIGMA_FLOOR:e}");
            }
            sigma = SIGMA_FLOOR;
            sigma_floored = true;
        }
        let [p0, p1] = next_p;
        let next = SmleParams {
            beta: [a0, a1 - a0, b0, b1 - b0],
            sigma,
            p0,
            p1,
        };
        let change = next.max_abs_change(&params);
        params = next;
        if let Some(t) = trace.as_mut() {
            t.push(observed_loglik(&params, data, support)?);
        }
        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM did not converge in {iterations} iterations");
    }

    Ok(SmleFit {
        params,
        iterations,
        converged,
        sigma_floored,
        loglik_trace: trace,
    })
}

/// `α_z = Σ_k s_k p_kz`.
pub fn smle_alphas(params: &SmleParams, support: &SupportSet) -> ArmMeans {
    let mean = |arm: Arm| {
        support
            .points(arm)
            .iter()
            .zip(params.p(arm))
            .map(|(s, p)| s * p)
            .sum::<f64>()
    };
    ArmMeans {
        alpha0: mean(Arm::Control),
        alpha1: mean(Arm::Treated),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmleEstimate {
    pub fit: SmleFit,
    pub means: ArmMeans,
    pub estimands: EstimandSet,
}

pub fn fit_parametric_smle(data: &TrialData, options: &EmOptions) -> Result<SmleEstimate> {
    let support = build_support(data)?;
    let fit = em_fit_with_support(data, &support, options)?;
    let means = smle_alphas(&fit.params, &support);
    let linear = LinearFit {
        beta: fit.params.beta,
        sigma: fit.params.sigma,
    };
    let estimands = pte_from_components(&linear, &means)?;
    Ok(SmleEstimate {
        fit,
        means,
        estimands,
    })
}

pub fn estimate_parametric_smle(data: &TrialData) -> Result<EstimandSet> {
    Ok(fit_parametric_smle(data, &EmOptions::default())?.estimands)
}
