//! Observation-probability models and inverse-probability weights.
//!
//! Two models are supported: per-arm observed fractions, and a logistic
//! regression of the observation flag on terms built from `y` and `z`, fitted
//! by iteratively reweighted least squares.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, PatientRecord, TrialData};
use crate::error::{PteError, Result};
use crate::parametric::RANK_TOL;

pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 50;
/// Observed patients with a fitted probability at or below this are rejected.
pub const MIN_PROB: f64 = 1e-12;
const SEPARATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "y:z")]
    YZ,
}

impl Term {
    fn value(self, r: &PatientRecord) -> f64 {
        match self {
            Term::Z => r.z.indicator(),
            Term::Y => r.y,
            Term::YZ => r.y * r.z.indicator(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Z => "z",
            Term::Y => "y",
            Term::YZ => "y:z",
        })
    }
}

/// Logistic-model terms on top of an intercept, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Formula(Vec<Term>);

impl Formula {
    pub fn new(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut v: Vec<Term> = terms.into_iter().collect();
        v.sort();
        v.dedup();
        Formula(v)
    }

    pub fn intercept_only() -> Self {
        Formula(Vec::new())
    }

    pub fn terms(&self) -> &[Term] {
        &self.0
    }

    /// Number of coefficients including the intercept.
    pub fn n_coef(&self) -> usize {
        self.0.len() + 1
    }

    fn row(&self, r: &PatientRecord) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.0.iter().map(|t| t.value(r)))
            .collect()
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.0.iter().map(Term::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Formula {
    type Err = PteError;

    /// Comma-separated terms from `z`, `y`, `y:z`; `1` or an empty string is
    /// the intercept-only model.
    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let term = match part.to_ascii_lowercase().as_str() {
                "1" => continue,
                "z" => Term::Z,
                "y" => Term::Y,
                "y:z" | "z:y" | "yz" | "y*z" => Term::YZ,
                other => {
                    return Err(PteError::Validation(format!(
                        "unknown weight-model term '{other}' (expected z, y, y:z)"
                    )))
                }
            };
            terms.push(term);
        }
        Ok(Formula::new(terms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissingnessModel {
    EmpiricalByArm {
        /// `Pr(O = 1 | Z = z)` for `z = 0, 1`.
        arm_probs: [f64; 2],
    },
    Logistic {
        formula: Formula,
        coefficients: Vec<f64>,
        iterations: usize,
        converged: bool,
        separation: bool,
    },
}

impl MissingnessModel {
    /// Fitted `Pr(O = 1)` for one patient.
    pub fn prob(&self, r: &PatientRecord) -> f64 {
        match self {
            MissingnessModel::EmpiricalByArm { arm_probs } => arm_probs[r.z.index()],
            MissingnessModel::Logistic {
                formula,
                coefficients,
                ..
            } => {
                let eta: f64 = formula
                    .row(r)
                    .iter()
                    .zip(coefficients)
                    .map(|(x, b)| x * b)
                    .sum();
                logistic(eta).0
            }
        }
    }
}

/// `(p, 1 - p)` for `p = 1 / (1 + exp(-eta))`, each computed without cancellation.
fn logistic(eta: f64) -> (f64, f64) {
    if eta >= 0.0 {
        let e = (-eta).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = eta.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

pub fn fit_empirical(data: &TrialData) -> Result<MissingnessModel> {
    let mut arm_probs = [0.0; 2];
    for arm in Arm::BOTH {
        let observed = data.n_observed(arm);
        if observed == 0 {
            return Err(PteError::DegenerateProbability(format!(
                "no observed surrogates in arm {arm}"
            )));
        }
        arm_probs[arm.index()] = observed as f64 / data.n_arm(arm) as f64;
    }
    Ok(MissingnessModel::EmpiricalByArm { arm_probs })
}

/// Bernoulli log-likelihood of the observation flags, from linear predictors.
fn bernoulli_loglik(eta: &[f64], o: &[f64]) -> f64 {
    eta.iter()
        .zip(o)
        .map(|(&e, &oi)| {
            // log p = -log(1 + exp(-e)), log(1 - p) = -log(1 + exp(e))
            let log1pexp = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            if oi > 0.5 {
                -log1pexp(-e)
            } else {
                -log1pexp(e)
            }
        })
        .sum()
}

/// Logistic regression of `O` on `1 + formula` by Newton-Raphson (IRLS),
/// starting from zero with step-halving whenever the likelihood decreases.
pub fn fit_logistic(data: &TrialData, formula: &Formula) -> Result<MissingnessModel> {
    let n = data.len();
    let p = formula.n_coef();
    let mut x = DMatrix::<f64>::zeros(n, p);
    for (i, r) in data.records().iter().enumerate() {
        for (j, v) in formula.row(r).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let o: Vec<f64> = data.records().iter().map(|r| f64::from(r.o())).collect();

    let sv = x.clone().svd(false, false).singular_values;
    if !(sv.min() / sv.max() >= RANK_TOL) {
        return Err(PteError::SingularDesign(format!(
            "weight model design for '{formula}' is rank deficient"
        )));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = vec![0.0; n];
    let mut ll = bernoulli_loglik(&eta, &o);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        // Score X'(o - p) and information X' W X with W = p(1 - p).
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let (pi, qi) = logistic(eta[i]);
            let resid = if o[i] > 0.5 { qi } else { -pi };
            let w = pi * qi;
            let row = x.row(i);
            for a in 0..p {
                score[a] += row[a] * resid;
                for b in 0..=a {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => match info.lu().solve(&score) {
                Some(s) => s,
                None => break,
            },
        };

        let mut scale = 1.0;
        let (new_beta, new_eta, new_ll) = loop {
            let cand = &beta + &step * scale;
            let cand_eta: Vec<f64> = (&x * &cand).iter().copied().collect();
            let cand_ll = bernoulli_loglik(&cand_eta, &o);
            if cand_ll >= ll || scale < 1e-10 {
                break (cand, cand_eta, cand_ll);
            }
            scale *= 0.5;
        };
        let change = (&new_beta - &beta).amax();
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }

    let separation = [0.0, 1.0].iter().any(|&class| {
        let mut members = eta
            .iter()
            .zip(&o)
            .filter(|(_, &oi)| oi == class)
            .peekable();
        members.peek().is_some()
            && members.all(|(&e, _)| {
                let (pi, qi) = logistic(e);
                if class == 1.0 {
                    qi <= SEPARATION_TOL
                } else {
                    pi <= SEPARATION_TOL
                }
            })
    });
    if separation {
        log::warn!("logistic weight model '{formula}': separation detected");
    }
    if !converged {
        log::warn!("logistic weight model '{formula}': no convergence in {iterations} iterations");
    }

    Ok(MissingnessModel::Logistic {
        formula: formula.clone(),
        coefficients: beta.iter().copied().collect(),
        iterations,
        converged,
        separation,
    })
}

/// Per-patient observation probabilities and inverse-probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub probs: Vec<f64>,
    /// `1 / prob` (capped if requested) for observed patients, 0 otherwise.
    pub weights: Vec<f64>,
    pub truncation_cap: Option<f64>,
}

impl WeightSet {
    /// Unit weights on observed patients, zero on the rest.
    pub fn unit(data: &TrialData) -> Self {
        let weights = data
            .records()
            .iter()
            .map(|r| if r.observed() { 1.0 } else { 0.0 })
            .collect();
        WeightSet {
            probs: vec![1.0; data.len()],
            weights,
            truncation_cap: None,
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.weights.len() != n {
            return Err(PteError::Validation(format!(
                "weight set has {} entries for {n} records",
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// `(min, max)` over observed patients.
    pub fn observed_range(&self) -> Option<(f64, f64)> {
        self.weights
            .iter()
            .filter(|w| **w > 0.0)
            .fold(None, |acc, &w| match acc {
                None => Some((w, w)),
                Some((lo, hi)) => Some((lo.min(w), hi.max(w))),
            })
    }
}

pub fn weights_from_model(
    model: &MissingnessModel,
    data: &TrialData,
    cap: Option<f64>,
) -> Result<WeightSet> {
    if let Some(c) = cap {
        if !(c > 0.0) {
            return Err(PteError::Validation(format!("weight cap must be positive, got {c}")));
        }
    }
    let mut probs = Vec::with_capacity(data.len());
    let mut weights = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let p = model.prob(r);
        if r.observed() && !(p > MIN_PROB) {
            return Err(PteError::NearZeroProbability { index: i, prob: p });
        }
        probs.push(p);
        weights.push(if r.observed() {
            let w = 1.0 / p;
            cap.map_or(w, |c| w.min(c))
        } else {
            0.0
        });
    }
    Ok(WeightSet {
        probs,
        weights,
        truncation_cap: cap,
    })
}
