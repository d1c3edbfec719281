//! Monte Carlo bench: simulated trials with missing surrogates and the
//! bias / coverage / efficiency summaries used to compare methods.
//!
//! Trials follow `S | Z ~ N(μ_Z, σ²_Z)`, `Y = 2 + Z + 5S + ZS + ε`, `ε ~ N(0, 1)`,
//! with `n/2` patients per arm. Settings differ in the observation law and,
//! for setting 5, in the spread of the treated surrogate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::bootstrap_inference;
use crate::data::{Arm, EstimandSet, PatientRecord, TrialData};
use crate::error::{PteError, Result};
use crate::ipw::{Formula, Term};
use crate::parametric::{pte_from_components, ArmMeans, LinearFit};
use crate::pipeline::{Correction, EstimatorKind, PipelineConfig, WeightSpec};
use crate::rng::{derive_seed, stream_rng, Stream};

pub const DEFAULT_N: usize = 2000;
pub const DEFAULT_REPS: usize = 1000;
pub const DESK_REPS: usize = 200;

/// `Pr(O = 1 | Y, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissingnessLaw {
    Constant { prob: f64 },
    /// `expit(intercept + z·Z + y·Y + yz·Y·Z)`.
    Logistic { intercept: f64, z: f64, y: f64, yz: f64 },
}

impl MissingnessLaw {
    pub fn prob(&self, y: f64, z: Arm) -> f64 {
        match *self {
            MissingnessLaw::Constant { prob } => prob,
            MissingnessLaw::Logistic { intercept, z: bz, y: by, yz } => {
                let zf = z.indicator();
                let eta = intercept + bz * zf + by * y + yz * y * zf;
                1.0 / (1.0 + (-eta).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: u8,
    pub n: usize,
    /// Surrogate means for arms 0 and 1.
    pub s_mean: [f64; 2],
    /// Surrogate variances for arms 0 and 1.
    pub s_var: [f64; 2],
    /// Outcome regression `(b0, b1, b2, b3)` on `(1, z, s, s z)`.
    pub beta: [f64; 4],
    pub error_sd: f64,
    pub missingness: MissingnessLaw,
}

impl SettingSpec {
    /// Settings 1–5.
    pub fn standard(id: u8, n: usize) -> Result<Self> {
        let logit = |intercept, z, y, yz| MissingnessLaw::Logistic { intercept, z, y, yz };
        let missingness = match id {
            1 => MissingnessLaw::Constant { prob: 0.65 },
            2 => logit(0.4, 0.2, 0.0, 0.0),
            3 | 5 => logit(0.0, 0.0, 0.015, 0.0),
            4 => logit(0.0, 0.0, 0.015, 0.015),
            _ => return Err(PteError::Validation(format!("unknown setting {id}; expected 1-5"))),
        };
        let spec = SettingSpec {
            id,
            n,
            s_mean: [5.0, 6.0],
            s_var: [1.0, if id == 5 { 0.25 } else { 4.0 }],
            beta: [2.0, 1.0, 5.0, 1.0],
            error_sd: 1.0,
            missingness,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(PteError::Validation(format!(
                "n must be even and at least 4, got {}",
                self.n
            )));
        }
        if self.s_var.iter().any(|v| !(*v > 0.0)) || !(self.error_sd >= 0.0) {
            return Err(PteError::Validation("variances must be positive".into()));
        }
        Ok(())
    }

    /// Population `(Δ, Δ_S, R_S)` from the generating regression and means.
    pub fn truth(&self) -> Result<EstimandSet> {
        pte_from_components(
            &LinearFit {
                beta: self.beta,
                sigma: self.error_sd,
            },
            &ArmMeans {
                alpha0: self.s_mean[0],
                alpha1: self.s_mean[1],
            },
        )
    }

    /// Weight formula that matches (or, for settings 3 and 5, contains) the
    /// observation law.
    pub fn default_weights(&self) -> WeightSpec {
        let formula = match self.id {
            1 | 2 => vec![Term::Z],
            4 => vec![Term::Y, Term::YZ],
            _ => vec![Term::Y, Term::Z, Term::YZ],
        };
        WeightSpec::Logistic(Formula::new(formula))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrial {
    /// Every surrogate observed.
    pub full: TrialData,
    /// Surrogates removed where `O = 0`.
    pub masked: TrialData,
    pub truth: EstimandSet,
}

/// Trial for Monte Carlo replicate `replicate` under `seed`.
///
/// Surrogates, outcome noise and observation draws come from separate
/// streams, so settings sharing the surrogate law share the full data.
pub fn generate_trial(spec: &SettingSpec, seed: u64, replicate: u64) -> Result<GeneratedTrial> {
    spec.validate()?;
    let mut s_rng = stream_rng(seed, replicate, Stream::Surrogate);
    let mut e_rng = stream_rng(seed, replicate, Stream::OutcomeNoise);
    let mut o_rng = stream_rng(seed, replicate, Stream::Missingness);
    let half = spec.n / 2;
    let [b0, b1, b2, b3] = spec.beta;

    let mut records = Vec::with_capacity(spec.n);
    let mut observed = Vec::with_capacity(spec.n);
    for arm in Arm::BOTH {
        let k = arm.index();
        let sd = spec.s_var[k].sqrt();
        let zf = arm.indicator();
        for _ in 0..half {
            let zs: f64 = s_rng.sample(StandardNormal);
            let ze: f64 = e_rng.sample(StandardNormal);
            let u: f64 = o_rng.random();
            let s = spec.s_mean[k] + sd * zs;
            let y = b0 + b1 * zf + b2 * s + b3 * s * zf + spec.error_sd * ze;
            records.push(PatientRecord::new(y, Some(s), arm));
            observed.push(u < spec.missingness.prob(y, arm));
        }
    }
    let full = TrialData::new(records)?;
    let masked = full.masked(&observed)?;
    Ok(GeneratedTrial {
        full,
        masked,
        truth: spec.truth()?,
    })
}

/// The seven compared analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gold-nonpar")]
    GoldNonpar,
    #[serde(rename = "cc-nonpar")]
    CcNonpar,
    #[serde(rename = "ipw-nonpar")]
    IpwNonpar,
    #[serde(rename = "gold-par")]
    GoldPar,
    #[serde(rename = "cc-par")]
    CcPar,
    #[serde(rename = "ipw-par")]
    IpwPar,
    #[serde(rename = "smle")]
    Smle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::GoldNonpar,
        Method::CcNonpar,
        Method::IpwNonpar,
        Method::GoldPar,
        Method::CcPar,
        Method::IpwPar,
        Method::Smle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::GoldNonpar => "gold-nonpar",
            Method::CcNonpar => "cc-nonpar",
            Method::IpwNonpar => "ipw-nonpar",
            Method::GoldPar => "gold-par",
            Method::CcPar => "cc-par",
            Method::IpwPar => "ipw-par",
            Method::Smle => "smle",
        }
    }

    pub fn estimator(self) -> EstimatorKind {
        match self {
            Method::GoldNonpar | Method::CcNonpar | Method::IpwNonpar => EstimatorKind::Nonparametric,
            _ => EstimatorKind::Parametric,
        }
    }

    /// Gold-standard analyses see the full data.
    pub fn uses_full_data(self) -> bool {
        matches!(self, Method::GoldNonpar | Method::GoldPar)
    }

    /// Gold standard of the same estimator, the reference for efficiency.
    pub fn gold(self) -> Method {
        match self.estimator() {
            EstimatorKind::Nonparametric => Method::GoldNonpar,
            EstimatorKind::Parametric => Method::GoldPar,
        }
    }

    pub fn pipeline(self, weights: &WeightSpec) -> PipelineConfig {
        let correction = match self {
            Method::IpwNonpar | Method::IpwPar => Correction::Ipw,
            Method::Smle => Correction::Smle,
            _ => Correction::Cc,
        };
        PipelineConfig::new(self.estimator(), correction).with_weights(weights.clone())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = PteError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                PteError::Validation(format!(
                    "unknown method '{s}'; expected one of {}",
                    Method::ALL.map(Method::label).join(", ")
                ))
            })
    }
}

/// Requested methods plus any gold standard needed for relative efficiency,
/// in canonical order.
pub fn with_required_gold(methods: &[Method]) -> Vec<Method> {
    let mut all: Vec<Method> = methods.iter().flat_map(|m| [*m, m.gold()]).collect();
    all.sort();
    all.dedup();
    all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub setting: SettingSpec,
    pub methods: Vec<Method>,
    pub reps: usize,
    /// Bootstrap replicates per Monte Carlo replicate; 0 skips ASE and coverage.
    pub boot_d: usize,
    pub seed: u64,
    /// IPW weight model; the setting default when absent.
    pub weights: Option<WeightSpec>,
}

/// Outcome of one method on one Monte Carlo replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub r_s: f64,
    pub se: Option<f64>,
    pub covered_wald: Option<bool>,
    pub covered_quantile: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub bias: f64,
    pub pct_bias: f64,
    pub ese: f64,
    pub ase: Option<f64>,
    pub cp_n: Option<f64>,
    pub cp_q: Option<f64>,
    pub re: Option<f64>,
    /// Replicates whose estimate succeeded.
    pub n_ok: usize,
    /// Replicates whose estimate failed.
    pub failures: usize,
    /// Successful estimates whose bootstrap failed.
    pub boot_failures: usize,
    /// More than 10% of replicates failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub truth: EstimandSet,
    /// Mean fraction of missing surrogates across replicates.
    pub mean_missing_fraction: f64,
    pub rows: Vec<MetricsRow>,
    /// Per-replicate outcomes, `estimates[r][j]` for `rows[j].method`.
    #[serde(skip)]
    pub estimates: Vec<Vec<Option<ReplicateEstimate>>>,
}

impl StudyResult {
    pub fn row(&self, method: Method) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Estimate (and bootstrap) one method on one generated trial.
pub fn evaluate_replicate(
    method: Method,
    trial: &GeneratedTrial,
    weights: &WeightSpec,
    boot_d: usize,
    boot_seed: u64,
) -> std::result::Result<ReplicateEstimate, PteError> {
    let config = method.pipeline(weights);
    let data = if method.uses_full_data() {
        &trial.full
    } else {
        &trial.masked
    };
    let truth = trial.truth.r_s;
    if boot_d == 0 {
        let e = config.estimate(data)?;
        return Ok(ReplicateEstimate {
            r_s: e.r_s,
            se: None,
            covered_wald: None,
            covered_quantile: None,
        });
    }
    match bootstrap_inference(data, |d| config.estimate(d), boot_d, boot_seed) {
        Ok(b) => {
            let covers = |(lo, hi): (f64, f64)| lo <= truth && truth <= hi;
            Ok(ReplicateEstimate {
                r_s: b.point.r_s,
                se: Some(b.se.r_s),
                covered_wald: Some(covers(b.ci_wald.r_s)),
                covered_quantile: Some(covers(b.ci_quantile.r_s)),
            })
        }
        Err(e @ PteError::InferenceUnreliable { .. }) => {
            log::warn!("{method}: {e}");
            let point = config.estimate(data)?;
            Ok(ReplicateEstimate {
                r_s: point.r_s,
                se: None,
                covered_wald: None,
                covered_quantile: None,
            })
        }
        Err(e) => Err(e),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (hit, total) = flags.fold((0usize, 0usize), |(h, t), f| (h + f as usize, t + 1));
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Monte Carlo study: generate `reps` trials, evaluate every method, and
/// summarize. Gold standards needed for relative efficiency are added.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.setting.validate()?;
    if config.reps == 0 {
        return Err(PteError::Validation("reps must be at least 1".into()));
    }
    let methods = with_required_gold(&config.methods);
    let weights = config
        .weights
        .clone()
        .unwrap_or_else(|| config.setting.default_weights());
    let truth = config.setting.truth()?;

    let per_rep: Vec<(f64, Vec<Option<ReplicateEstimate>>)> = (0..config.reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let trial = generate_trial(&config.setting, config.seed, r as u64)?;
            let boot_seed = derive_seed(config.seed, r as u64);
            let missing = 1.0 - trial.masked.records().iter().filter(|x| x.observed()).count() as f64
                / trial.masked.len() as f64;
            let outcomes = methods
                .iter()
                .map(|&m| match evaluate_replicate(m, &trial, &weights, config.boot_d, boot_seed) {
                    Ok(e) => Some(e),
                    Err(e) => {
                        log::warn!("replicate {r}, {m}: {e}");
                        None
                    }
                })
                .collect();
            Ok((missing, outcomes))
        })
        .collect::<Result<_>>()?;

    let mean_missing_fraction = per_rep.iter().map(|(m, _)| m).sum::<f64>() / config.reps as f64;
    let estimates: Vec<Vec<Option<ReplicateEstimate>>> = per_rep.into_iter().map(|(_, e)| e).collect();

    let column = |j: usize| -> Vec<ReplicateEstimate> { estimates.iter().filter_map(|r| r[j]).collect() };
    let variances: Vec<f64> = (0..methods.len())
        .map(|j| variance(&column(j).iter().map(|e| e.r_s).collect::<Vec<_>>()))
        .collect();

    let rows = methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let ok = column(j);
            let values: Vec<f64> = ok.iter().map(|e| e.r_s).collect();
            let failures = config.reps - ok.len();
            let bias = if values.is_empty() {
                f64::NAN
            } else {
                mean(&values) - truth.r_s
            };
            let ses: Vec<f64> = ok.iter().filter_map(|e| e.se).collect();
            let gold = methods.iter().position(|&m| m == method.gold());
            MetricsRow {
                method,
                bias,
                pct_bias: 100.0 * bias / truth.r_s,
                ese: variance(&values).sqrt(),
                ase: (!ses.is_empty()).then(|| mean(&ses)),
                cp_n: rate(ok.iter().filter_map(|e| e.covered_wald)),
                cp_q: rate(ok.iter().filter_map(|e| e.covered_quantile)),
                re: gold.map(|g| variances[g] / variances[j]).filter(|v| v.is_finite()),
                n_ok: ok.len(),
                failures,
                boot_failures: ok.iter().filter(|e| e.se.is_none()).count() * usize::from(config.boot_d > 0),
                flagged: failures as f64 > 0.1 * config.reps as f64,
            }
        })
        .collect();

    Ok(StudyResult {
        config: config.clone(),
        truth,
        mean_missing_fraction,
        rows,
        estimates,
    })
}

/// The five weight models compared under a misspecification sweep:
/// `{Y}`, `{Z}`, `{Y, Z}`, `{Y, Z, Y×Z}`, `{Y, Y×Z}`.
pub fn sweep_formulas() -> [Formula; 5] {
    [
        Formula::new([Term::Y]),
        Formula::new([Term::Z]),
        Formula::new([Term::Y, Term::Z]),
        Formula::new([Term::Y, Term::Z, Term::YZ]),
        Formula::new([Term::Y, Term::YZ]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub version: String,
    pub formula: String,
    pub method: Method,
    pub bias: f64,
    pub ese: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub setting: SettingSpec,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Complete-case rows on the same replicates, for reference.
    pub complete_case: Vec<SweepRow>,
}

/// IPW bias and empirical SE for each sweep formula, both estimators, on a
/// shared set of generated trials (point estimates only).
pub fn weight_misspec_sweep(setting: &SettingSpec, reps: usize, seed: u64) -> Result<SweepResult> {
    setting.validate()?;
    if reps == 0 {
        return Err(PteError::Validation("reps must be at least 1".into()));
    }
    let formulas = sweep_formulas();
    let ipw = [Method::IpwNonpar, Method::IpwPar];
    let cc = [Method::CcNonpar, Method::CcPar];
    // Per replicate: [formula][estimator] IPW values then CC values.
    let per_rep: Vec<(Vec<[Option<f64>; 2]>, [Option<f64>; 2])> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let trial = generate_trial(setting, seed, r as u64)?;
            let run = |m: Method, w: &WeightSpec| {
                m.pipeline(w)
                    .estimate(&trial.masked)
                    .map_err(|e| log::warn!("replicate {r}, {m}: {e}"))
                    .ok()
                    .map(|e| e.r_s)
            };
            let ipw_vals = formulas
                .iter()
                .map(|f| {
                    let w = WeightSpec::Logistic(f.clone());
                    ipw.map(|m| run(m, &w))
                })
                .collect();
            let cc_vals = cc.map(|m| run(m, &WeightSpec::default()));
            Ok((ipw_vals, cc_vals))
        })
        .collect::<Result<_>>()?;

    let truth = setting.truth()?.r_s;
    let summarize = |version: String, formula: String, method: Method, vals: Vec<f64>| SweepRow {
        version,
        formula,
        method,
        bias: mean(&vals) - truth,
        ese: variance(&vals).sqrt(),
        n_ok: vals.len(),
    };
    let roman = ["i", "ii", "iii", "iv", "v"];
    let mut rows = Vec::new();
    for (fi, f) in formulas.iter().enumerate() {
        for (mi, &m) in ipw.iter().enumerate() {
            let vals = per_rep.iter().filter_map(|(v, _)| v[fi][mi]).collect();
            rows.push(summarize(roman[fi].to_string(), f.to_string(), m, vals));
        }
    }
    let complete_case = cc
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let vals = per_rep.iter().filter_map(|(_, c)| c[mi]).collect();
            summarize("cc".into(), String::new(), m, vals)
        })
        .collect();
    Ok(SweepResult {
        setting: setting.clone(),
        reps,
        seed,
        rows,
        complete_case,
    })
}

impl SweepResult {
    pub fn row(&self, formula: &Formula, method: Method) -> Option<&SweepRow> {
        let f = formula.to_string();
        self.rows.iter().find(|r| r.formula == f && r.method == method)
    }

    pub fn cc_row(&self, method: Method) -> Option<&SweepRow> {
        self.complete_case.iter().find(|r| r.method == method)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Metrics table as CSV.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method", "bias", "pct_bias", "ese", "ase", "cp_n", "cp_q", "re", "n_ok", "failures", "boot_failures",
        "flagged",
    ])?;
    for r in rows {
        w.write_record([
            r.method.label().to_string(),
            r.bias.to_string(),
            r.pct_bias.to_string(),
            r.ese.to_string(),
            opt(r.ase),
            opt(r.cp_n),
            opt(r.cp_q),
            opt(r.re),
            r.n_ok.to_string(),
            r.failures.to_string(),
            r.boot_failures.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep table as CSV.
pub fn write_sweep_csv<W: std::io::Write>(result: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["version", "formula", "method", "bias", "ese", "n_ok"])?;
    for r in result.rows.iter().chain(&result.complete_case) {
        w.write_record([
            r.version.clone(),
            r.formula.clone(),
            r.method.label().to_string(),
            r.bias.to_string(),
            r.ese.to_string(),
            r.n_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
