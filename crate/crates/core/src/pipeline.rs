//! End-to-end estimation pipelines: estimator × missing-data correction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EstimandSet, TrialData};
use crate::error::{PteError, Result};
use crate::ipw::{fit_empirical, fit_logistic, weights_from_model, Formula, MissingnessModel};
use crate::nonparametric::{estimate_nonparametric, KernelKind, KernelSpec, OverlapReport};
use crate::parametric::fit_parametric;
use crate::smle::{fit_parametric_smle, EmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Parametric,
    Nonparametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Complete cases only.
    Cc,
    Ipw,
    Smle,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Parametric => "parametric",
            EstimatorKind::Nonparametric => "nonparametric",
        })
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::Cc => "cc",
            Correction::Ipw => "ipw",
            Correction::Smle => "smle",
        })
    }
}

/// How observation probabilities are estimated for IPW.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "formula", rename_all = "snake_case")]
pub enum WeightSpec {
    /// Observed fraction per arm.
    EmpiricalByArm,
    Logistic(Formula),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Logistic(Formula::from_str("z").expect("valid formula"))
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::EmpiricalByArm => f.write_str("empirical"),
            WeightSpec::Logistic(formula) => write!(f, "{formula}"),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = PteError;

    /// `empirical`, or a logistic formula such as `y,z,y:z`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("empirical") {
            Ok(WeightSpec::EmpiricalByArm)
        } else {
            Ok(WeightSpec::Logistic(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub estimator: EstimatorKind,
    pub correction: Correction,
    pub weights: WeightSpec,
    pub weight_cap: Option<f64>,
    /// Fixed Epanechnikov bandwidth; the default rule applies when absent.
    pub bandwidth: Option<f64>,
    pub em: EmOptions,
}

impl PipelineConfig {
    pub fn new(estimator: EstimatorKind, correction: Correction) -> Self {
        PipelineConfig {
            estimator,
            correction,
            weights: WeightSpec::default(),
            weight_cap: None,
            bandwidth: None,
            em: EmOptions::default(),
        }
    }

    pub fn with_weights(mut self, weights: WeightSpec) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.correction == Correction::Smle && self.estimator == EstimatorKind::Nonparametric {
            return Err(PteError::Validation(
                "smle is only available for the parametric estimator".into(),
            ));
        }
        if let Some(h) = self.bandwidth {
            KernelSpec::new(KernelKind::Epanechnikov, h)?;
        }
        Ok(())
    }

    pub fn estimate(&self, data: &TrialData) -> Result<EstimandSet> {
        Ok(self.run(data)?.estimands)
    }

    pub fn run(&self, data: &TrialData) -> Result<PipelineFit> {
        self.validate()?;
        let kernel = self
            .bandwidth
            .map(|h| KernelSpec::new(KernelKind::Epanechnikov, h))
            .transpose()?;
        let mut out = PartialFit::default();

        let weights = match self.correction {
            Correction::Ipw => {
                let model = match &self.weights {
                    WeightSpec::EmpiricalByArm => fit_empirical(data)?,
                    WeightSpec::Logistic(f) => fit_logistic(data, f)?,
                };
                let ws = weights_from_model(&model, data, self.weight_cap)?;
                out.weight_range = ws.observed_range();
                out.missingness_model = Some(model);
                Some(ws)
            }
            _ => None,
        };

        match (self.estimator, self.correction) {
            (EstimatorKind::Parametric, Correction::Smle) => {
                let fit = fit_parametric_smle(data, &self.em)?;
                out.em = Some(EmDiagnostics {
                    iterations: fit.fit.iterations,
                    converged: fit.fit.converged,
                    sigma_floored: fit.fit.sigma_floored,
                });
                out.estimands = Some(fit.estimands);
            }
            (EstimatorKind::Parametric, _) => {
                out.estimands = Some(fit_parametric(data, weights.as_ref())?.estimands);
            }
            (EstimatorKind::Nonparametric, correction) => {
                let fit = match correction {
                    Correction::Cc => estimate_nonparametric(&data.complete_cases()?, None, kernel)?,
                    _ => estimate_nonparametric(data, weights.as_ref(), kernel)?,
                };
                out.overlap = Some(fit.overlap);
                out.extrapolated = Some(fit.extrapolated);
                out.kernel = Some(fit.kernel);
                out.estimands = Some(fit.estimands);
            }
        }
        Ok(out.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub sigma_floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineFit {
    pub estimands: EstimandSet,
    pub overlap: Option<OverlapReport>,
    pub extrapolated: Option<usize>,
    pub kernel: Option<KernelSpec>,
    pub weight_range: Option<(f64, f64)>,
    pub missingness_model: Option<MissingnessModel>,
    pub em: Option<EmDiagnostics>,
}

#[derive(Default)]
struct PartialFit {
    estimands: Option<EstimandSet>,
    overlap: Option<OverlapReport>,
    extrapolated: Option<usize>,
    kernel: Option<KernelSpec>,
    weight_range: Option<(f64, f64)>,
    missingness_model: Option<MissingnessModel>,
    em: Option<EmDiagnostics>,
}

impl PartialFit {
    fn finish(self) -> PipelineFit {
        PipelineFit {
            estimands: self.estimands.expect("every branch sets the estimate"),
            overlap: self.overlap,
            extrapolated: self.extrapolated,
            kernel: self.kernel,
            weight_range: self.weight_range,
            missingness_model: self.missingness_model,
            em: self.em,
        }
    }
}
