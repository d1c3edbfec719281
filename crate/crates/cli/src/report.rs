//! Evaluation report: JSON schema and the human-readable summary.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use pte_core::bootstrap::{BootstrapResult, PerEstimand};
use pte_core::ipw::MissingnessModel;
use pte_core::nonparametric::{KernelSpec, OverlapReport};
use pte_core::pipeline::{EmDiagnostics, PipelineFit};
use pte_core::{Arm, EstimandSet, TrialData};

/// Echo of the evaluation settings.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub input: String,
    pub estimator: String,
    pub method: String,
    /// Weight model; present for IPW only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub boot: usize,
    pub seed: u64,
    pub ci: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub se: PerEstimand<f64>,
    pub ci_wald: PerEstimand<(f64, f64)>,
    pub ci_quantile: PerEstimand<(f64, f64)>,
    pub d_requested: usize,
    pub d_effective: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
}

impl From<&BootstrapResult> for BootstrapSummary {
    fn from(b: &BootstrapResult) -> Self {
        BootstrapSummary {
            se: b.se,
            ci_wald: b.ci_wald,
            ci_quantile: b.ci_quantile,
            d_requested: b.d_requested,
            d_effective: b.d_effective,
            failures: b.failures,
            failure_reasons: b.failure_reasons.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MissingFractions {
    pub arm0: f64,
    pub arm1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    pub missing_fraction: MissingFractions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missingness_model: Option<MissingnessModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<EmDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolated: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub estimate: EstimandSet,
    pub bootstrap: BootstrapSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapReport>,
    pub diagnostics: Diagnostics,
}

impl Report {
    pub fn new(config: ConfigEcho, data: &TrialData, fit: &PipelineFit, boot: &BootstrapResult) -> Self {
        Report {
            config,
            estimate: fit.estimands,
            bootstrap: boot.into(),
            overlap: fit.overlap,
            diagnostics: Diagnostics {
                n: data.len(),
                n0: data.n0(),
                n1: data.n1(),
                missing_fraction: MissingFractions {
                    arm0: data.missing_fraction(Arm::Control),
                    arm1: data.missing_fraction(Arm::Treated),
                },
                weight_range: fit.weight_range,
                missingness_model: fit.missingness_model.clone(),
                em: fit.em,
                kernel: fit.kernel,
                extrapolated: fit.extrapolated,
            },
        }
    }

    /// Plain-text table for standard output.
    pub fn print_table(&self, out: &mut impl Write, ci: &str) -> io::Result<()> {
        let c = &self.config;
        writeln!(out, "{} {} on {} (D = {}, seed {})", c.estimator, c.method, c.input, c.boot, c.seed)?;
        let d = &self.diagnostics;
        writeln!(
            out,
            "n = {} (arm 0: {}, arm 1: {}); missing surrogate: {:.1}% / {:.1}%",
            d.n,
            d.n0,
            d.n1,
            100.0 * d.missing_fraction.arm0,
            100.0 * d.missing_fraction.arm1
        )?;
        let b = &self.bootstrap;
        let mut header = format!("{:<8} {:>10} {:>9}", "", "estimate", "se");
        if ci != "quantile" {
            header += &format!(" {:>22}", "95% CI (normal)");
        }
        if ci != "wald" {
            header += &format!(" {:>22}", "95% CI (quantile)");
        }
        writeln!(out, "{header}")?;
        let rows = [
            ("delta", self.estimate.delta, b.se.delta, b.ci_wald.delta, b.ci_quantile.delta),
            ("delta_s", self.estimate.delta_s, b.se.delta_s, b.ci_wald.delta_s, b.ci_quantile.delta_s),
            ("r_s", self.estimate.r_s, b.se.r_s, b.ci_wald.r_s, b.ci_quantile.r_s),
        ];
        for (name, est, se, wald, quant) in rows {
            let mut line = format!("{name:<8} {est:>10.4} {se:>9.4}");
            if ci != "quantile" {
                line += &format!(" {:>22}", format!("({:.4}, {:.4})", wald.0, wald.1));
            }
            if ci != "wald" {
                line += &format!(" {:>22}", format!("({:.4}, {:.4})", quant.0, quant.1));
            }
            writeln!(out, "{line}")?;
        }
        if b.failures > 0 {
            writeln!(out, "bootstrap: {} of {} replicates failed {:?}", b.failures, b.d_requested, b.failure_reasons)?;
        }
        if let Some(em) = &d.em {
            writeln!(out, "EM: {} iterations, converged = {}", em.iterations, em.converged)?;
        }
        if let Some((lo, hi)) = d.weight_range {
            writeln!(out, "weights: [{lo:.4}, {hi:.4}]")?;
        }
        if let Some(k) = &d.kernel {
            writeln!(out, "bandwidth: {:.4}", k.bandwidth)?;
        }
        Ok(())
    }
}
