//! Kernel-smoothed nonparametric PTE estimation.
//!
//! `Δ` is the difference in arm means of `y` over all records. `Δ_S` averages a
//! Nadaraya-Watson estimate of `E(Y | S = s, Z = 1)` over the observed control
//! surrogates and subtracts the control mean of `y`. Optional inverse-probability
//! weights enter both the kernel regression (treated side) and the average over
//! control surrogates.

use serde::{Deserialize, Serialize};

use crate::data::{Arm, EstimandSet, TrialData};
use crate::error::{PteError, Result};
use crate::ipw::WeightSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Epanechnikov,
    Triweight,
}

impl KernelKind {
    /// Density on `|u| < 1`, zero outside.
    pub fn eval(self, u: f64) -> f64 {
        let a = 1.0 - u * u;
        if a <= 0.0 {
            return 0.0;
        }
        match self {
            KernelKind::Epanechnikov => 0.75 * a,
            KernelKind::Triweight => 35.0 / 32.0 * a * a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(PteError::Validation(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { kind, bandwidth })
    }

    /// `K_h(x) = K(x / h) / h`.
    pub fn weight(&self, x: f64) -> f64 {
        self.kind.eval(x / self.bandwidth) / self.bandwidth
    }
}

/// Linear-interpolation sample quantile (R's default, type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Silverman's rule with an extra `m^(-1/10)` undersmoothing factor:
/// `h = 0.9 min(sd, IQR / 1.34) m^(-3/10)`.
///
/// When the IQR is zero but the values are not all equal, the spread falls
/// back to the standard deviation alone.
pub fn select_bandwidth(s_values: &[f64]) -> Result<f64> {
    if s_values.len() < 2 {
        return Err(PteError::ZeroSpread);
    }
    let mut sorted = s_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(PteError::ZeroSpread);
    }
    let sd = sample_sd(s_values);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let m = s_values.len() as f64;
    Ok(0.9 * spread * m.powf(-0.2) * m.powf(-0.1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwValue {
    pub value: f64,
    /// True when no support point had positive kernel mass and the value is
    /// the nearest neighbour's outcome.
    pub extrapolated: bool,
}

/// Kernel-regression sample sorted by surrogate value.
#[derive(Debug, Clone)]
pub struct NwSample {
    s: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl NwSample {
    pub fn new(s: &[f64], y: &[f64], w: &[f64]) -> Result<Self> {
        if s.is_empty() {
            return Err(PteError::Validation("empty kernel-regression sample".into()));
        }
        if s.len() != y.len() || s.len() != w.len() {
            return Err(PteError::Validation(
                "kernel-regression inputs differ in length".into(),
            ));
        }
        if w.iter().any(|w| !(*w >= 0.0)) || w.iter().all(|w| *w == 0.0) {
            return Err(PteError::Validation(
                "kernel weights must be non-negative and not all zero".into(),
            ));
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        Ok(NwSample {
            s: order.iter().map(|&i| s[i]).collect(),
            y: order.iter().map(|&i| y[i]).collect(),
            w: order.iter().map(|&i| w[i]).collect(),
        })
    }

    /// Weighted Nadaraya-Watson estimate at `s0`.
    pub fn eval(&self, s0: f64, kernel: &KernelSpec) -> NwValue {
        // Slightly wider than the support; the kernel itself zeroes the edges.
        let reach = kernel.bandwidth * (1.0 + 1e-9);
        let lo = self.s.partition_point(|&v| v < s0 - reach);
        let hi = self.s.partition_point(|&v| v <= s0 + reach);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in lo..hi {
            let k = kernel.weight(self.s[j] - s0) * self.w[j];
            num += k * self.y[j];
            den += k;
        }
        if den > 0.0 {
            return NwValue {
                value: num / den,
                extrapolated: false,
            };
        }
        NwValue {
            value: self.nearest(s0),
            extrapolated: true,
        }
    }

    /// Mean outcome over the positively weighted points nearest to `s0`.
    fn nearest(&self, s0: f64) -> f64 {
        let mut best = f64::INFINITY;
        let (mut sum, mut count) = (0.0, 0usize);
        for j in 0..self.s.len() {
            if self.w[j] <= 0.0 {
                continue;
            }
            let d = (self.s[j] - s0).abs();
            if d < best {
                best = d;
                sum = self.y[j];
                count = 1;
            } else if d == best {
                sum += self.y[j];
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// One-off Nadaraya-Watson evaluation.
pub fn nw_conditional_mean(
    s0: f64,
    s1: &[f64],
    y1: &[f64],
    w1: &[f64],
    kernel: &KernelSpec,
) -> Result<NwValue> {
    Ok(NwSample::new(s1, y1, w1)?.eval(s0, kernel))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub min0: f64,
    pub max0: f64,
    pub min1: f64,
    pub max1: f64,
    /// Observed control surrogates outside `[min1, max1]`.
    pub n_outside: usize,
    pub ok: bool,
}

pub fn check_overlap(data: &TrialData) -> Result<OverlapReport> {
    let range = |arm: Arm| {
        data.arm_view(arm)
            .filter_map(|r| r.s)
            .fold(None, |acc: Option<(f64, f64)>, s| match acc {
                None => Some((s, s)),
                Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
            })
            .ok_or_else(|| {
                PteError::Validation(format!("no observed surrogates in arm {arm}"))
            })
    };
    let (min0, max0) = range(Arm::Control)?;
    let (min1, max1) = range(Arm::Treated)?;
    let n_outside = data
        .arm_view(Arm::Control)
        .filter_map(|r| r.s)
        .filter(|&s| s < min1 || s > max1)
        .count();
    Ok(OverlapReport {
        min0,
        max0,
        min1,
        max1,
        n_outside,
        ok: n_outside == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonparametricFit {
    pub estimands: EstimandSet,
    pub kernel: KernelSpec,
    pub overlap: OverlapReport,
    /// Control surrogates whose kernel estimate fell back to nearest neighbour.
    pub extrapolated: usize,
}

/// Nonparametric estimate; see the module docs.
///
/// Without weights every observed surrogate carries unit weight, which on a
/// complete-case dataset is the complete-case estimator. `kernel` defaults to
/// Epanechnikov with [`select_bandwidth`] on the observed treated surrogates.
pub fn estimate_nonparametric(
    data: &TrialData,
    weights: Option<&WeightSet>,
    kernel: Option<KernelSpec>,
) -> Result<NonparametricFit> {
    if let Some(ws) = weights {
        ws.check_len(data.len())?;
    }
    let weight = |i: usize| weights.map_or(1.0, |ws| ws.weights[i]);

    let mut s1 = Vec::with_capacity(data.n1());
    let mut y1 = Vec::with_capacity(data.n1());
    let mut w1 = Vec::with_capacity(data.n1());
    let mut y_sum = [0.0; 2];
    for (i, r) in data.records().iter().enumerate() {
        y_sum[r.z.index()] += r.y;
        if r.z == Arm::Treated {
            if let Some(s) = r.s {
                s1.push(s);
                y1.push(r.y);
                w1.push(weight(i));
            }
        }
    }
    let mean0 = y_sum[0] / data.n0() as f64;
    let mean1 = y_sum[1] / data.n1() as f64;

    for arm in Arm::BOTH {
        if data.n_observed(arm) < 2 {
            return Err(PteError::Validation(format!(
                "arm {arm} needs at least 2 observed surrogates"
            )));
        }
    }
    let overlap = check_overlap(data)?;
    let kernel = match kernel {
        Some(k) => k,
        None => KernelSpec::new(KernelKind::Epanechnikov, select_bandwidth(&s1)?)?,
    };
    let sample = NwSample::new(&s1, &y1, &w1)?;

    let mut num = 0.0;
    let mut den = 0.0;
    let mut extrapolated = 0;
    for (i, r) in data.records().iter().enumerate() {
        if r.z != Arm::Control {
            continue;
        }
        let Some(s) = r.s else { continue };
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        let mu = sample.eval(s, &kernel);
        extrapolated += usize::from(mu.extrapolated);
        num += w * mu.value;
        den += w;
    }
    if den == 0.0 {
        return Err(PteError::Validation(
            "observed control surrogates carry zero total weight".into(),
        ));
    }
    if extrapolated > 0 {
        log::debug!("{extrapolated} control surrogate(s) outside kernel reach; nearest-neighbour fallback");
    }

    let estimands = EstimandSet::from_effects(mean1 - mean0, num / den - mean0)?;
    Ok(NonparametricFit {
        estimands,
        kernel,
        overlap,
        extrapolated,
    })
}
