//! Stratified bootstrap for any estimator returning an [`EstimandSet`].
//!
//! Each replicate resamples `n0` control and `n1` treated patients with
//! replacement and reruns the whole estimator, so fitted weights and EM fits
//! are re-estimated per replicate. Replicate `b` draws from its own keyed
//! stream, which makes the result independent of the parallel schedule.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, EstimandSet, TrialData};
use crate::error::{PteError, Result};
use crate::nonparametric::quantile_sorted;
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_REPLICATES: usize = 500;
/// Smallest acceptable share of successful replicates.
pub const MIN_SUCCESS_RATE: f64 = 0.9;
const Z_975: f64 = 1.959_963_984_540_054;

/// One value per estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerEstimand<T> {
    pub delta: T,
    pub delta_s: T,
    pub r_s: T,
}

impl<T: Copy> PerEstimand<T> {
    fn from_fn(mut f: impl FnMut(usize) -> T) -> Self {
        PerEstimand {
            delta: f(0),
            delta_s: f(1),
            r_s: f(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Estimate on the original data.
    pub point: EstimandSet,
    pub se: PerEstimand<f64>,
    /// `point ± 1.96 se`.
    pub ci_wald: PerEstimand<(f64, f64)>,
    /// 2.5% and 97.5% empirical quantiles of the successful replicates.
    pub ci_quantile: PerEstimand<(f64, f64)>,
    pub d_requested: usize,
    pub d_effective: usize,
    pub failures: usize,
    /// Failed replicates by error kind.
    pub failure_reasons: BTreeMap<String, usize>,
    /// Successful replicate estimates in replicate order.
    #[serde(skip)]
    pub replicates: Vec<EstimandSet>,
}

/// `n0` draws with replacement from arm 0 and `n1` from arm 1.
pub fn stratified_resample<R: Rng + ?Sized>(data: &TrialData, rng: &mut R) -> Result<TrialData> {
    let mut by_arm: [Vec<usize>; 2] = [Vec::with_capacity(data.n0()), Vec::with_capacity(data.n1())];
    for (i, r) in data.records().iter().enumerate() {
        by_arm[r.z.index()].push(i);
    }
    let mut picks = Vec::with_capacity(data.len());
    for arm in Arm::BOTH {
        let pool = &by_arm[arm.index()];
        picks.extend((0..pool.len()).map(|_| pool[rng.random_range(0..pool.len())]));
    }
    data.select(&picks)
}

/// Resample for replicate `b` of a run keyed by `seed`.
pub fn replicate_sample(data: &TrialData, seed: u64, b: usize) -> Result<TrialData> {
    stratified_resample(data, &mut stream_rng(seed, b as u64, Stream::Resample))
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Bootstrap standard errors and 95% intervals.
///
/// Failed replicates are excluded from the SE and quantiles and tallied by
/// reason; fewer than 90% successes is an inference-unreliable error.
pub fn bootstrap_inference<F>(data: &TrialData, estimator: F, d: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&TrialData) -> Result<EstimandSet> + Sync,
{
    if d == 0 {
        return Err(PteError::Validation("bootstrap needs at least one replicate".into()));
    }
    let point = estimator(data)?;
    let outcomes: Vec<std::result::Result<EstimandSet, &'static str>> = (0..d)
        .into_par_iter()
        .map(|b| {
            replicate_sample(data, seed, b)
                .and_then(|sample| estimator(&sample))
                .map_err(|e| e.kind())
        })
        .collect();

    let mut replicates = Vec::with_capacity(d);
    let mut failure_reasons: BTreeMap<String, usize> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            Ok(e) => replicates.push(e),
            Err(kind) => *failure_reasons.entry(kind.to_string()).or_default() += 1,
        }
    }
    let d_effective = replicates.len();
    let failures = d - d_effective;
    if failures > 0 {
        log::warn!("bootstrap: {failures} of {d} replicates failed: {failure_reasons:?}");
    }
    if (d_effective as f64) < MIN_SUCCESS_RATE * d as f64 {
        let dominant = failure_reasons
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, _)| k.clone())
            .unwrap_or_default();
        return Err(PteError::InferenceUnreliable {
            effective: d_effective,
            requested: d,
            dominant,
        });
    }

    let columns: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let mut v: Vec<f64> = replicates.iter().map(|e| e.as_array()[j]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let p = point.as_array();
    let se = PerEstimand::from_fn(|j| sample_sd(&columns[j]));
    let se_arr = [se.delta, se.delta_s, se.r_s];
    Ok(BootstrapResult {
        point,
        se,
        ci_wald: PerEstimand::from_fn(|j| (p[j] - Z_975 * se_arr[j], p[j] + Z_975 * se_arr[j])),
        ci_quantile: PerEstimand::from_fn(|j| {
            (quantile_sorted(&columns[j], 0.025), quantile_sorted(&columns[j], 0.975))
        }),
        d_requested: d,
        d_effective,
        failures,
        failure_reasons,
        replicates,
    })
}
