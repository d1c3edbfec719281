//! Independent reference implementations used to check the estimators.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pte_core::{Arm, PatientRecord, TrialData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small trial with `n` patients (at least 4 per arm), roughly following the
/// simulation model, with surrogates missing at rate `miss` but at least
/// `min_obs` observed per arm.
pub fn small_trial(rng: &mut ChaCha8Rng, n: usize, miss: f64, min_obs: usize) -> TrialData {
    let n0 = n / 2;
    let mut recs = Vec::with_capacity(n);
    for i in 0..n {
        let arm = if i < n0 { Arm::Control } else { Arm::Treated };
        let zf = arm.indicator();
        let s: f64 = rng.random_range(3.0..8.0) + zf;
        let y = 2.0 + zf + 5.0 * s + zf * s + rng.random_range(-1.5..1.5);
        recs.push(PatientRecord::new(y, Some(s), arm));
    }
    let mut seen = [0usize; 2];
    for r in recs.iter_mut() {
        let k = r.z.index();
        if seen[k] >= min_obs && rng.random::<f64>() < miss {
            r.s = None;
        } else {
            seen[k] += 1;
        }
    }
    TrialData::new(recs).unwrap()
}

pub fn to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact solution of a square linear system by Gaussian elimination.
pub fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = &a[r][col] / &a[col][col];
            for c in col..n {
                let v = &f * &a[col][c];
                a[r][c] -= v;
            }
            let v = &f * &b[col];
            b[r] -= v;
        }
    }
    let mut x = vec![BigRational::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc -= &a[r][c] * &x[c];
        }
        x[r] = acc / &a[r][r];
    }
    Some(x)
}

/// Weighted least squares on `[1, z, s, s z]` via exact normal equations.
pub fn wls_oracle(rows: &[(f64, f64, Arm)], weights: &[f64]) -> [f64; 4] {
    let zero = || BigRational::from_integer(BigInt::from(0));
    let mut xtx = vec![vec![zero(); 4]; 4];
    let mut xty = vec![zero(); 4];
    for (&(y, s, z), &w) in rows.iter().zip(weights) {
        let zf = to_rational(z.indicator());
        let s = to_rational(s);
        let x = [BigRational::from_integer(1.into()), zf.clone(), s.clone(), &s * &zf];
        let w = to_rational(w);
        let y = to_rational(y);
        for i in 0..4 {
            let wx = &w * &x[i];
            xty[i] += &wx * &y;
            for j in 0..4 {
                xtx[i][j] += &wx * &x[j];
            }
        }
    }
    let b = solve_exact(xtx, xty).expect("nonsingular oracle system");
    [0, 1, 2, 3].map(|i| b[i].to_f64().unwrap())
}

/// Nearest-neighbour value with ties averaged.
fn nearest(s0: f64, s1: &[f64], y1: &[f64]) -> f64 {
    let d = s1.iter().map(|s| (s - s0).abs()).fold(f64::INFINITY, f64::min);
    let hits: Vec<f64> = s1
        .iter()
        .zip(y1)
        .filter(|(s, _)| (*s - s0).abs() == d)
        .map(|(_, y)| *y)
        .collect();
    hits.iter().sum::<f64>() / hits.len() as f64
}

fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// `(Δ, Δ_S)` by the literal double sum: the weighted control average of the
/// kernel-weighted treated outcome mean, minus the control outcome mean.
/// `weights[i]` applies to record `i`; unobserved records are skipped.
pub fn nonparametric_oracle(data: &TrialData, weights: &[f64], h: f64) -> (f64, f64) {
    let recs = data.records();
    let mean_y = |arm: Arm| {
        let v: Vec<f64> = recs.iter().filter(|r| r.z == arm).map(|r| r.y).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let delta = mean_y(Arm::Treated) - mean_y(Arm::Control);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, ri) in recs.iter().enumerate() {
        let (Arm::Control, Some(s0)) = (ri.z, ri.s) else { continue };
        let mut a = 0.0;
        let mut b = 0.0;
        let mut s1 = Vec::new();
        let mut y1 = Vec::new();
        for (j, rj) in recs.iter().enumerate() {
            let (Arm::Treated, Some(s)) = (rj.z, rj.s) else { continue };
            let k = epanechnikov((s - s0) / h) / h;
            a += k * weights[j] * rj.y;
            b += k * weights[j];
            s1.push(s);
            y1.push(rj.y);
        }
        let mu = if b > 0.0 { a / b } else { nearest(s0, &s1, &y1) };
        num += weights[i] * mu;
        den += weights[i];
    }
    (delta, num / den - mean_y(Arm::Control))
}

/// Bernoulli log-likelihood of `o` under `expit(b0 + b1 x)`.
pub fn logistic_loglik(x: &[f64], o: &[bool], b: (f64, f64)) -> f64 {
    x.iter()
        .zip(o)
        .map(|(&xi, &oi)| {
            let eta = b.0 + b.1 * xi;
            // log expit(eta) = -log(1 + exp(-eta))
            if oi {
                -(-eta).exp().ln_1p()
            } else {
                -eta.exp().ln_1p()
            }
        })
        .sum()
}

fn score(x: &[f64], o: &[bool], b: (f64, f64)) -> (f64, f64) {
    x.iter().zip(o).fold((0.0, 0.0), |(g0, g1), (&xi, &oi)| {
        let p = 1.0 / (1.0 + (-(b.0 + b.1 * xi)).exp());
        let r = f64::from(u8::from(oi)) - p;
        (g0 + r, g1 + r * xi)
    })
}

/// Root of a decreasing function on `[lo, hi]` by bisection.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-parameter logistic MLE: dense grid search, then coordinate-wise
/// bisection on the score until the coefficients stop moving.
pub fn logistic_grid_oracle(x: &[f64], o: &[bool], range0: (f64, f64), range1: (f64, f64)) -> (f64, f64) {
    let steps = 400;
    let mut best = (f64::NEG_INFINITY, (0.0, 0.0));
    for i in 0..=steps {
        for j in 0..=steps {
            let b0 = range0.0 + (range0.1 - range0.0) * i as f64 / steps as f64;
            let b1 = range1.0 + (range1.1 - range1.0) * j as f64 / steps as f64;
            let ll = logistic_loglik(x, o, (b0, b1));
            if ll > best.0 {
                best = (ll, (b0, b1));
            }
        }
    }
    let mut b = best.1;
    let w0 = range0.1 - range0.0;
    let w1 = range1.1 - range1.0;
    for _ in 0..20_000 {
        let prev = b;
        b.0 = bisect(b.0 - w0, b.0 + w0, |v| score(x, o, (v, b.1)).0);
        b.1 = bisect(b.1 - w1, b.1 + w1, |v| score(x, o, (b.0, v)).1);
        if (b.0 - prev.0).abs() < 1e-13 && (b.1 - prev.1).abs() < 1e-13 {
            break;
        }
    }
    b
}
