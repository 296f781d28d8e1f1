//! Permutation statistics: monochromatic batch counts and without-replacement
//! concentration of batch means and standard deviations.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::for_each_permutation;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonochromaticStats {
    pub n_pos: usize,
    pub n_neg: usize,
    pub batch_size: usize,
    pub num_perms: usize,
    pub empirical_mean: f64,
    /// Fraction of permutations with no monochromatic batch.
    pub frac_zero: f64,
    /// Closed-form E[T]; only for balanced classes.
    pub expectation: Option<f64>,
    /// Azuma half-width at `delta`; only for balanced classes.
    pub azuma_halfwidth: Option<f64>,
    pub delta: f64,
}

fn class_counts(labels: &[f64]) -> Result<(usize, usize)> {
    let mut pos = 0;
    let mut neg = 0;
    for &y in labels {
        if y == 1.0 {
            pos += 1;
        } else if y == -1.0 {
            neg += 1;
        } else {
            return Err(Error::NonBinaryLabel(y));
        }
    }
    Ok((pos, neg))
}

fn check_batching(len: usize, b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    if len % b != 0 {
        return Err(Error::InvalidPlan(format!("B = {b} does not divide n = {len}")));
    }
    Ok(())
}

/// Number of batches of `perm` whose labels all agree.
pub fn count_monochromatic(labels: &[f64], perm: &[usize], b: usize) -> usize {
    perm.chunks(b)
        .filter(|batch| batch.iter().all(|&i| labels[i] == labels[batch[0]]))
        .count()
}

/// E[T] for `n` points per class and K = 2 classes.
pub fn mono_expectation(n: usize, b: usize) -> f64 {
    let k = 2.0;
    // C(n,B)/C(2n,B) as a running product to stay in range.
    let ratio: f64 = (0..b).map(|i| (n as f64 - i as f64) / (2.0 * n as f64 - i as f64)).product();
    k * k * n as f64 / b as f64 * ratio
}

/// Azuma half-width `√(2nK³ log(2/δ)/B)` with K = 2.
pub fn azuma_halfwidth(n: usize, b: usize, delta: f64) -> f64 {
    (2.0 * n as f64 * 8.0 * (2.0 / delta).ln() / b as f64).sqrt()
}

/// Monte-Carlo mean of the monochromatic batch count T over seeded
/// permutations; permutation `i` is drawn from stream `(seed, i)`.
pub fn monochromatic_stats(
    labels: &[f64],
    b: usize,
    num_perms: usize,
    seed: u64,
    delta: f64,
) -> Result<MonochromaticStats> {
    let (n_pos, n_neg) = class_counts(labels)?;
    check_batching(labels.len(), b)?;
    if num_perms == 0 {
        return Err(Error::InvalidPlan("num_perms must be >= 1".into()));
    }
    let counts: Vec<usize> = (0..num_perms)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let perm = rng::permutation(labels.len(), &mut r);
            count_monochromatic(labels, &perm, b)
        })
        .collect();
    let total: usize = counts.iter().sum();
    let zeros = counts.iter().filter(|&&t| t == 0).count();
    let balanced = n_pos == n_neg;
    Ok(MonochromaticStats {
        n_pos,
        n_neg,
        batch_size: b,
        num_perms,
        empirical_mean: total as f64 / num_perms as f64,
        frac_zero: zeros as f64 / num_perms as f64,
        expectation: balanced.then(|| mono_expectation(n_pos, b)),
        azuma_halfwidth: balanced.then(|| azuma_halfwidth(n_pos, b, delta)),
        delta,
    })
}

/// Exact E[T] as a reduced fraction by enumerating every permutation.
pub fn monochromatic_exact(labels: &[f64], b: usize) -> Result<(u128, u128)> {
    class_counts(labels)?;
    check_batching(labels.len(), b)?;
    if labels.len() > 10 {
        return Err(Error::TooManyPermutations(labels.len()));
    }
    let mut total: u128 = 0;
    let mut count: u128 = 0;
    for_each_permutation(labels.len(), |p| {
        total += count_monochromatic(labels, p, b) as u128;
        count += 1;
    });
    let g = gcd(total, count);
    Ok((total / g, count / g))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub batch_size: usize,
    pub num_trials: usize,
    pub delta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mean_bound: f64,
    pub var_lower_bound: f64,
    pub var_upper_bound: f64,
    pub mean_rate: f64,
    pub var_lower_rate: f64,
    pub var_upper_rate: f64,
}

impl ConcentrationReport {
    /// Each bound is violated in at most a `delta` fraction of trials.
    pub fn within_delta(&self) -> bool {
        self.mean_rate <= self.delta && self.var_lower_rate <= self.delta && self.var_upper_rate <= self.delta
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Draws `num_trials` samples of size `B` without replacement and counts
/// violations of
/// `|μ̂ − μ| ≤ (b−a)√(log(2/δ)/B)`,
/// `σ̂ ≥ σ − 3(b−a)√(log(3/δ)/(2B))` and
/// `σ̂ ≤ σ + (b−a)√(log(1/δ)/(2B))`,
/// where σ and σ̂ are the biased population and sample deviations.
pub fn concentration_check(
    values: &[f64],
    b: usize,
    num_trials: usize,
    delta: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    let n = values.len();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if n < 2 || !(hi > lo) {
        return Err(Error::DegenerateValues);
    }
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    if b > n {
        return Err(Error::InvalidPlan(format!("B = {b} exceeds population size {n}")));
    }
    if num_trials == 0 {
        return Err(Error::InvalidPlan("num_trials must be >= 1".into()));
    }
    let range = hi - lo;
    let bf = b as f64;
    let (mu, sigma) = mean_std(values);
    let mean_bound = range * ((2.0 / delta).ln() / bf).sqrt();
    let var_lower_bound = sigma - 3.0 * range * ((3.0 / delta).ln() / (2.0 * bf)).sqrt();
    let var_upper_bound = sigma + range * ((1.0 / delta).ln() / (2.0 * bf)).sqrt();
    let viol: (usize, usize, usize) = (0..num_trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let idx = index::sample(&mut r, n, b);
            let sample: Vec<f64> = idx.iter().map(|i| values[i]).collect();
            let (m, s) = mean_std(&sample);
            (
                ((m - mu).abs() > mean_bound) as usize,
                (s < var_lower_bound) as usize,
                (s > var_upper_bound) as usize,
            )
        })
        .reduce(|| (0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let tf = num_trials as f64;
    Ok(ConcentrationReport {
        batch_size: b,
        num_trials,
        delta,
        mu,
        sigma,
        mean_bound,
        var_lower_bound,
        var_upper_bound,
        mean_rate: viol.0 as f64 / tf,
        var_lower_rate: viol.1 as f64 / tf,
        var_upper_rate: viol.2 as f64 / tf,
    })
}
