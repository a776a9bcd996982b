//! Small statistical toolbox: moments with standard errors, weighted
//! empirical CDF distances with Monte Carlo calibration, and least-squares
//! line fits for scaling exponents.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::CoreError;
use crate::Result;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> Result<MeanSe> {
    if xs.is_empty() {
        return Err(CoreError::Degenerate("mean of an empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MeanSe {
        mean,
        std_error: (var / n).sqrt(),
        n: xs.len(),
    })
}

/// Mean and standard error of the products `w_i f_i` under the convention
/// that the weights average to one in expectation, so `(1/n) sum w f`
/// estimates the reweighted expectation of `f`.
pub fn weighted_mean_se(values: &[f64], weights: &[f64]) -> Result<MeanSe> {
    if values.len() != weights.len() {
        return Err(CoreError::Degenerate(
            "values and weights must have equal length".into(),
        ));
    }
    let products: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    mean_se(&products)
}

/// Effective sample size `(sum w)^2 / sum w^2` of an importance-weighted
/// sample.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Ordinary least-squares line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals (needs >= 3 points).
    pub slope_std_error: f64,
    pub residual_rms: f64,
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let residual_rms = (ss_res / n).sqrt();
    let slope_std_error = if xs.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LineFit {
        slope,
        intercept,
        slope_std_error,
        residual_rms,
        n: xs.len(),
    })
}

/// Quantile of a sorted slice by linear interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Standard normal CDF with location and scale.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    let n = Normal::new(mean, sd).expect("valid normal parameters");
    n.cdf(x)
}

/// Sup distance between the weighted empirical CDF of `(values, weights)`
/// and a reference CDF. Weights are normalized internally.
pub fn weighted_cdf_sup_distance<F>(values: &[f64], weights: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if values.is_empty() || values.len() != weights.len() {
        return Err(CoreError::Degenerate(
            "weighted CDF distance needs matching nonempty samples".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(CoreError::Degenerate("weights must have positive sum".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut running = 0.0;
    let mut sup = 0.0f64;
    for &i in &order {
        let f = cdf(values[i]);
        sup = sup.max((running / total - f).abs());
        running += weights[i];
        sup = sup.max((running / total - f).abs());
    }
    Ok(sup)
}

/// Monte Carlo critical value for the weighted sup-CDF distance under the
/// null "positions are exactly the reference law". Each replica draws fresh
/// Gaussian positions and pairs them with a random permutation of the
/// observed weights, so the calibration sees the real weight spread.
pub fn ks_critical_mc(
    weights: &[f64],
    mean: f64,
    sd: f64,
    alpha: f64,
    replicas: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if weights.is_empty() || replicas == 0 {
        return Err(CoreError::Degenerate(
            "critical-value calibration needs weights and replicas".into(),
        ));
    }
    let mut perm: Vec<f64> = weights.to_vec();
    let mut dists = Vec::with_capacity(replicas);
    let mut draws = vec![0.0; weights.len()];
    for _ in 0..replicas {
        perm.shuffle(rng);
        for d in draws.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d = mean + sd * z;
        }
        dists.push(weighted_cdf_sup_distance(&draws, &perm, |x| {
            normal_cdf(x, mean, sd)
        })?);
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(quantile_sorted(&dists, 1.0 - alpha))
}

/// Two-sample z-score for equality of means.
pub fn two_sample_z(a: &MeanSe, b: &MeanSe) -> f64 {
    let se = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    if se > 0.0 {
        (a.mean - b.mean) / se
    } else if a.mean == b.mean {
        0.0
    } else {
        f64::INFINITY
    }
}
