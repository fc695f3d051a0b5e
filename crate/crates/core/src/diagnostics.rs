//! Statistical checks used to validate samplers: Kolmogorov-Smirnov,
//! chi-square goodness of fit, batch-means standard errors and Geweke
//! getting-it-right z-scores.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            f64::max(f - i as f64 / n, (i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square test; returns `(statistic, p-value)`.
/// Cells with expected count below 5 are pooled into their neighbour.
pub fn chi_square_test(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    let mut obs = vec![];
    let mut exp = vec![];
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        } else {
            obs.push(o_acc);
            exp.push(e_acc);
        }
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = obs.len().saturating_sub(1).max(1) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    (stat, p)
}

/// Standard error of the mean of an autocorrelated series via batch means.
pub fn batch_means_se(xs: &[f64], num_batches: usize) -> f64 {
    let b = num_batches.max(2);
    let len = xs.len() / b;
    if len == 0 {
        return (variance(xs) / xs.len() as f64).sqrt();
    }
    let means: Vec<f64> = (0..b).map(|k| mean(&xs[k * len..(k + 1) * len])).collect();
    (variance(&means) / b as f64).sqrt()
}

/// Standard error of the mean of a stationary series from Geyer's initial
/// monotone sequence estimate of the asymptotic variance.
pub fn mcmc_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return (variance(xs) / n.max(1) as f64).sqrt();
    }
    let m = mean(xs);
    let centred: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let acov = |lag: usize| -> f64 {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = acov(0);
    if g0 <= 0.0 {
        return 0.0;
    }
    // Sums of adjacent autocovariance pairs, truncated at the first
    // non-positive pair and forced to be non-increasing.
    let mut sigma2 = -g0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = acov(2 * k) + acov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sigma2 += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    (sigma2.max(g0) / n as f64).sqrt()
}

/// Geweke z-score comparing the mean of `g` under independent
/// (marginal-conditional) draws and a successive-conditional chain.
pub fn geweke_z(marginal: &[f64], successive: &[f64]) -> f64 {
    let se_m2 = variance(marginal) / marginal.len() as f64;
    let se_s = mcmc_se(successive);
    (mean(marginal) - mean(successive)) / (se_m2 + se_s * se_s).sqrt()
}
