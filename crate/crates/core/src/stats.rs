//! Estimators shared by the Monte Carlo modules: jackknife moments,
//! integrated autocorrelation times, Kolmogorov–Smirnov and log–log fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample mean, unbiased variance, skewness and excess kurtosis.
fn central_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    if x.iter().all(|v| *v == x[0]) {
        return (x[0], 0.0, 0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let var = m2 * n / (n - 1.0);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    (mean, var, skew, kurt)
}

/// Delete-one jackknife summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JackknifeMoments {
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    pub variance_stderr: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Delete-one jackknife for the mean and the variance. Uses leave-one-out
/// sums so the cost stays linear in the sample size.
pub fn jackknife_moments(x: &[f64]) -> Result<JackknifeMoments> {
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid("samples", format!("need at least 3 samples, got {n}")));
    }
    let (mean, variance, skewness, excess_kurtosis) = central_moments(x);
    // Shift by the mean before forming power sums to avoid cancellation.
    let s1: f64 = x.iter().map(|v| v - mean).sum();
    let s2: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let nf = n as f64;
    let m = nf - 1.0;
    let mut jk_mean = Vec::with_capacity(n);
    let mut jk_var = Vec::with_capacity(n);
    for &v in x {
        let d = v - mean;
        let a1 = s1 - d;
        let a2 = s2 - d * d;
        let mu = a1 / m;
        jk_mean.push(mu);
        jk_var.push((a2 - m * mu * mu) / (m - 1.0));
    }
    let spread = |vals: &[f64]| {
        let avg = vals.iter().sum::<f64>() / nf;
        ((nf - 1.0) / nf * vals.iter().map(|v| (v - avg).powi(2)).sum::<f64>()).sqrt()
    };
    Ok(JackknifeMoments {
        mean,
        mean_stderr: spread(&jk_mean),
        variance,
        variance_stderr: spread(&jk_var),
        skewness,
        excess_kurtosis,
    })
}

/// Jackknife error of a scalar from its per-bin leave-one-out estimates.
pub fn jackknife_error(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len() as f64;
    let avg = leave_one_out.iter().sum::<f64>() / n;
    ((n - 1.0) / n * leave_one_out.iter().map(|v| (v - avg).powi(2)).sum::<f64>()).sqrt()
}

/// Integrated autocorrelation time `τ = 1/2 + Σ_t ρ(t)` with Sokal's
/// automatic window (`W ≥ c τ(W)`, `c = 6`). A white-noise series gives 1/2.
pub fn integrated_autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 0.5;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let ct = x[..n - t]
            .iter()
            .zip(&x[t..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64;
        tau += ct / c0;
        if t as f64 >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F₁ − F₂|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance 1%.
pub fn ks_critical_1pct(na: usize, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    1.628 * ((na + nb) / (na * nb)).sqrt()
}

/// Weighted least-squares line `y = a + b x`. Returns `(a, b, σ_b)`.
///
/// With `sigmas = None` the slope error is taken from the residual scatter.
pub fn fit_line(x: &[f64], y: &[f64], sigmas: Option<&[f64]>) -> (f64, f64, f64) {
    let w: Vec<f64> = match sigmas {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let b = (sw * sxy - sx * sy) / det;
    let a = (sy - b * sx) / sw;
    let sigma_b = match sigmas {
        Some(_) => (sw / det).sqrt(),
        None => {
            let dof = (x.len() as f64 - 2.0).max(1.0);
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(x, y)| (y - a - b * x).powi(2))
                .sum();
            (rss / dof * sw / det).sqrt()
        }
    };
    (a, b, sigma_b)
}

/// Correlated fit of a constant, `c = (1ᵀC⁻¹y)/(1ᵀC⁻¹1)` with error
/// `(1ᵀC⁻¹1)^{-1/2}`. Falls back to the diagonal of `C` if the full
/// covariance is not positive definite, and to a plain mean when every
/// variance vanishes.
pub fn fit_constant(y: &[f64], cov: &DMatrix<f64>) -> (f64, f64) {
    let n = y.len();
    if cov.iter().all(|&c| c == 0.0) {
        return (y.iter().sum::<f64>() / n as f64, 0.0);
    }
    let ones = DVector::from_element(n, 1.0);
    let yv = DVector::from_column_slice(y);
    let solve = |c: &DMatrix<f64>| -> Option<(f64, f64)> {
        let ch = c.clone().cholesky()?;
        let ci1 = ch.solve(&ones);
        let denom = ones.dot(&ci1);
        (denom > 0.0).then(|| (yv.dot(&ci1) / denom, denom.powf(-0.5)))
    };
    solve(cov).unwrap_or_else(|| {
        let diag = DMatrix::from_diagonal(&cov.diagonal().map(|v| if v > 0.0 { v } else { f64::MIN_POSITIVE }));
        solve(&diag).unwrap_or((yv.mean(), 0.0))
    })
}
