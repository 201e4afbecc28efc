//! Haar Monte Carlo over multiplier fields: the empirical distribution of
//! `t(O)`, its mean against the large-N closed form, variance scaling fits
//! and a Gaussianity check.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Dispersion, LatticeSpec};
use crate::orthogonal::SpectrumEnsemble;
use crate::rng::stream;
use crate::spectral::{assemble_k, j_functional, t0_closed_form, t_of_o, MultiplierField, SourceField};
use crate::stats::{fit_line, jackknife_moments};

pub const MIN_SAMPLES: usize = 50;
pub const MIN_GAUSSIANITY_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalMoments {
    pub sample_count: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_stderr: f64,
    pub variance_stderr: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl EmpiricalMoments {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let jk = jackknife_moments(samples)?;
        Ok(Self {
            sample_count: samples.len(),
            mean: jk.mean,
            variance: jk.variance.max(0.0),
            mean_stderr: jk.mean_stderr,
            variance_stderr: jk.variance_stderr,
            skewness: jk.skewness,
            excess_kurtosis: jk.excess_kurtosis,
        })
    }
}

/// Parameters of one Haar sampling point.
#[derive(Debug, Clone)]
pub struct SamplingPoint {
    pub lattice: LatticeSpec,
    pub dispersion: Dispersion,
    pub mu: f64,
    pub spectrum: SpectrumEnsemble,
    pub samples: usize,
    pub seed: u64,
    pub point: u64,
}

impl SamplingPoint {
    fn validate(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::invalid(
                "samples",
                format!("need at least {MIN_SAMPLES} samples, got {}", self.samples),
            ));
        }
        let margin = self.mu + self.spectrum.min();
        if !(margin > 0.0) {
            return Err(Error::GuardViolation { margin });
        }
        Ok(())
    }

    /// Evaluate `f` on independent Haar fields, one RNG stream per sample.
    /// Output order follows the sample index.
    pub fn map_fields<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&MultiplierField) -> Result<f64> + Sync,
    {
        self.validate()?;
        (0..self.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(self.seed, self.point, i as u64);
                let field = MultiplierField::haar(self.lattice, self.spectrum.clone(), &mut rng);
                f(&field)
            })
            .collect()
    }

    pub fn t_samples(&self) -> Result<Vec<f64>> {
        self.map_fields(|field| t_of_o(&assemble_k(&self.lattice, self.dispersion, self.mu, field)?))
    }

    pub fn j_samples(&self, j: &SourceField) -> Result<Vec<f64>> {
        self.map_fields(|field| j_functional(&assemble_k(&self.lattice, self.dispersion, self.mu, field)?, j))
    }
}

/// Draw independent per-site Haar fields and summarize `t(O)`.
pub fn sample_t_distribution(point: &SamplingPoint) -> Result<EmpiricalMoments> {
    EmpiricalMoments::from_samples(&point.t_samples()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanGap {
    pub gap: f64,
    pub gap_in_stderr: f64,
    pub relative_gap: f64,
}

pub fn mean_vs_t0(
    em: &EmpiricalMoments,
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    mu: f64,
    mean: f64,
) -> Result<MeanGap> {
    let t0 = t0_closed_form(lattice, dispersion, mu, mean)?;
    let gap = (em.mean - t0).abs();
    let gap_in_stderr = if em.mean_stderr > 0.0 {
        gap / em.mean_stderr
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MeanGap {
        gap,
        gap_in_stderr,
        relative_gap: gap / t0.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingAxis {
    N,
    Side,
}

impl ScalingAxis {
    /// Exponent predicted by the large-N variance estimate.
    pub fn target_exponent(self) -> f64 {
        match self {
            ScalingAxis::N => -2.0,
            ScalingAxis::Side => -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub axis: ScalingAxis,
    pub abscissae: Vec<f64>,
    pub ordinates: Vec<f64>,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub intercept: f64,
}

/// Least squares on `ln Var = a + b ln x`, weighted by the jackknife errors of
/// the variances when all of them are positive.
pub fn variance_scaling_fit(runs: &[(f64, EmpiricalMoments)], axis: ScalingAxis) -> Result<ScalingFit> {
    if runs.len() < 3 {
        return Err(Error::invalid("runs", format!("need at least 3 runs, got {}", runs.len())));
    }
    if let Some((x, _)) = runs.iter().find(|(_, em)| !(em.variance > 0.0)) {
        return Err(Error::invalid("runs", format!("non-positive variance at abscissa {x}")));
    }
    if runs.iter().any(|(x, _)| !(*x > 0.0)) {
        return Err(Error::invalid("runs", "abscissae must be positive"));
    }
    let lx: Vec<f64> = runs.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = runs.iter().map(|(_, em)| em.variance.ln()).collect();
    let sig: Vec<f64> = runs.iter().map(|(_, em)| em.variance_stderr / em.variance).collect();
    let weights = sig.iter().all(|s| *s > 0.0).then_some(sig.as_slice());
    let (intercept, exponent, exponent_stderr) = fit_line(&lx, &ly, weights);
    Ok(ScalingFit {
        axis,
        abscissae: runs.iter().map(|(x, _)| *x).collect(),
        ordinates: runs.iter().map(|(_, em)| em.variance).collect(),
        exponent,
        exponent_stderr,
        intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianityReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub both_small: bool,
}

pub fn gaussianity_report(em: &EmpiricalMoments) -> Result<GaussianityReport> {
    if em.sample_count < MIN_GAUSSIANITY_SAMPLES {
        return Err(Error::invalid(
            "samples",
            format!("need at least {MIN_GAUSSIANITY_SAMPLES} samples, got {}", em.sample_count),
        ));
    }
    Ok(GaussianityReport {
        skewness: em.skewness,
        excess_kurtosis: em.excess_kurtosis,
        both_small: em.skewness.abs() < 0.2 && em.excess_kurtosis.abs() < 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::orthogonal::spectrum_ensemble;
    use rand::{Rng, SeedableRng};

    fn point(side: usize, spectrum: Vec<f64>, samples: usize, seed: u64) -> SamplingPoint {
        SamplingPoint {
            lattice: build_lattice(side, 1.0).unwrap(),
            dispersion: Dispersion::Continuum,
            mu: 1.0,
            spectrum: spectrum_ensemble(spectrum).unwrap(),
            samples,
            seed,
            point: 0,
        }
    }

    #[test]
    fn zero_and_degenerate_spectra_have_no_spread() {
        let em = sample_t_distribution(&point(3, vec![0.0; 3], 60, 1)).unwrap();
        assert_eq!(em.variance, 0.0);
        let p = point(3, vec![0.4; 4], 60, 2);
        let em = sample_t_distribution(&p).unwrap();
        assert_eq!(em.variance, 0.0);
        let g = mean_vs_t0(&em, &p.lattice, p.dispersion, 1.0, 0.4).unwrap();
        assert!(g.gap < 1e-10);
    }

    #[test]
    fn guard_and_sample_floor() {
        assert!(sample_t_distribution(&point(2, vec![0.0, 1.0], 49, 1)).unwrap_err().is_validation());
        let mut p = point(2, vec![-2.0, 1.0], 60, 1);
        p.mu = 1.0;
        assert!(matches!(sample_t_distribution(&p), Err(Error::GuardViolation { .. })));
    }

    #[test]
    fn small_system_mean_matches_higher_statistics() {
        let a = sample_t_distribution(&point(2, vec![0.0, 1.0], 10_000, 3)).unwrap();
        let b = sample_t_distribution(&point(2, vec![0.0, 1.0], 100_000, 4)).unwrap();
        let combined = a.mean_stderr.hypot(b.mean_stderr);
        assert!((a.mean - b.mean).abs() < 4.0 * combined);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = point(3, vec![0.0, 1.0, 0.0, 1.0], 64, 9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| p.t_samples()).unwrap();
        let b = three.install(|| p.t_samples()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let mk = |v: f64| EmpiricalMoments {
            sample_count: 100,
            mean: 0.0,
            variance: v,
            mean_stderr: 0.0,
            variance_stderr: 0.1 * v,
            skewness: 0.0,
            excess_kurtosis: 0.0,
        };
        let runs: Vec<_> = [8.0, 16.0, 32.0, 64.0].iter().map(|&n: &f64| (n, mk(3.0 / (n * n)))).collect();
        let fit = variance_scaling_fit(&runs, ScalingAxis::N).unwrap();
        assert!((fit.exponent + 2.0).abs() < 1e-10);
        let runs: Vec<_> = [4.0, 6.0, 8.0].iter().map(|&l: &f64| (l, mk(l.powi(-4)))).collect();
        assert!((variance_scaling_fit(&runs, ScalingAxis::Side).unwrap().exponent + 4.0).abs() < 1e-10);
        assert!(variance_scaling_fit(&runs[..2], ScalingAxis::Side).is_err());
        let bad = vec![(1.0, mk(1.0)), (2.0, mk(0.0)), (3.0, mk(1.0))];
        assert!(variance_scaling_fit(&bad, ScalingAxis::N).is_err());
    }

    #[test]
    fn gaussianity_on_synthetic_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let normal: Vec<f64> = (0..5000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let em = EmpiricalMoments::from_samples(&normal).unwrap();
        assert!(gaussianity_report(&em).unwrap().both_small);
        let exp: Vec<f64> = (0..5000).map(|_| rng.sample(rand_distr::Exp1)).collect();
        let em = EmpiricalMoments::from_samples(&exp).unwrap();
        let r = gaussianity_report(&em).unwrap();
        assert!(!r.both_small && (r.skewness - 2.0).abs() < 0.4);
        let few = EmpiricalMoments::from_samples(&exp[..499]).unwrap();
        assert!(gaussianity_report(&few).is_err());
    }
}
