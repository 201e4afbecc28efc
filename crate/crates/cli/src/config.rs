//! Campaign configuration files.
//!
//! A config is TOML with a required top-level `seed`, an optional `workers`
//! and `out`, and one optional table per subcommand. Missing keys take the
//! defaults below, and the resolved table is echoed into the JSON summary.

use std::path::PathBuf;

use pcm_core::contour::{catalog, DEFAULT_RADIUS, DEFAULT_TOLERANCE};
use pcm_core::{Dispersion, LatticeSpec, SpectrumEnsemble};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default, rename = "haar-moments")]
    pub haar_moments: HaarMomentsConfig,
    #[serde(default)]
    pub concentration: SamplingConfig,
    #[serde(default, rename = "mean-check")]
    pub mean_check: SamplingConfig,
    #[serde(default, rename = "variance-scaling")]
    pub variance_scaling: VarianceScalingConfig,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default, rename = "contour-check")]
    pub contour_check: ContourConfig,
    #[serde(default)]
    pub propagator: PropagatorConfig,
}

impl CampaignConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config schema: {}", e.message())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionConfig {
    Continuum,
    FiniteDifference,
}

impl From<DispersionConfig> for Dispersion {
    fn from(d: DispersionConfig) -> Self {
        match d {
            DispersionConfig::Continuum => Dispersion::Continuum,
            DispersionConfig::FiniteDifference => Dispersion::FiniteDifference,
        }
    }
}

/// `spectrum = { two_point = [m1, m2] }` or `spectrum = { values = [...] }`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumConfig {
    TwoPoint([f64; 2]),
    Values(Vec<f64>),
}

impl SpectrumConfig {
    pub fn build(&self, n: usize) -> Result<SpectrumEnsemble, CliError> {
        let s = match self {
            SpectrumConfig::TwoPoint([a, b]) => SpectrumEnsemble::two_point(n, *a, *b)?,
            SpectrumConfig::Values(v) => {
                if v.len() != n {
                    return Err(CliError::param("spectrum", format!("{} values given for N = {n}", v.len())));
                }
                SpectrumEnsemble::new(v.clone())?
            }
        };
        Ok(s)
    }
}

fn lattices(sides: &[usize], volume: f64) -> Result<Vec<LatticeSpec>, CliError> {
    if sides.is_empty() {
        return Err(CliError::param("sides", "empty list"));
    }
    sides
        .iter()
        .map(|&s| LatticeSpec::new(s, volume).map_err(CliError::from))
        .collect()
}

fn nonempty<T>(name: &'static str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::param(name, "empty list"));
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct HaarMomentsConfig {
    pub ns: Vec<usize>,
    /// Each monomial is a list of 1-based `[row, col]` pairs.
    pub moments: Vec<Vec<[usize; 2]>>,
    pub samples: usize,
}

impl Default for HaarMomentsConfig {
    fn default() -> Self {
        Self {
            ns: vec![4],
            moments: vec![vec![[1, 2], [1, 2]], vec![[1, 2], [3, 4]]],
            samples: 200_000,
        }
    }
}

impl HaarMomentsConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        nonempty("ns", &self.ns)?;
        nonempty("moments", &self.moments)?;
        for m in &self.moments {
            let pairs: Vec<(usize, usize)> = m.iter().map(|p| (p[0], p[1])).collect();
            let spec = pcm_core::MomentSpec::from_pairs(&pairs)?;
            let top = spec.rows().iter().chain(spec.cols()).max().copied().unwrap_or(0);
            if let Some(n) = self.ns.iter().find(|&&n| n < top) {
                return Err(CliError::param("ns", format!("N = {n} is smaller than index {top}")));
            }
        }
        if self.samples < 100 {
            return Err(CliError::param("samples", "need at least 100"));
        }
        Ok(())
    }
}

/// Haar sampling of `t(O)` on a grid of sides and `N` values.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub sides: Vec<usize>,
    pub volume: f64,
    pub dispersion: DispersionConfig,
    pub ns: Vec<usize>,
    pub mu: f64,
    pub spectrum: SpectrumConfig,
    pub samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            sides: vec![8],
            volume: 1.0,
            dispersion: DispersionConfig::Continuum,
            ns: vec![8, 32, 64],
            mu: 1.0,
            spectrum: SpectrumConfig::TwoPoint([0.0, 1.0]),
            samples: 400,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        lattices(&self.sides, self.volume)?;
        nonempty("ns", &self.ns)?;
        if !(self.mu.is_finite()) {
            return Err(CliError::param("mu", "must be finite"));
        }
        for &n in &self.ns {
            let s = self.spectrum.build(n)?;
            if !(self.mu + s.min() > 0.0) {
                return Err(CliError::param("mu", format!("mu + min(spectrum) = {} must be positive", self.mu + s.min())));
            }
        }
        if self.samples < pcm_core::concentration::MIN_SAMPLES {
            return Err(CliError::param(
                "samples",
                format!("need at least {}", pcm_core::concentration::MIN_SAMPLES),
            ));
        }
        Ok(())
    }

    /// `(side, N)` points in row-major order over `sides × ns`.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.sides
            .iter()
            .flat_map(|&s| self.ns.iter().map(move |&n| (s, n)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisConfig {
    N,
    Side,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceScalingConfig {
    pub axis: AxisConfig,
    pub sides: Vec<usize>,
    pub volume: f64,
    pub dispersion: DispersionConfig,
    pub ns: Vec<usize>,
    pub mu: f64,
    pub spectrum: SpectrumConfig,
    pub samples: usize,
}

impl Default for VarianceScalingConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            axis: AxisConfig::N,
            sides: s.sides,
            volume: s.volume,
            dispersion: s.dispersion,
            ns: vec![8, 16, 32, 64],
            mu: s.mu,
            spectrum: s.spectrum,
            samples: s.samples,
        }
    }
}

impl VarianceScalingConfig {
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            sides: self.sides.clone(),
            volume: self.volume,
            dispersion: self.dispersion,
            ns: self.ns.clone(),
            mu: self.mu,
            spectrum: self.spectrum.clone(),
            samples: self.samples,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sampling().validate()?;
        let (fixed, swept, name) = match self.axis {
            AxisConfig::N => (self.sides.len(), self.ns.len(), "ns"),
            AxisConfig::Side => (self.ns.len(), self.sides.len(), "sides"),
        };
        if fixed != 1 {
            return Err(CliError::param("axis", "the other axis must hold a single value"));
        }
        if swept < 3 {
            return Err(CliError::param(name, "need at least 3 values for a fit"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub sides: Vec<usize>,
    pub volume: f64,
    pub dispersion: DispersionConfig,
    pub lambdas: Vec<f64>,
    /// `N` and spectrum used for the dropped-term ratio.
    pub n: usize,
    pub spectrum: SpectrumConfig,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            sides: vec![64],
            volume: 1.0,
            dispersion: DispersionConfig::Continuum,
            lambdas: vec![1.0, 2.0, 3.0, 4.0],
            n: 32,
            spectrum: SpectrumConfig::TwoPoint([0.0, 1.0]),
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        lattices(&self.sides, self.volume)?;
        nonempty("lambdas", &self.lambdas)?;
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CliError::param("lambdas", format!("need lambda > 0, got {l}")));
        }
        self.spectrum.build(self.n)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub side: usize,
    pub n: usize,
    pub lambdas: Vec<f64>,
    pub thermalization: usize,
    pub measurements: usize,
    pub interval: usize,
    pub epsilon: f64,
    pub chains: usize,
    pub hot_start: bool,
    /// Smallest separation considered for the plateau.
    pub r_min: usize,
    pub min_points: usize,
    /// Goodness-of-fit p-value a plateau fit must reach.
    pub min_p_value: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            side: 16,
            n: 8,
            lambdas: vec![1.0, 2.0, 3.0],
            thermalization: 2000,
            measurements: 3000,
            interval: 20,
            epsilon: 0.5,
            chains: 1,
            hot_start: false,
            r_min: 1,
            min_points: 3,
            min_p_value: 0.05,
        }
    }
}

impl SimulateConfig {
    pub fn params(&self, lambda: f64, seed: u64) -> pcm_core::McParams {
        pcm_core::McParams {
            thermalization: self.thermalization,
            measurements: self.measurements,
            interval: self.interval,
            epsilon: self.epsilon,
            chains: self.chains,
            hot_start: self.hot_start,
            ..pcm_core::McParams::square(self.side, self.n, lambda, seed)
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        nonempty("lambdas", &self.lambdas)?;
        for &l in &self.lambdas {
            self.params(l, 0).validate()?;
        }
        if self.min_points < 2 {
            return Err(CliError::param("min_points", "need at least 2"));
        }
        if !(0.0..1.0).contains(&self.min_p_value) {
            return Err(CliError::param("min_p_value", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    /// Catalog names; empty means the whole catalog.
    pub functions: Vec<String>,
    pub radius: f64,
    pub tolerance: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            functions: catalog().into_iter().map(|f| f.name).collect(),
            radius: DEFAULT_RADIUS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl ContourConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        nonempty("functions", &self.functions)?;
        for f in &self.functions {
            pcm_core::contour::catalog_function(f)?;
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(CliError::param("radius", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(CliError::param("tolerance", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagatorConfig {
    pub side: usize,
    pub volume: f64,
    pub dispersion: DispersionConfig,
    pub masses: Vec<f64>,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            side: 8,
            volume: 1.0,
            dispersion: DispersionConfig::Continuum,
            masses: vec![1.0],
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        LatticeSpec::new(self.side, self.volume)?;
        nonempty("masses", &self.masses)?;
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(CliError::param("masses", format!("need m > 0, got {m}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_rejected() {
        let e = CampaignConfig::parse("").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CampaignConfig::parse("seed = 1\ncolour = 3").is_err());
        assert!(CampaignConfig::parse("seed = 1\n[gap]\nlambda = [1.0]").is_err());
    }

    #[test]
    fn sections_take_defaults() {
        let c = CampaignConfig::parse("seed = 7\n[gap]\nlambdas = [2.0]").unwrap();
        assert_eq!(c.gap.sides, vec![64]);
        assert_eq!(c.gap.lambdas, vec![2.0]);
        assert_eq!(c.simulate.side, 16);
        c.gap.validate().unwrap();
    }

    #[test]
    fn spectrum_forms() {
        let c = CampaignConfig::parse("seed = 1\n[concentration]\nns = [3]\nspectrum = { values = [0.0, 0.5, 1.0] }").unwrap();
        c.concentration.validate().unwrap();
        let c = CampaignConfig::parse("seed = 1\n[concentration]\nns = [3]").unwrap();
        assert!(c.concentration.validate().is_err());
    }
}
