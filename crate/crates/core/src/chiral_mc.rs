//! Metropolis simulation of the lattice O(N) principal chiral model
//!
//! ```text
//! S = (N/λ) Σ_{x,μ̂} Tr[I − φᵀ(x) φ(x + μ̂)],   φ(x) ∈ O(N)
//! ```
//!
//! on a periodic `nx × nt` lattice, with the zero-momentum correlator of
//! `(1/N) Tr φᵀ(x)φ(y)` and cosh effective masses.
//!
//! Updates are left multiplications by random Givens rotations. Each hit
//! touches two rows of `φ(x)`, so only the matching two rows of the staple
//! are needed and a proposal costs `O(N)`. Every tenth sweep adds a pass of
//! row sign flips so both components of O(N) are visited.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numeric::bisect;
use crate::orthogonal::sample_haar;
use crate::rng::{stream, Stream};
use crate::stats::{fit_constant, integrated_autocorrelation_time, jackknife_error};

/// Minimum number of independent measurements, `n / (2 τ_int)`.
pub const MIN_DECORRELATED: f64 = 100.0;
pub const REFLECTION_PERIOD: usize = 10;
const ADAPT_PERIOD: usize = 10;
const JACKKNIFE_BINS: usize = 50;

/// Field of orthogonal matrices on a periodic `nx × nt` lattice. Site
/// `(x, t)` has index `x + nx·t`; `t` is the correlator direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    nx: usize,
    nt: usize,
    n: usize,
    sites: Vec<DMatrix<f64>>,
}

impl FieldConfig {
    fn check_shape(nx: usize, nt: usize, n: usize) -> Result<()> {
        if nx == 0 || nt == 0 {
            return Err(Error::invalid("side", "lattice extents must be positive"));
        }
        if n == 0 {
            return Err(Error::invalid("n", "N must be positive"));
        }
        Ok(())
    }

    /// Every site set to the identity.
    pub fn cold(nx: usize, nt: usize, n: usize) -> Result<Self> {
        Self::check_shape(nx, nt, n)?;
        Ok(Self {
            nx,
            nt,
            n,
            sites: vec![DMatrix::identity(n, n); nx * nt],
        })
    }

    /// Independent Haar matrices.
    pub fn hot<R: Rng + ?Sized>(nx: usize, nt: usize, n: usize, rng: &mut R) -> Result<Self> {
        Self::check_shape(nx, nt, n)?;
        let sites = (0..nx * nt).map(|_| sample_haar(n, rng).into_inner()).collect();
        Ok(Self { nx, nt, n, sites })
    }

    pub fn from_matrices(nx: usize, nt: usize, sites: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = sites.first().map_or(0, |m| m.nrows());
        Self::check_shape(nx, nt, n)?;
        if sites.len() != nx * nt {
            return Err(Error::invalid("sites", "one matrix per site required"));
        }
        let cfg = Self { nx, nt, n, sites };
        let defect = cfg.orthogonality_defect();
        if !(defect < 1e-8) {
            return Err(Error::invalid("sites", format!("not orthogonal: defect {defect:e}")));
        }
        Ok(cfg)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sites(&self) -> &[DMatrix<f64>] {
        &self.sites
    }

    pub fn index(&self, x: usize, t: usize) -> usize {
        x % self.nx + self.nx * (t % self.nt)
    }

    /// Neighbours `x ± 1`, `t ± 1` of a site. Directions of extent 1 are
    /// skipped (their links are `Tr(I − φᵀφ) = 0`); for extent 2 the same
    /// site appears twice, matching the two links of the periodic action.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        let (x, t) = (i % self.nx, i / self.nx);
        let mut out = Vec::with_capacity(4);
        if self.nx > 1 {
            out.push(self.index(x + 1, t));
            out.push(self.index(x + self.nx - 1, t));
        }
        if self.nt > 1 {
            out.push(self.index(x, t + 1));
            out.push(self.index(x, t + self.nt - 1));
        }
        out
    }

    /// Forward links `(i, i + μ̂)`, each once.
    fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.sites.len()).flat_map(move |i| {
            let (x, t) = (i % self.nx, i / self.nx);
            let fx = (self.nx > 1).then(|| (i, self.index(x + 1, t)));
            let ft = (self.nt > 1).then(|| (i, self.index(x, t + 1)));
            fx.into_iter().chain(ft)
        })
    }

    pub fn link_count(&self) -> usize {
        self.sites.len() * (usize::from(self.nx > 1) + usize::from(self.nt > 1))
    }

    pub fn orthogonality_defect(&self) -> f64 {
        let id = DMatrix::<f64>::identity(self.n, self.n);
        self.sites
            .iter()
            .map(|p| (p.transpose() * p - &id).amax())
            .fold(0.0, f64::max)
    }

    /// Modified Gram–Schmidt on the rows of every site matrix. Keeps the
    /// determinant sign.
    pub fn reorthogonalize(&mut self) {
        let n = self.n;
        for p in &mut self.sites {
            for i in 0..n {
                for k in 0..i {
                    let d: f64 = (0..n).map(|c| p[(i, c)] * p[(k, c)]).sum();
                    for c in 0..n {
                        p[(i, c)] -= d * p[(k, c)];
                    }
                }
                let norm = (0..n).map(|c| p[(i, c)] * p[(i, c)]).sum::<f64>().sqrt();
                for c in 0..n {
                    p[(i, c)] /= norm;
                }
            }
        }
    }

    /// `φ(x) → R φ(x)` at every site.
    pub fn left_multiply(&mut self, r: &DMatrix<f64>) {
        for p in &mut self.sites {
            *p = r * &*p;
        }
    }

    /// `(1/nx) Σ_x φ(x, t)` for each `t`.
    pub fn slice_means(&self) -> Vec<DMatrix<f64>> {
        (0..self.nt)
            .map(|t| {
                let mut m = DMatrix::zeros(self.n, self.n);
                for x in 0..self.nx {
                    m += &self.sites[x + self.nx * t];
                }
                m / self.nx as f64
            })
            .collect()
    }

    /// `Σ_links Tr[I − φᵀφ′]`.
    pub fn link_sum(&self) -> f64 {
        let n = self.n as f64;
        self.links()
            .map(|(a, b)| n - self.sites[a].dot(&self.sites[b]))
            .sum()
    }

    /// Link average of `(1/N) Tr[I − φᵀφ′]`, in `[0, 2]`.
    pub fn energy_density(&self) -> f64 {
        match self.link_count() {
            0 => 0.0,
            l => self.link_sum() / (l as f64 * self.n as f64),
        }
    }

    fn row_dot(&self, i: usize, a: usize, s: &[f64]) -> f64 {
        let p = &self.sites[i];
        (0..self.n).map(|c| p[(a, c)] * s[c]).sum()
    }

    fn staple_row(&self, nbs: &[usize], a: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &j in nbs {
            let q = &self.sites[j];
            for (c, v) in s.iter_mut().enumerate() {
                *v += q[(a, c)];
            }
        }
        s
    }

    fn staple(&self, nbs: &[usize]) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for &j in nbs {
            s += &self.sites[j];
        }
        s
    }
}

/// `S = (N/λ) Σ_{x,μ̂} Tr[I − φᵀ(x) φ(x + μ̂)]`.
pub fn action(config: &FieldConfig, lambda: f64) -> f64 {
    config.n as f64 / lambda * config.link_sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McParams {
    pub n: usize,
    pub lambda: f64,
    pub nx: usize,
    pub nt: usize,
    pub thermalization: usize,
    pub measurements: usize,
    /// Sweeps between consecutive measurements.
    pub interval: usize,
    /// Initial proposal half-angle; adapted during thermalization.
    pub epsilon: f64,
    pub adapt_epsilon: bool,
    /// Givens hits per site and sweep.
    pub hits: usize,
    pub reorthogonalize_every: usize,
    pub hot_start: bool,
    pub chains: usize,
    pub seed: u64,
}

impl McParams {
    /// Defaults for a square lattice.
    pub fn square(side: usize, n: usize, lambda: f64, seed: u64) -> Self {
        Self {
            n,
            lambda,
            nx: side,
            nt: side,
            thermalization: 1000,
            measurements: 1000,
            interval: 10,
            epsilon: 0.5,
            adapt_epsilon: true,
            hits: n.max(1),
            reorthogonalize_every: 100,
            hot_start: false,
            chains: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "N must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("need lambda > 0, got {}", self.lambda)));
        }
        if self.nx == 0 || self.nt == 0 {
            return Err(Error::invalid("side", "lattice extents must be positive"));
        }
        for (name, v) in [
            ("measurements", self.measurements),
            ("interval", self.interval),
            ("hits", self.hits),
            ("reorthogonalize_every", self.reorthogonalize_every),
            ("chains", self.chains),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < std::f64::consts::PI) {
            return Err(Error::invalid("epsilon", format!("need 0 < epsilon < pi, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepStats {
    pub proposals: usize,
    pub accepted: usize,
}

impl SweepStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    fn add(&mut self, o: SweepStats) {
        self.proposals += o.proposals;
        self.accepted += o.accepted;
    }
}

fn accept<R: Rng + ?Sized>(delta_s: f64, rng: &mut R) -> bool {
    delta_s <= 0.0 || rng.random::<f64>() < (-delta_s).exp()
}

/// Change of `Tr(φᵀ(i) Σ)`, with `Σ` the staple over `nbs`, when rows
/// `(a, b)` of `φ(i)` go to `(c·a − s·b, s·a + c·b)`.
fn givens_delta(config: &FieldConfig, i: usize, nbs: &[usize], a: usize, b: usize, c: f64, s: f64) -> f64 {
    let sa = config.staple_row(nbs, a);
    let sb = config.staple_row(nbs, b);
    let (aa, ab) = (config.row_dot(i, a, &sa), config.row_dot(i, a, &sb));
    let (ba, bb) = (config.row_dot(i, b, &sa), config.row_dot(i, b, &sb));
    (c - 1.0) * (aa + bb) - s * ba + s * ab
}

/// One pass of Givens-rotation hits over all sites with half-angle
/// `params.epsilon`. For `N = 1` there are no rotations and the sweep
/// consists of sign flips.
pub fn metropolis_sweep<R: Rng + ?Sized>(config: &mut FieldConfig, params: &McParams, rng: &mut R) -> SweepStats {
    let n = config.n;
    if n == 1 {
        return reflection_sweep(config, params.lambda, rng);
    }
    let beta = n as f64 / params.lambda;
    let mut stats = SweepStats::default();
    for i in 0..config.sites.len() {
        let nbs = config.neighbours(i);
        for _ in 0..params.hits {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let theta = params.epsilon * (2.0 * rng.random::<f64>() - 1.0);
            let (s, c) = theta.sin_cos();
            let delta = givens_delta(config, i, &nbs, a, b, c, s);
            stats.proposals += 1;
            if accept(-beta * delta, rng) {
                stats.accepted += 1;
                let p = &mut config.sites[i];
                for col in 0..n {
                    let (ra, rb) = (p[(a, col)], p[(b, col)]);
                    p[(a, col)] = c * ra - s * rb;
                    p[(b, col)] = s * ra + c * rb;
                }
            }
        }
    }
    stats
}

/// Proposes flipping the sign of one random row at every site.
pub fn reflection_sweep<R: Rng + ?Sized>(config: &mut FieldConfig, lambda: f64, rng: &mut R) -> SweepStats {
    let n = config.n;
    let beta = n as f64 / lambda;
    let mut stats = SweepStats::default();
    for i in 0..config.sites.len() {
        let nbs = config.neighbours(i);
        let a = rng.random_range(0..n);
        let sa = config.staple_row(&nbs, a);
        let delta = -2.0 * config.row_dot(i, a, &sa);
        stats.proposals += 1;
        if accept(-beta * delta, rng) {
            stats.accepted += 1;
            config.sites[i].row_mut(a).neg_mut();
        }
    }
    stats
}

/// Independence sampler: proposes a fresh Haar matrix at every site. Used as
/// a cross-check of the Givens chain.
pub fn independence_sweep<R: Rng + ?Sized>(config: &mut FieldConfig, lambda: f64, rng: &mut R) -> SweepStats {
    let n = config.n;
    let beta = n as f64 / lambda;
    let mut stats = SweepStats::default();
    for i in 0..config.sites.len() {
        let staple = config.staple(&config.neighbours(i));
        let proposal = sample_haar(n, rng).into_inner();
        let delta = proposal.dot(&staple) - config.sites[i].dot(&staple);
        stats.proposals += 1;
        if accept(-beta * delta, rng) {
            stats.accepted += 1;
            config.sites[i] = proposal;
        }
    }
    stats
}

/// Measurements of one Markov chain.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub nx: usize,
    pub nt: usize,
    pub n: usize,
    /// Slice means `(1/nx) Σ_x φ(x, t)` per measurement.
    pub slices: Vec<Vec<DMatrix<f64>>>,
    pub energies: Vec<f64>,
    pub acceptance: f64,
    pub epsilon: f64,
    pub max_defect: f64,
}

/// A chain with its adapted proposal width.
pub struct Chain {
    pub config: FieldConfig,
    pub params: McParams,
    rng: Stream,
    sweeps: usize,
    pub max_defect: f64,
}

impl Chain {
    pub fn new(params: &McParams, chain: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = stream(params.seed, chain, 0);
        let config = if params.hot_start {
            FieldConfig::hot(params.nx, params.nt, params.n, &mut rng)?
        } else {
            FieldConfig::cold(params.nx, params.nt, params.n)?
        };
        Ok(Self {
            config,
            params: params.clone(),
            rng,
            sweeps: 0,
            max_defect: 0.0,
        })
    }

    /// One Givens sweep, plus a reflection pass every tenth sweep and a
    /// periodic re-orthogonalization.
    pub fn sweep(&mut self) -> SweepStats {
        let stats = metropolis_sweep(&mut self.config, &self.params, &mut self.rng);
        self.sweeps += 1;
        if self.sweeps.is_multiple_of(REFLECTION_PERIOD) && self.config.n > 1 {
            reflection_sweep(&mut self.config, self.params.lambda, &mut self.rng);
        }
        if self.sweeps.is_multiple_of(self.params.reorthogonalize_every) {
            self.max_defect = self.max_defect.max(self.config.orthogonality_defect());
            self.config.reorthogonalize();
        }
        stats
    }

    /// Thermalization sweeps, tuning ε towards 40–60% acceptance.
    pub fn thermalize(&mut self) {
        let mut window = SweepStats::default();
        for k in 1..=self.params.thermalization {
            window.add(self.sweep());
            if self.params.adapt_epsilon && k % ADAPT_PERIOD == 0 {
                let rate = window.rate();
                if rate > 0.6 {
                    self.params.epsilon = (self.params.epsilon * 1.15).min(3.0);
                } else if rate < 0.4 {
                    self.params.epsilon *= 0.85;
                }
                window = SweepStats::default();
            }
        }
    }

    pub fn run(mut self) -> Ensemble {
        self.thermalize();
        let mut stats = SweepStats::default();
        let mut slices = Vec::with_capacity(self.params.measurements);
        let mut energies = Vec::with_capacity(self.params.measurements);
        for _ in 0..self.params.measurements {
            for _ in 0..self.params.interval {
                stats.add(self.sweep());
            }
            slices.push(self.config.slice_means());
            energies.push(self.config.energy_density());
        }
        Ensemble {
            nx: self.params.nx,
            nt: self.params.nt,
            n: self.params.n,
            slices,
            energies,
            acceptance: stats.rate(),
            epsilon: self.params.epsilon,
            max_defect: self.max_defect.max(self.config.orthogonality_defect()),
        }
    }
}

/// Run `params.chains` independent chains in parallel.
pub fn simulate(params: &McParams) -> Result<Vec<Ensemble>> {
    params.validate()?;
    (0..params.chains as u64)
        .into_par_iter()
        .map(|c| Chain::new(params, c).map(Chain::run))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelatorEstimate {
    /// Temporal extent of the lattice.
    pub nt: usize,
    /// Connected correlator at `r = 0..=nt/2`.
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Correlator without the vacuum subtraction.
    pub raw_values: Vec<f64>,
    pub raw_errors: Vec<f64>,
    /// Leave-one-bin-out estimates of the connected correlator.
    #[serde(skip)]
    pub jackknife: Vec<Vec<f64>>,
    pub tau_int: f64,
    pub measurements: usize,
    pub effective_measurements: f64,
}

impl CorrelatorEstimate {
    /// An error-free estimate from given values, for testing the extraction.
    pub fn exact(nt: usize, values: Vec<f64>) -> Self {
        let len = values.len();
        Self {
            nt,
            errors: vec![0.0; len],
            raw_values: values.clone(),
            raw_errors: vec![0.0; len],
            jackknife: vec![values.clone(); 2],
            values,
            tau_int: 0.5,
            measurements: 0,
            effective_measurements: f64::INFINITY,
        }
    }
}

fn slice_products(slices: &[DMatrix<f64>], n: usize, r_max: usize) -> Vec<f64> {
    let nt = slices.len();
    (0..=r_max)
        .map(|r| {
            let fwd: f64 = (0..nt).map(|t| slices[t].dot(&slices[(t + r) % nt])).sum();
            let bwd: f64 = (0..nt).map(|t| slices[t].dot(&slices[(t + nt - r) % nt])).sum();
            0.5 * (fwd + bwd) / (nt as f64 * n as f64)
        })
        .collect()
}

/// Zero-momentum correlator of `(1/N) Tr φᵀ(x)φ(y)` with jackknife errors.
/// The disconnected part `(1/N) Tr M̄ᵀM̄` is taken from the same bins.
pub fn measure_correlator(ensembles: &[Ensemble]) -> Result<CorrelatorEstimate> {
    let first = ensembles
        .first()
        .ok_or_else(|| Error::invalid("ensembles", "no measurements"))?;
    let (nt, n) = (first.nt, first.n);
    if ensembles.iter().any(|e| e.nt != nt || e.n != n || e.nx != first.nx) {
        return Err(Error::invalid("ensembles", "chains have different shapes"));
    }
    let measurements: usize = ensembles.iter().map(|e| e.slices.len()).sum();
    let tau_int = ensembles
        .iter()
        .map(|e| integrated_autocorrelation_time(&e.energies))
        .fold(0.5, f64::max);
    let effective = measurements as f64 / (2.0 * tau_int);
    if effective < MIN_DECORRELATED {
        return Err(Error::Decorrelation {
            effective,
            required: MIN_DECORRELATED,
            tau_int,
        });
    }
    let r_max = nt / 2;

    // Per bin: summed raw correlator, summed mean field, count.
    let bins_per_chain = (JACKKNIFE_BINS / ensembles.len()).max(2);
    let mut bins: Vec<(Vec<f64>, DMatrix<f64>, usize)> = Vec::new();
    for e in ensembles {
        let len = e.slices.len();
        let nb = bins_per_chain.min(len);
        for b in 0..nb {
            let (lo, hi) = (b * len / nb, (b + 1) * len / nb);
            let mut raw = vec![0.0; r_max + 1];
            let mut mean = DMatrix::zeros(n, n);
            for s in &e.slices[lo..hi] {
                for (acc, v) in raw.iter_mut().zip(slice_products(s, n, r_max)) {
                    *acc += v;
                }
                for m in s {
                    mean += m;
                }
            }
            bins.push((raw, mean / nt as f64, hi - lo));
        }
    }
    let total_raw: Vec<f64> = (0..=r_max).map(|r| bins.iter().map(|b| b.0[r]).sum()).collect();
    let total_mean = bins.iter().fold(DMatrix::zeros(n, n), |acc, b| acc + &b.1);
    let connected = |raw: &[f64], mean: &DMatrix<f64>, count: usize| -> (Vec<f64>, Vec<f64>) {
        let c = count as f64;
        let mbar = mean / c;
        let disc = mbar.dot(&mbar) / n as f64;
        let raw: Vec<f64> = raw.iter().map(|v| v / c).collect();
        (raw.iter().map(|v| v - disc).collect(), raw)
    };
    let (values, raw_values) = connected(&total_raw, &total_mean, measurements);
    let mut jk_conn = Vec::with_capacity(bins.len());
    let mut jk_raw = Vec::with_capacity(bins.len());
    for b in &bins {
        let raw: Vec<f64> = total_raw.iter().zip(&b.0).map(|(t, v)| t - v).collect();
        let (c, r) = connected(&raw, &(&total_mean - &b.1), measurements - b.2);
        jk_conn.push(c);
        jk_raw.push(r);
    }
    let column_err = |jk: &[Vec<f64>], r: usize| {
        jackknife_error(&jk.iter().map(|v| v[r]).collect::<Vec<_>>())
    };
    Ok(CorrelatorEstimate {
        nt,
        errors: (0..=r_max).map(|r| column_err(&jk_conn, r)).collect(),
        raw_errors: (0..=r_max).map(|r| column_err(&jk_raw, r)).collect(),
        values,
        raw_values,
        jackknife: jk_conn,
        tau_int,
        measurements,
        effective_measurements: effective,
    })
}

/// Mass `m` with `C(r)/C(r+1) = cosh(m(r − T/2)) / cosh(m(r + 1 − T/2))`.
/// Returns 0 for a non-decaying ratio and NaN for non-positive input.
pub fn cosh_mass(c_r: f64, c_next: f64, r: usize, nt: usize) -> f64 {
    if !(c_r > 0.0 && c_next > 0.0) {
        return f64::NAN;
    }
    let ratio = c_r / c_next;
    if ratio <= 1.0 {
        return 0.0;
    }
    let half = nt as f64 / 2.0;
    let (a, b) = (half - r as f64, half - r as f64 - 1.0);
    let g = |m: f64| {
        // ln cosh(am) − ln cosh(bm) − ln ratio, stable for large arguments.
        let lc = |x: f64| x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        lc(a * m) - lc(b * m) - ratio.ln()
    };
    let hi = (2.0 * ratio).ln() + 1.0;
    bisect(g, 0.0, hi, 1e-15, 200).0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveMass {
    /// Separations `r` at which `m_eff(r)` (from `C(r)`, `C(r+1)`) is given.
    pub separations: Vec<usize>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub window: (usize, usize),
    pub plateau: f64,
    pub plateau_error: f64,
    pub chi2_per_dof: f64,
    /// Probability of a `χ²` at least this large for `k − 1` degrees of freedom.
    pub p_value: f64,
}

/// Default fit window `[2, T/2 − 1]`.
pub fn default_window(nt: usize) -> (usize, usize) {
    (2.min(nt / 2 - 1), nt / 2 - 1)
}

/// Largest window starting at `r_min` on which `C(r)` exceeds `sigma`
/// standard errors up to and including `C(r+1)`.
pub fn significant_window(corr: &CorrelatorEstimate, r_min: usize, sigma: f64) -> Option<(usize, usize)> {
    let last = corr.nt / 2 - 1;
    let mut hi = None;
    for r in r_min..=last {
        let ok = |k: usize| corr.values[k] > sigma * corr.errors[k];
        if ok(r) && ok(r + 1) {
            hi = Some(r);
        } else {
            break;
        }
    }
    hi.map(|h| (r_min, h))
}

/// Cosh effective masses with jackknife errors, and a correlated constant
/// fit over `window` (inclusive).
pub fn effective_mass(corr: &CorrelatorEstimate, window: (usize, usize)) -> Result<EffectiveMass> {
    let nt = corr.nt;
    if nt < 4 {
        return Err(Error::invalid("nt", "temporal extent too small for an effective mass"));
    }
    let last = nt / 2 - 1;
    let (lo, hi) = window;
    if lo > hi || hi > last {
        return Err(Error::invalid("window", format!("need lo <= hi <= {last}, got ({lo}, {hi})")));
    }
    for r in lo..=hi + 1 {
        if !(corr.values[r] > 0.0) {
            return Err(Error::FitWindow { r, value: corr.values[r] });
        }
    }
    let meff = |c: &[f64]| -> Vec<f64> { (0..=last).map(|r| cosh_mass(c[r], c[r + 1], r, nt)).collect() };
    let values = meff(&corr.values);
    let jk: Vec<Vec<f64>> = corr.jackknife.iter().map(|c| meff(c)).collect();
    let errors: Vec<f64> = (0..=last)
        .map(|r| {
            let col: Vec<f64> = jk.iter().map(|v| v[r]).collect();
            if col.iter().all(|v| v.is_finite()) {
                jackknife_error(&col)
            } else {
                f64::NAN
            }
        })
        .collect();
    let w: Vec<usize> = (lo..=hi).collect();
    let k = w.len();
    let nb = jk.len() as f64;
    let avg: Vec<f64> = w.iter().map(|&r| jk.iter().map(|v| v[r]).sum::<f64>() / nb).collect();
    let cov = DMatrix::from_fn(k, k, |i, j| {
        (nb - 1.0) / nb
            * jk
                .iter()
                .map(|v| (v[w[i]] - avg[i]) * (v[w[j]] - avg[j]))
                .sum::<f64>()
    });
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitWindow {
            r: lo,
            value: f64::NAN,
        });
    }
    let y: Vec<f64> = w.iter().map(|&r| values[r]).collect();
    let (plateau, plateau_error) = fit_constant(&y, &cov);
    let chi2 = if k > 1 && plateau_error > 0.0 {
        let resid = DVector::from_iterator(k, y.iter().map(|v| v - plateau));
        match cov.clone().cholesky() {
            Some(ch) => resid.dot(&ch.solve(&resid)),
            None => (0..k).map(|i| resid[i] * resid[i] / cov[(i, i)]).sum(),
        }
    } else {
        0.0
    };
    let (chi2_per_dof, p_value) = if k > 1 {
        let dof = (k - 1) as f64;
        let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
        (chi2 / dof, dist.sf(chi2))
    } else {
        (0.0, 1.0)
    };
    Ok(EffectiveMass {
        separations: (0..=last).collect(),
        values,
        errors,
        window,
        plateau,
        plateau_error,
        chi2_per_dof,
        p_value,
    })
}

/// Earliest start `r ≥ r_min` for which the correlated constant fit over
/// `[r, hi]` has at least `min_points` points and a goodness-of-fit p-value of
/// at least `min_p_value`, `hi` being the end of the significant region (3σ).
pub fn find_plateau(
    corr: &CorrelatorEstimate,
    r_min: usize,
    min_points: usize,
    min_p_value: f64,
) -> Result<EffectiveMass> {
    let (_, hi) = significant_window(corr, r_min, 3.0).ok_or(Error::FitWindow {
        r: r_min,
        value: corr.values.get(r_min).copied().unwrap_or(f64::NAN),
    })?;
    let mut best_p_value = 0.0f64;
    for lo in r_min..=hi {
        if hi + 1 < lo + min_points {
            break;
        }
        let m = effective_mass(corr, (lo, hi))?;
        if m.p_value >= min_p_value {
            return Ok(m);
        }
        best_p_value = best_p_value.max(m.p_value);
    }
    Err(Error::NoPlateau {
        r_min,
        r_max: hi,
        best_p_value,
    })
}
