//! Square torus geometry, momentum grid, Fourier conventions and the massive
//! lattice propagator.
//!
//! A lattice of side `Λ` and physical area `V` has spacing `Δ = √V/Λ`. Dual
//! momenta are integer multiples of `2π/√V`, with integer components in
//! `{-⌊Λ/2⌋, …, ⌈Λ/2⌉-1}`, so the grid is a square of side `Λ̃ = 2πΛ/√V`
//! centered at the origin. For a site displacement `d` and momentum index `n`,
//! `p·x = 2π (n·d) / Λ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::quad::{integrate, QuadOptions};

/// A lattice site, as integer coordinates `(x, y)` in `0..side`.
pub type Site = [usize; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    side: usize,
    volume: f64,
}

impl LatticeSpec {
    pub fn new(side: usize, volume: f64) -> Result<Self> {
        if side < 2 {
            return Err(Error::invalid("side", format!("need side >= 2, got {side}")));
        }
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(Error::invalid("volume", format!("need volume > 0, got {volume}")));
        }
        Ok(Self { side, volume })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Number of sites, `Λ²`.
    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    /// Lattice spacing `Δ = √V / Λ`.
    pub fn spacing(&self) -> f64 {
        self.volume.sqrt() / self.side as f64
    }

    /// Dual-lattice step `2π / √V`.
    pub fn momentum_step(&self) -> f64 {
        2.0 * PI / self.volume.sqrt()
    }

    /// Momentum cut-off `Λ̃ = 2πΛ/√V`, the side of the momentum square.
    pub fn cutoff(&self) -> f64 {
        2.0 * PI * self.side as f64 / self.volume.sqrt()
    }

    pub fn site_index(&self, s: Site) -> usize {
        (s[0] % self.side) * self.side + (s[1] % self.side)
    }

    pub fn site(&self, index: usize) -> Site {
        [index / self.side, index % self.side]
    }

    /// Periodic displacement `x - y` reduced into `0..side`.
    pub fn displacement(&self, x: Site, y: Site) -> [usize; 2] {
        let l = self.side;
        [(x[0] % l + l - y[0] % l) % l, (x[1] % l + l - y[1] % l) % l]
    }

    /// Phase `p·d` for momentum index `n` and integer displacement `d`,
    /// reduced exactly in integers before converting to radians.
    fn phase(&self, n: [i64; 2], d: [usize; 2]) -> f64 {
        let l = self.side as i64;
        let k = (n[0] * d[0] as i64 + n[1] * d[1] as i64).rem_euclid(l);
        2.0 * PI * k as f64 / l as f64
    }
}

/// `build_lattice(side, volume)`.
pub fn build_lattice(side: usize, volume: f64) -> Result<LatticeSpec> {
    LatticeSpec::new(side, volume)
}

/// The `Λ²` dual-lattice momenta.
#[derive(Debug, Clone)]
pub struct MomentumGrid {
    indices: Vec<[i64; 2]>,
    step: f64,
}

impl MomentumGrid {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[[i64; 2]] {
        &self.indices
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        let n = self.indices[i];
        [n[0] as f64 * self.step, n[1] as f64 * self.step]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.count()).map(move |i| self.point(i))
    }
}

/// Integer index range `{-⌊Λ/2⌋, …, ⌈Λ/2⌉-1}` of one momentum component.
pub fn index_range(side: usize) -> std::ops::Range<i64> {
    let lo = -((side / 2) as i64);
    lo..lo + side as i64
}

pub fn momentum_grid(lattice: &LatticeSpec) -> MomentumGrid {
    let r = index_range(lattice.side());
    let indices = r
        .clone()
        .flat_map(|a| r.clone().map(move |b| [a, b]))
        .collect();
    MomentumGrid {
        indices,
        step: lattice.momentum_step(),
    }
}

/// The kinetic symbol `p ↦ p̂²` used in place of `p²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dispersion {
    /// `p²` restricted to the momentum grid.
    #[default]
    Continuum,
    /// `Σ_μ (2/Δ)² sin²(p_μ Δ / 2)`, the nearest-neighbour Laplacian.
    FiniteDifference,
}

impl Dispersion {
    pub fn eval(&self, lattice: &LatticeSpec, p: [f64; 2]) -> f64 {
        match self {
            Dispersion::Continuum => p[0] * p[0] + p[1] * p[1],
            Dispersion::FiniteDifference => {
                let a = lattice.spacing();
                let c = 2.0 / a;
                p.iter().map(|&q| (c * (0.5 * q * a).sin()).powi(2)).sum()
            }
        }
    }

    /// Values of the symbol on every grid momentum, in grid order.
    pub fn on_grid(&self, lattice: &LatticeSpec) -> Vec<f64> {
        momentum_grid(lattice)
            .points()
            .map(|p| self.eval(lattice, p))
            .collect()
    }
}

/// Forward transform `f̂(p) = Σ_x e^{-ipx} f(x) Δ²`, sites in row-major order,
/// momenta in grid order.
pub fn fourier_transform(lattice: &LatticeSpec, f: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(f.len(), lattice.sites());
    let grid = momentum_grid(lattice);
    let a2 = lattice.spacing().powi(2);
    grid.indices()
        .iter()
        .map(|&n| {
            let s: Complex64 = (0..lattice.sites())
                .map(|i| f[i] * Complex64::from_polar(1.0, -lattice.phase(n, lattice.site(i))))
                .sum();
            s * a2
        })
        .collect()
}

/// Inverse transform `f(x) = (1/V) Σ_p e^{ipx} f̂(p)`.
pub fn inverse_fourier_transform(lattice: &LatticeSpec, fhat: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(fhat.len(), lattice.sites());
    let grid = momentum_grid(lattice);
    let v = lattice.volume();
    (0..lattice.sites())
        .map(|i| {
            let x = lattice.site(i);
            let s: Complex64 = grid
                .indices()
                .iter()
                .zip(fhat)
                .map(|(&n, &fh)| fh * Complex64::from_polar(1.0, lattice.phase(n, x)))
                .sum();
            s / v
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSumCheck {
    pub exact_sum: f64,
    pub disc_approx: f64,
    pub relative_gap: f64,
}

/// Compare `Σ_p f̂(|p|)` with the inscribed-disc integral
/// `(V/2π) ∫₀^{Λ̃/2} f̂(r) r dr`.
pub fn radial_sum_check<F: Fn(f64) -> f64>(f: F, lattice: &LatticeSpec) -> Result<RadialSumCheck> {
    let grid = momentum_grid(lattice);
    let exact_sum = compensated_sum(grid.points().map(|p| f(p[0].hypot(p[1]))));
    let radius = 0.5 * lattice.cutoff();
    let integral = integrate(|r| f(r) * r, 0.0, radius, QuadOptions::default())?;
    let disc_approx = lattice.volume() / (2.0 * PI) * integral.value;
    let relative_gap = if exact_sum == 0.0 {
        if disc_approx == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((exact_sum - disc_approx) / exact_sum).abs()
    };
    Ok(RadialSumCheck {
        exact_sum,
        disc_approx,
        relative_gap,
    })
}

fn check_mass(m: f64) -> Result<()> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid("m", format!("mass must be positive, got {m}")));
    }
    Ok(())
}

/// `(−∂² + m)⁻¹_{x,y} = (1/Λ²) Σ_p cos(p·(x−y)) / (p̂² + m)`.
pub fn propagator(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    m: f64,
    x: Site,
    y: Site,
) -> Result<f64> {
    check_mass(m)?;
    let grid = momentum_grid(lattice);
    let d = lattice.displacement(x, y);
    let s = compensated_sum(grid.indices().iter().enumerate().map(|(i, &n)| {
        lattice.phase(n, d).cos() / (dispersion.eval(lattice, grid.point(i)) + m)
    }));
    Ok(s / lattice.sites() as f64)
}

/// A translation-invariant lattice operator stored as its values on every
/// displacement, `table[d0 * side + d1] = O(x, x - d)`.
#[derive(Debug, Clone)]
pub struct TranslationKernel {
    lattice: LatticeSpec,
    table: Vec<f64>,
}

impl TranslationKernel {
    /// Kernel of the Fourier multiplier `symbol(p)`:
    /// `(1/Λ²) Σ_p cos(p·d) symbol(p)`.
    pub fn from_symbol(lattice: &LatticeSpec, symbol: &[f64]) -> Self {
        let grid = momentum_grid(lattice);
        assert_eq!(symbol.len(), grid.count());
        let norm = 1.0 / lattice.sites() as f64;
        let table = (0..lattice.sites())
            .map(|k| {
                let d = lattice.site(k);
                norm * compensated_sum(
                    grid.indices()
                        .iter()
                        .zip(symbol)
                        .map(|(&n, &s)| lattice.phase(n, d).cos() * s),
                )
            })
            .collect();
        Self {
            lattice: *lattice,
            table,
        }
    }

    /// Matrix element between sites `x` and `y`.
    pub fn at(&self, x: Site, y: Site) -> f64 {
        let d = self.lattice.displacement(x, y);
        self.table[d[0] * self.lattice.side() + d[1]]
    }

    /// Matrix element between site indices.
    pub fn at_index(&self, i: usize, j: usize) -> f64 {
        self.at(self.lattice.site(i), self.lattice.site(j))
    }

    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.lattice.sites();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.at_index(i, j))
    }
}

/// Propagator of mass `m` on every displacement.
pub fn propagator_kernel(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    m: f64,
) -> Result<TranslationKernel> {
    check_mass(m)?;
    let symbol: Vec<f64> = dispersion
        .on_grid(lattice)
        .into_iter()
        .map(|e| 1.0 / (e + m))
        .collect();
    Ok(TranslationKernel::from_symbol(lattice, &symbol))
}

/// The kinetic operator `−∂²` on every displacement.
pub fn laplacian_kernel(lattice: &LatticeSpec, dispersion: Dispersion) -> TranslationKernel {
    TranslationKernel::from_symbol(lattice, &dispersion.on_grid(lattice))
}
