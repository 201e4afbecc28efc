//! Lattice gap equation `t₀′(m) = 1/(2λ)` for `m = μ + M̄`, the stationarity
//! system it comes from, and the free-field prediction for `ln Z[J]`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Dispersion, LatticeSpec};
use crate::numeric::{bisect, compensated_sum};
use crate::spectral::{scalar_source_quadratic, t0_closed_form, variance_prediction, SourceField};

pub const MAX_ITERATIONS: usize = 200;
/// Residual tolerance relative to the target `1/(2λ)`.
pub const RESIDUAL_TOL: f64 = 1e-12;

/// `t₀′(m) = (1/2V) Σ_p 1/(p̂² + m)`.
pub fn t0_prime(lattice: &LatticeSpec, dispersion: Dispersion, m: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid("m", format!("need m > 0, got {m}")));
    }
    let s = compensated_sum(dispersion.on_grid(lattice).iter().map(|e| 1.0 / (e + m)));
    Ok(s / (2.0 * lattice.volume()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSolution {
    pub lambda: f64,
    pub m: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `Λ̃² e^{−4π/λ}`.
    pub asymptotic_value: f64,
    /// `(Λ̃²/4) e^{−4π/λ}`.
    pub alt_asymptotic: f64,
}

impl GapSolution {
    /// `ln m + 4π/λ − ln Λ̃²`, the constant left open by the asymptotic form.
    pub fn log_offset(&self) -> f64 {
        (self.m / self.asymptotic_value).ln()
    }
}

/// The bracket `(10⁻¹² Λ̃², Λ̃²)` searched for the root.
pub fn gap_bracket(lattice: &LatticeSpec) -> (f64, f64) {
    let c2 = lattice.cutoff().powi(2);
    (1e-12 * c2, c2)
}

/// Couplings for which the bracket contains a root.
pub fn achievable_lambda(lattice: &LatticeSpec, dispersion: Dispersion) -> Result<(f64, f64)> {
    let (lo, hi) = gap_bracket(lattice);
    Ok((
        0.5 / t0_prime(lattice, dispersion, lo)?,
        0.5 / t0_prime(lattice, dispersion, hi)?,
    ))
}

/// Bisection (in `ln m`) for `t₀′(m) = 1/(2λ)` on the exact lattice sum.
pub fn solve_gap(lattice: &LatticeSpec, dispersion: Dispersion, lambda: f64) -> Result<GapSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("need lambda > 0, got {lambda}")));
    }
    let target = 0.5 / lambda;
    let (lo, hi) = gap_bracket(lattice);
    let (lambda_min, lambda_max) = achievable_lambda(lattice, dispersion)?;
    if !(lambda > lambda_min && lambda < lambda_max) {
        return Err(Error::GapRange {
            lambda,
            lambda_min,
            lambda_max,
        });
    }
    let f = |u: f64| t0_prime(lattice, dispersion, u.exp()).map_or(f64::NAN, |v| v - target);
    let (u, residual, iterations) = bisect(f, lo.ln(), hi.ln(), RESIDUAL_TOL * target, MAX_ITERATIONS);
    if !(residual.abs() < RESIDUAL_TOL * target) {
        return Err(Error::GapConvergence { residual, iterations });
    }
    let c2 = lattice.cutoff().powi(2);
    let asymptotic_value = c2 * (-4.0 * PI / lambda).exp();
    Ok(GapSolution {
        lambda,
        m: u.exp(),
        residual,
        iterations,
        asymptotic_value,
        alt_asymptotic: 0.25 * asymptotic_value,
    })
}

/// Inputs of the two stationarity conditions of the Laplace analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityState {
    pub t: f64,
    pub t0: f64,
    pub t0_prime: f64,
    pub a: f64,
    pub a_prime: f64,
    pub volume: f64,
    pub lambda: f64,
}

/// `r₁ = V + A(t − t₀)`, `r₂ = −V/2λ + (A′/2)(t − t₀)² − A(t − t₀) t₀′`.
pub fn stationarity_residuals(s: &StationarityState) -> (f64, f64) {
    let d = s.t - s.t0;
    let r1 = s.volume + s.a * d;
    let r2 = -s.volume / (2.0 * s.lambda) + 0.5 * s.a_prime * d * d - s.a * d * s.t0_prime;
    (r1, r2)
}

/// Derivative of the variance target under a uniform shift of the spectrum,
/// `M̄ → M̄ + s`, `\bar{M²} → \bar{M²} + 2sM̄ + s²`, by central differences.
pub fn inverse_a_derivative(lattice: &LatticeSpec, n: usize, mean: f64, mean_square: f64) -> f64 {
    let h = 1e-4 * mean.abs().max(1.0);
    let at = |s: f64| variance_prediction(lattice, n, mean + s, mean_square + 2.0 * s * mean + s * s);
    (at(h) - at(-h)) / (2.0 * h)
}

/// Stationary point built from the gap solution: `t₀′ = 1/(2λ)` exactly (up
/// to the solver residual), `A⁻¹` from the variance target and `t = t₀ − V/A`.
pub fn stationarity_state(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    n: usize,
    mean: f64,
    mean_square: f64,
    lambda: f64,
) -> Result<StationarityState> {
    let sol = solve_gap(lattice, dispersion, lambda)?;
    let inv_a = variance_prediction(lattice, n, mean, mean_square);
    if !(inv_a > 0.0) {
        return Err(Error::invalid("spectrum", "variance target vanishes, A is undefined"));
    }
    let a = 1.0 / inv_a;
    let a_prime = -inverse_a_derivative(lattice, n, mean, mean_square) * a * a;
    let t0 = t0_closed_form(lattice, dispersion, sol.m, 0.0)?;
    let v = lattice.volume();
    Ok(StationarityState {
        t: t0 - v / a,
        t0,
        t0_prime: t0_prime(lattice, dispersion, sol.m)?,
        a,
        a_prime,
        volume: v,
        lambda,
    })
}

/// `|V² (A⁻¹)′| / (V/2λ)`: size of the term dropped when reducing the
/// stationarity system to the gap equation.
pub fn dropped_term_ratio(lattice: &LatticeSpec, n: usize, mean: f64, mean_square: f64, lambda: f64) -> f64 {
    let v = lattice.volume();
    (v * v * inverse_a_derivative(lattice, n, mean, mean_square)).abs() / (v / (2.0 * lambda))
}

/// `ln Z[J]` of free massive fields up to a constant:
/// `−(1/2) Σ_b J_bᵀ (−∂² + μ₀)⁻¹ J_b`.
pub fn free_partition_prediction(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    mu0: f64,
    j: &SourceField,
) -> Result<f64> {
    if !(mu0 > 0.0) {
        return Err(Error::invalid("mu0", format!("need mu0 > 0, got {mu0}")));
    }
    Ok(-0.5 * scalar_source_quadratic(lattice, dispersion, mu0, j)?)
}
