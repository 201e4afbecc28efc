//! Numerical check of the rotation identity
//!
//! ```text
//! ∫_ℝ f(x) |x| dx = i² ∫_ℝ f(it) |t| dt
//! ```
//!
//! for functions analytic and decaying in the first and third quadrants.
//! The catalog holds rational functions `Σ c z^j / Π (z² + i a_k)^{e_k}` with
//! `a_k > 0`, whose poles `z = √a e^{−iπ/4}, √a e^{3iπ/4}` lie in the second
//! and fourth quadrants.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{integrate_complex, QuadOptions};

pub const DEFAULT_RADIUS: f64 = 1e5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// `coeff · z^power / Π_k (z² + i a_k)^{e_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTerm {
    pub coeff: Complex64,
    pub power: u32,
    pub factors: Vec<(f64, u32)>,
}

impl RationalTerm {
    pub fn new(coeff: Complex64, power: u32, factors: Vec<(f64, u32)>) -> Result<Self> {
        if factors.iter().any(|&(a, _)| !(a > 0.0)) {
            return Err(Error::invalid("factors", "pole parameters must be positive"));
        }
        let t = Self { coeff, power, factors };
        if t.decay_margin() < 1 {
            return Err(Error::invalid(
                "factors",
                "denominator degree must exceed the numerator degree by at least 3",
            ));
        }
        Ok(t)
    }

    fn degree(&self) -> i64 {
        self.factors.iter().map(|&(_, e)| 2 * e as i64).sum()
    }

    /// `D − j − 2`, the exponent margin of `|f(z)| |z| ≤ |c| |z|^{j + 1 − D}`.
    fn decay_margin(&self) -> i64 {
        self.degree() - self.power as i64 - 2
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let z2 = z * z;
        let den = self
            .factors
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, &(a, e)| acc * (z2 + Complex64::new(0.0, a)).powu(e));
        self.coeff * z.powu(self.power) / den
    }

    /// Bound on `∫_R^∞ |f(s)| s ds` along either axis. On both axes
    /// `|z² + ia| ≥ |z|²`, so `|f| ≤ |c| |z|^{j − D}`. Odd terms cancel
    /// exactly between the two half-lines.
    fn tail(&self, r: f64) -> f64 {
        if self.power % 2 == 1 {
            return 0.0;
        }
        let m = self.decay_margin() as f64;
        self.coeff.norm() * r.powf(-m) / m
    }
}

/// A named entry of the function catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogFunction {
    pub name: String,
    pub terms: Vec<RationalTerm>,
}

impl CatalogFunction {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.terms.iter().map(|t| t.eval(z)).sum()
    }

    /// `a·f + b·g`.
    pub fn combine(a: Complex64, f: &Self, b: Complex64, g: &Self) -> Self {
        let scale = |c: Complex64, t: &RationalTerm| RationalTerm {
            coeff: c * t.coeff,
            ..t.clone()
        };
        Self {
            name: format!("({a})*{} + ({b})*{}", f.name, g.name),
            terms: f
                .terms
                .iter()
                .map(|t| scale(a, t))
                .chain(g.terms.iter().map(|t| scale(b, t)))
                .collect(),
        }
    }

    /// Bound on the total truncation error of both sides at radius `r`
    /// (four half-line tails).
    pub fn tail_bound(&self, r: f64) -> f64 {
        4.0 * self.terms.iter().map(|t| t.tail(r)).sum::<f64>()
    }

    /// Smallest power-of-two multiple of `r` whose tail bound is below `tol`.
    pub fn required_radius(&self, mut r: f64, tol: f64) -> f64 {
        while self.tail_bound(r) > tol && r < 1e150 {
            r *= 2.0;
        }
        r
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `(coeff, power, [(a, e)])` for each term.
type TermSpec = (Complex64, u32, Vec<(f64, u32)>);

fn entry(name: &str, terms: Vec<TermSpec>) -> CatalogFunction {
    CatalogFunction {
        name: name.to_string(),
        terms: terms
            .into_iter()
            .map(|(k, j, f)| RationalTerm::new(k, j, f).expect("catalog entries are valid"))
            .collect(),
    }
}

/// The fixed catalog of test functions.
pub fn catalog() -> Vec<CatalogFunction> {
    vec![
        entry("inv_sq_i", vec![(c(1.0, 0.0), 0, vec![(1.0, 2)])]),
        entry("inv_i_2i", vec![(c(1.0, 0.0), 0, vec![(1.0, 1), (2.0, 1)])]),
        entry("odd_cubic", vec![(c(1.0, 0.0), 1, vec![(1.0, 3)])]),
        entry("z2_cubic_3i", vec![(c(1.0, 0.0), 2, vec![(3.0, 3)])]),
        entry("inv_cube_half", vec![(c(0.0, 2.0), 0, vec![(0.5, 3)])]),
        entry(
            "mixed",
            vec![
                (c(2.0, -1.0), 0, vec![(1.0, 2)]),
                (c(0.5, 0.0), 2, vec![(2.0, 2), (1.0, 1)]),
                (c(-1.0, 3.0), 1, vec![(4.0, 2)]),
            ],
        ),
    ]
}

pub fn catalog_function(name: &str) -> Result<CatalogFunction> {
    catalog()
        .into_iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::invalid("function", format!("unknown catalog function `{name}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourTestCase {
    pub function: CatalogFunction,
    pub radius: f64,
    /// Maximum admissible tail bound.
    pub tolerance: f64,
    pub quadrature: QuadOptions,
}

impl ContourTestCase {
    pub fn new(function: CatalogFunction) -> Self {
        Self {
            function,
            radius: DEFAULT_RADIUS,
            tolerance: DEFAULT_TOLERANCE,
            quadrature: QuadOptions {
                abs_tol: 1e-12,
                ..QuadOptions::default()
            },
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationCheck {
    pub lhs_re: f64,
    pub lhs_im: f64,
    pub rhs_re: f64,
    pub rhs_im: f64,
    /// `|lhs − rhs|` plus the truncation bound.
    pub gap: f64,
    pub tail_bound: f64,
    pub quadrature_error: f64,
}

impl RotationCheck {
    pub fn lhs(&self) -> Complex64 {
        c(self.lhs_re, self.lhs_im)
    }

    pub fn rhs(&self) -> Complex64 {
        c(self.rhs_re, self.rhs_im)
    }
}

/// `lhs = ∫_{−R}^{R} f(x)|x| dx`, `rhs = −∫_{−R}^{R} f(it)|t| dt`, each folded
/// onto `[0, R]` so the kink of `|x|` sits at an endpoint.
pub fn verify_rotation(case: &ContourTestCase) -> Result<RotationCheck> {
    if !(case.radius > 0.0) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let f = &case.function;
    let tail_bound = f.tail_bound(case.radius);
    if tail_bound > case.tolerance {
        return Err(Error::TailBound {
            bound: tail_bound,
            tolerance: case.tolerance,
            required_radius: f.required_radius(case.radius, case.tolerance),
        });
    }
    let lhs = integrate_complex(
        |x| (f.eval(c(x, 0.0)) + f.eval(c(-x, 0.0))) * x,
        0.0,
        case.radius,
        case.quadrature,
    )?;
    let rhs = integrate_complex(
        |t| -(f.eval(c(0.0, t)) + f.eval(c(0.0, -t))) * t,
        0.0,
        case.radius,
        case.quadrature,
    )?;
    Ok(RotationCheck {
        lhs_re: lhs.value.re,
        lhs_im: lhs.value.im,
        rhs_re: rhs.value.re,
        rhs_im: rhs.value.im,
        gap: (lhs.value - rhs.value).norm() + tail_bound,
        tail_bound,
        quadrature_error: lhs.error + rhs.error,
    })
}
