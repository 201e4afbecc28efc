//! The operator `K = (−∂² + μ) ⊗ I_N + ⊕_x Oᵀ(x) M̂ O(x)`, the functional
//! `t(O) = Tr ln K / (2NV)`, the source functional `Σ_b J_bᵀ K⁻¹ J_b`, and
//! their large-N Haar-averaged counterparts.
//!
//! Operator rows are indexed by `(site, colour) ↦ site * N + colour`.
//!
//! Two evaluation routes are provided. The dense route builds the full
//! `Λ²N × Λ²N` matrix and factors it (eigendecomposition or Cholesky). The
//! low-rank route writes the multiplier term relative to the smallest
//! eigenvalue `m₀`, `Oᵀ(M̂ − m₀)O = U Uᵀ` with `U` of rank
//! `r = #{a : M̂_a > m₀}`, and uses
//!
//! ```text
//! ln det K = N Σ_p ln(p̂² + μ + m₀) + ln det(I + Uᵀ(G ⊗ I)U),  G = (−∂² + μ + m₀)⁻¹
//! ```
//!
//! together with the Woodbury identity for `K⁻¹`. The reduced matrix has
//! `Λ² r` rows, a factor `(N/r)³` cheaper to factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{laplacian_kernel, propagator_kernel, Dispersion, LatticeSpec, TranslationKernel};
use crate::linalg::{smallest_eigenvalue, Cholesky};
use crate::numeric::compensated_sum;
use crate::orthogonal::{sample_haar, OrthogonalMatrix, SpectrumEnsemble};

/// Largest operator dimension for which a dense matrix is materialized.
pub const DENSE_LIMIT: usize = 6144;

/// Per-site orthogonal matrices sharing one site-independent eigenvalue vector.
#[derive(Debug, Clone)]
pub struct MultiplierField {
    lattice: LatticeSpec,
    rotations: Vec<OrthogonalMatrix>,
    spectrum: SpectrumEnsemble,
}

impl MultiplierField {
    pub fn new(
        lattice: LatticeSpec,
        rotations: Vec<OrthogonalMatrix>,
        spectrum: SpectrumEnsemble,
    ) -> Result<Self> {
        if rotations.len() != lattice.sites() {
            return Err(Error::invalid(
                "rotations",
                format!("expected {} matrices, got {}", lattice.sites(), rotations.len()),
            ));
        }
        if rotations.iter().any(|o| o.dim() != spectrum.len()) {
            return Err(Error::invalid("rotations", "dimension differs from spectrum length"));
        }
        Ok(Self {
            lattice,
            rotations,
            spectrum,
        })
    }

    /// Independent Haar matrix at every site.
    pub fn haar<R: Rng + ?Sized>(lattice: LatticeSpec, spectrum: SpectrumEnsemble, rng: &mut R) -> Self {
        let n = spectrum.len();
        let rotations = (0..lattice.sites()).map(|_| sample_haar(n, rng)).collect();
        Self {
            lattice,
            rotations,
            spectrum,
        }
    }

    pub fn identity(lattice: LatticeSpec, spectrum: SpectrumEnsemble) -> Self {
        let n = spectrum.len();
        Self {
            lattice,
            rotations: vec![OrthogonalMatrix::identity(n); lattice.sites()],
            spectrum,
        }
    }

    pub fn n(&self) -> usize {
        self.spectrum.len()
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn rotations(&self) -> &[OrthogonalMatrix] {
        &self.rotations
    }

    pub fn spectrum(&self) -> &SpectrumEnsemble {
        &self.spectrum
    }

    /// `Oᵀ(x) M̂ O(x)` at site index `x`.
    pub fn block(&self, x: usize) -> DMatrix<f64> {
        self.rotations[x].conjugate_diagonal(self.spectrum.values())
    }

    /// `d(O, O′) = Σ_x ‖O(x) − O′(x)‖_HS`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.rotations
            .iter()
            .zip(&other.rotations)
            .map(|(a, b)| (a.matrix() - b.matrix()).norm())
            .sum()
    }

    /// Replace every rotation by `f(site, O(x))`.
    pub fn map_rotations<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &OrthogonalMatrix) -> DMatrix<f64>,
    {
        let rotations = self
            .rotations
            .iter()
            .enumerate()
            .map(|(i, o)| OrthogonalMatrix::new(f(i, o)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.lattice, rotations, self.spectrum.clone())
    }
}

/// Real symmetric operator `(−∂² + μ) ⊗ I_N + ⊕_x Oᵀ(x) M̂ O(x)`.
#[derive(Debug, Clone)]
pub struct KOperator {
    lattice: LatticeSpec,
    dispersion: Dispersion,
    mu: f64,
    field: MultiplierField,
    laplacian: TranslationKernel,
}

/// How to evaluate `ln det K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogDetMethod {
    /// Dense symmetric eigendecomposition.
    Eigen,
    /// Dense blocked Cholesky.
    Cholesky,
    /// Low-rank reduction around the smallest eigenvalue of `M̂`.
    #[default]
    LowRank,
}

/// `assemble_K`: validates `μ + min M̂ > 0`, which makes `K` positive definite.
pub fn assemble_k(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    mu: f64,
    field: &MultiplierField,
) -> Result<KOperator> {
    if field.lattice() != lattice {
        return Err(Error::invalid("field", "multiplier field lives on a different lattice"));
    }
    if !mu.is_finite() {
        return Err(Error::invalid("mu", "must be finite"));
    }
    let margin = mu + field.spectrum().min();
    if !(margin > 0.0) {
        return Err(Error::GuardViolation { margin });
    }
    Ok(KOperator {
        lattice: *lattice,
        dispersion,
        mu,
        field: field.clone(),
        laplacian: laplacian_kernel(lattice, dispersion),
    })
}

impl KOperator {
    pub fn dim(&self) -> usize {
        self.lattice.sites() * self.field.n()
    }

    pub fn n(&self) -> usize {
        self.field.n()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn dispersion(&self) -> Dispersion {
        self.dispersion
    }

    pub fn field(&self) -> &MultiplierField {
        &self.field
    }

    /// Matrix-free application `v ↦ K v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let sites = self.lattice.sites();
        assert_eq!(v.len(), sites * n);
        let mut out = vec![0.0; v.len()];
        for x in 0..sites {
            for y in 0..sites {
                let k = self.laplacian.at_index(x, y);
                for a in 0..n {
                    out[x * n + a] += k * v[y * n + a];
                }
            }
            let block = self.field.block(x);
            let vx = DVector::from_column_slice(&v[x * n..(x + 1) * n]);
            let bx = &block * vx;
            for a in 0..n {
                out[x * n + a] += self.mu * v[x * n + a] + bx[a];
            }
        }
        out
    }

    /// Dense realization, available up to [`DENSE_LIMIT`] rows.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if dim > DENSE_LIMIT {
            return Err(Error::invalid(
                "dimension",
                format!("dense realization limited to {DENSE_LIMIT} rows, operator has {dim}"),
            ));
        }
        let n = self.n();
        let sites = self.lattice.sites();
        let mut k = DMatrix::zeros(dim, dim);
        for x in 0..sites {
            for y in 0..sites {
                let l = self.laplacian.at_index(x, y);
                if l != 0.0 {
                    for a in 0..n {
                        k[(x * n + a, y * n + a)] = l;
                    }
                }
            }
            let block = self.field.block(x);
            for a in 0..n {
                for b in 0..n {
                    k[(x * n + a, x * n + b)] += block[(a, b)];
                }
                k[(x * n + a, x * n + a)] += self.mu;
            }
        }
        Ok(k)
    }

    /// All eigenvalues, ascending, by dense symmetric eigendecomposition.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(self.dense()?)
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    pub fn log_det(&self, method: LogDetMethod) -> Result<f64> {
        match method {
            LogDetMethod::Eigen => {
                let ev = self.eigenvalues()?;
                if ev[0] <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        smallest_eigenvalue: ev[0],
                    });
                }
                Ok(compensated_sum(ev.iter().map(|e| e.ln())))
            }
            LogDetMethod::Cholesky => {
                let dense = self.dense()?;
                match Cholesky::new(dense.clone()) {
                    Ok(c) => Ok(c.log_det()),
                    Err(Error::NotPositiveDefinite { .. }) => Err(Error::NotPositiveDefinite {
                        smallest_eigenvalue: smallest_eigenvalue(&dense),
                    }),
                    Err(e) => Err(e),
                }
            }
            LogDetMethod::LowRank => Ok(self.low_rank()?.log_det()),
        }
    }

    /// Low-rank factorization of `K` around the smallest eigenvalue of `M̂`.
    pub fn low_rank(&self) -> Result<LowRankK> {
        LowRankK::new(self)
    }
}

/// `K = (D ⊗ I) + U Uᵀ` with `D = −∂² + μ + m₀`, carrying the Cholesky factor
/// of the capacitance matrix `W = I + Uᵀ(D⁻¹ ⊗ I)U`.
#[derive(Debug, Clone)]
pub struct LowRankK {
    n: usize,
    sites: usize,
    rank: usize,
    base_log_det: f64,
    green: DMatrix<f64>,
    /// Per site, the `r × N` matrix `diag(√(M̂_α − m₀)) O(x)[α, :]`.
    u_rows: Vec<DMatrix<f64>>,
    capacitance: Option<Cholesky>,
}

impl LowRankK {
    fn new(k: &KOperator) -> Result<Self> {
        let lattice = k.lattice;
        let n = k.n();
        let sites = lattice.sites();
        let spectrum = k.field.spectrum().values();
        let m0 = k.field.spectrum().min();
        let mass = k.mu + m0;
        let active: Vec<(usize, f64)> = spectrum
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > m0)
            .map(|(a, &v)| (a, (v - m0).sqrt()))
            .collect();
        let rank = active.len();
        let base_log_det = n as f64
            * compensated_sum(k.dispersion.on_grid(&lattice).iter().map(|e| (e + mass).ln()));
        let green = propagator_kernel(&lattice, k.dispersion, mass)?.dense();
        let u_rows: Vec<DMatrix<f64>> = k
            .field
            .rotations()
            .iter()
            .map(|o| {
                DMatrix::from_fn(rank, n, |alpha, b| {
                    let (a, s) = active[alpha];
                    s * o.matrix()[(a, b)]
                })
            })
            .collect();
        let capacitance = if rank == 0 {
            None
        } else {
            let mut stacked = DMatrix::zeros(sites * rank, n);
            for (x, u) in u_rows.iter().enumerate() {
                stacked.view_mut((x * rank, 0), (rank, n)).copy_from(u);
            }
            let mut w = &stacked * stacked.transpose();
            for x in 0..sites {
                for y in 0..sites {
                    let g = green[(x, y)];
                    w.view_mut((x * rank, y * rank), (rank, rank)).scale_mut(g);
                }
            }
            for i in 0..sites * rank {
                w[(i, i)] += 1.0;
            }
            Some(Cholesky::new(w)?)
        };
        Ok(Self {
            n,
            sites,
            rank,
            base_log_det,
            green,
            u_rows,
            capacitance,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn log_det(&self) -> f64 {
        self.base_log_det + self.capacitance.as_ref().map_or(0.0, |c| c.log_det())
    }

    /// `Σ_b J_bᵀ K⁻¹ J_b` via Woodbury.
    pub fn source_quadratic(&self, j: &SourceField) -> f64 {
        let n = self.n;
        let n2 = n * n;
        let mut stacked = DMatrix::zeros(self.sites, n2);
        for (x, jx) in j.values.iter().enumerate() {
            stacked.row_mut(x).copy_from_slice(jx.as_slice());
        }
        let h = &self.green * &stacked;
        let base = compensated_sum(stacked.iter().zip(h.iter()).map(|(a, b)| a * b));
        let Some(chol) = &self.capacitance else {
            return base;
        };
        let r = self.rank;
        let mut y = DMatrix::zeros(self.sites * r, n);
        for x in 0..self.sites {
            let hx = DMatrix::from_row_slice(n, n, &h.row(x).iter().cloned().collect::<Vec<_>>())
                .transpose();
            y.view_mut((x * r, 0), (r, n)).copy_from(&(&self.u_rows[x] * hx));
        }
        chol.forward_solve_mut(&mut y);
        base - y.norm_squared()
    }
}

/// `t(O) = Tr ln K / (2 N V)`, by the low-rank route.
pub fn t_of_o(k: &KOperator) -> Result<f64> {
    t_of_o_with(k, LogDetMethod::LowRank)
}

pub fn t_of_o_with(k: &KOperator, method: LogDetMethod) -> Result<f64> {
    let ld = k.log_det(method)?;
    Ok(ld / (2.0 * k.n() as f64 * k.lattice.volume()))
}

fn check_shifted_mass(mu: f64, mean: f64) -> Result<f64> {
    let m = mu + mean;
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::invalid("mu", format!("need mu + mean > 0, got {m}")));
    }
    Ok(m)
}

/// Large-N mean of `t`: `(1/2V) Σ_p ln(p̂² + μ + M̄)`.
pub fn t0_closed_form(lattice: &LatticeSpec, dispersion: Dispersion, mu: f64, mean: f64) -> Result<f64> {
    let m = check_shifted_mass(mu, mean)?;
    let s = compensated_sum(dispersion.on_grid(lattice).iter().map(|e| (e + m).ln()));
    Ok(s / (2.0 * lattice.volume()))
}

/// A source `J(x) ∈ ℝ^{N×N}` at every site.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    n: usize,
    values: Vec<DMatrix<f64>>,
}

impl SourceField {
    pub fn new(lattice: &LatticeSpec, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != lattice.sites() {
            return Err(Error::invalid("source", "one matrix per site required"));
        }
        let n = values[0].nrows();
        if values.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::invalid("source", "matrices must be N×N"));
        }
        if values.iter().flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("source", "non-finite entry"));
        }
        Ok(Self { n, values })
    }

    pub fn zero(lattice: &LatticeSpec, n: usize) -> Self {
        Self {
            n,
            values: vec![DMatrix::zeros(n, n); lattice.sites()],
        }
    }

    /// Independent standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(lattice: &LatticeSpec, n: usize, rng: &mut R) -> Self {
        let values = (0..lattice.sites())
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.sample(rand_distr::StandardNormal)))
            .collect();
        Self { n, values }
    }

    /// Supported at a single site.
    pub fn single_site(lattice: &LatticeSpec, site: usize, value: DMatrix<f64>) -> Result<Self> {
        let n = value.nrows();
        let mut values = vec![DMatrix::zeros(n, n); lattice.sites()];
        values[site] = value;
        Self::new(lattice, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn hs_norm_sq(&self, x: usize) -> f64 {
        self.values[x].norm_squared()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|m| m * c).collect(),
        }
    }

    /// Column `b` of every site matrix, stacked as a `Λ² N` vector.
    pub fn column(&self, b: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.values.len() * self.n,
            self.values.iter().flat_map(|m| m.column(b).iter().cloned().collect::<Vec<_>>()),
        )
    }
}

/// `Σ_{x,y,a,a′,b} J_{ab}(x) (K⁻¹)_{(x,a),(y,a′)} J_{a′b}(y)`.
///
/// The normalization is fixed by requiring that at `M̂ = 0` it equals
/// `Σ_b J_bᵀ (−∂² + μ)⁻¹ J_b` with the plain lattice propagator.
pub fn j_functional(k: &KOperator, j: &SourceField) -> Result<f64> {
    check_source(k, j)?;
    Ok(k.low_rank()?.source_quadratic(j))
}

/// Dense-solve evaluation of [`j_functional`], for cross-checks.
pub fn j_functional_dense(k: &KOperator, j: &SourceField) -> Result<f64> {
    check_source(k, j)?;
    let chol = Cholesky::new(k.dense()?)?;
    let mut total = 0.0;
    for b in 0..k.n() {
        let col = j.column(b);
        total += col.dot(&chol.solve(&col));
    }
    Ok(total)
}

fn check_source(k: &KOperator, j: &SourceField) -> Result<()> {
    if j.n() != k.n() || j.values.len() != k.lattice.sites() {
        return Err(Error::invalid("source", "source does not match operator shape"));
    }
    Ok(())
}

/// Large-N Haar average `Σ_b J_bᵀ (−∂² + μ + M̄)⁻¹ J_b`.
pub fn averaged_j_prediction(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    mu: f64,
    mean: f64,
    j: &SourceField,
) -> Result<f64> {
    let m = check_shifted_mass(mu, mean)?;
    scalar_source_quadratic(lattice, dispersion, m, j)
}

/// `Σ_{x,y} G_m(x, y) ⟨J(x), J(y)⟩_HS`.
pub(crate) fn scalar_source_quadratic(
    lattice: &LatticeSpec,
    dispersion: Dispersion,
    m: f64,
    j: &SourceField,
) -> Result<f64> {
    if j.values.len() != lattice.sites() {
        return Err(Error::invalid("source", "source does not match lattice"));
    }
    let g = propagator_kernel(lattice, dispersion, m)?;
    let sites = lattice.sites();
    let terms = (0..sites).flat_map(|x| {
        let g = &g;
        let j = &j;
        (0..sites).map(move |y| g.at_index(x, y) * j.values[x].dot(&j.values[y]))
    });
    Ok(compensated_sum(terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzCheck {
    pub ratio: f64,
    pub bound: f64,
    pub distance: f64,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.ratio <= self.bound
    }
}

/// Difference ratio `|j(O) − j(O′)| / Σ_x ‖O(x) − O′(x)‖_HS` against the
/// Lipschitz constant `2 max_x(‖J(x)‖²_HS ‖M̂‖²) / μ²`, with `‖M̂‖` the
/// operator norm.
pub fn lipschitz_ratio(
    dispersion: Dispersion,
    mu: f64,
    j: &SourceField,
    a: &MultiplierField,
    b: &MultiplierField,
) -> Result<LipschitzCheck> {
    if a.spectrum() != b.spectrum() || a.lattice() != b.lattice() {
        return Err(Error::invalid("fields", "fields must share lattice and spectrum"));
    }
    let distance = a.distance(b);
    if distance == 0.0 {
        return Err(Error::invalid("fields", "the two fields coincide"));
    }
    let lattice = *a.lattice();
    let ja = j_functional(&assemble_k(&lattice, dispersion, mu, a)?, j)?;
    let jb = j_functional(&assemble_k(&lattice, dispersion, mu, b)?, j)?;
    let m_norm = a.spectrum().sup_norm();
    let max_j = (0..lattice.sites())
        .map(|x| j.hs_norm_sq(x))
        .fold(0.0, f64::max);
    Ok(LipschitzCheck {
        ratio: (ja - jb).abs() / distance,
        bound: 2.0 * max_j * m_norm * m_norm / (mu * mu),
        distance,
    })
}

/// Large-N variance scaling target
/// `A⁻¹ ≃ (1/N²)(4 \bar{M²} M̄⁴ + (\bar{M²})²) V / Λ⁴`, up to an overall constant.
pub fn variance_prediction(lattice: &LatticeSpec, n: usize, mean: f64, mean_square: f64) -> f64 {
    let nf = n as f64;
    let l4 = (lattice.side() as f64).powi(4);
    (4.0 * mean_square * mean.powi(4) + mean_square * mean_square) * lattice.volume() / (nf * nf * l4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;
    use crate::orthogonal::spectrum_ensemble;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn guard_rejects_non_positive_margin() {
        let l = build_lattice(2, 1.0).unwrap();
        let s = spectrum_ensemble(vec![-2.0, 1.0]).unwrap();
        let f = MultiplierField::identity(l, s);
        match assemble_k(&l, Dispersion::Continuum, 1.5, &f) {
            Err(Error::GuardViolation { margin }) => assert!((margin + 0.5).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decoupled_spectrum_at_zero_multiplier() {
        let l = build_lattice(3, 2.0).unwrap();
        let n = 2;
        let f = MultiplierField::haar(l, SpectrumEnsemble::constant(n, 0.0).unwrap(), &mut rng(1));
        let k = assemble_k(&l, Dispersion::Continuum, 0.7, &f).unwrap();
        let mut expected: Vec<f64> = Dispersion::Continuum
            .on_grid(&l)
            .iter()
            .flat_map(|e| [e + 0.7; 2])
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in k.eigenvalues().unwrap().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn identity_rotations_diagonalize_simultaneously() {
        let l = build_lattice(3, 1.0).unwrap();
        let s = spectrum_ensemble(vec![0.3, 1.1, 2.0]).unwrap();
        let f = MultiplierField::identity(l, s.clone());
        let k = assemble_k(&l, Dispersion::FiniteDifference, 0.5, &f).unwrap();
        let disp = Dispersion::FiniteDifference.on_grid(&l);
        let mut expected: Vec<f64> = disp
            .iter()
            .flat_map(|e| s.values().iter().map(move |m| e + 0.5 + m))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in k.eigenvalues().unwrap().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        let t = t_of_o(&k).unwrap();
        let direct = expected.iter().map(|e| e.ln()).sum::<f64>() / (2.0 * 3.0 * 1.0);
        assert!((t - direct).abs() < 1e-12);
    }

    #[test]
    fn dense_operator_symmetric_positive_definite() {
        let l = build_lattice(2, 1.0).unwrap();
        let s = spectrum_ensemble(vec![-0.5, 2.0]).unwrap();
        let f = MultiplierField::haar(l, s, &mut rng(2));
        let k = assemble_k(&l, Dispersion::Continuum, 1.0, &f).unwrap();
        let d = k.dense().unwrap();
        assert!((&d - d.transpose()).amax() < 1e-12);
        assert!(k.eigenvalues().unwrap()[0] > 0.0);
        // Matrix-free application agrees with the dense matrix.
        let v: Vec<f64> = (0..k.dim()).map(|i| (i as f64).sin()).collect();
        let dv = &d * DVector::from_column_slice(&v);
        for (a, b) in k.apply(&v).iter().zip(dv.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn t_is_field_independent_at_zero_multiplier() {
        let l = build_lattice(4, 2.0).unwrap();
        let s = SpectrumEnsemble::constant(3, 0.0).unwrap();
        let expected = t0_closed_form(&l, Dispersion::Continuum, 0.8, 0.0).unwrap();
        for seed in 0..3 {
            let f = MultiplierField::haar(l, s.clone(), &mut rng(seed));
            let k = assemble_k(&l, Dispersion::Continuum, 0.8, &f).unwrap();
            assert!((t_of_o(&k).unwrap() - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn log_det_routes_agree() {
        let l = build_lattice(3, 1.0).unwrap();
        let s = spectrum_ensemble(vec![0.0, 0.5, 0.5, 2.0, 3.0]).unwrap();
        let f = MultiplierField::haar(l, s, &mut rng(3));
        let k = assemble_k(&l, Dispersion::Continuum, 0.4, &f).unwrap();
        let e = k.log_det(LogDetMethod::Eigen).unwrap();
        let c = k.log_det(LogDetMethod::Cholesky).unwrap();
        let r = k.log_det(LogDetMethod::LowRank).unwrap();
        assert!((e - c).abs() < 1e-9 && (c - r).abs() < 1e-9, "{e} {c} {r}");
        assert_eq!(k.low_rank().unwrap().rank(), 4);
    }

    #[test]
    fn t_monotone_in_mu_with_trace_derivative() {
        let l = build_lattice(3, 1.0).unwrap();
        let s = spectrum_ensemble(vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let f = MultiplierField::haar(l, s, &mut rng(4));
        let t = |mu: f64| t_of_o(&assemble_k(&l, Dispersion::Continuum, mu, &f).unwrap()).unwrap();
        for mu in [0.5, 1.0, 3.0] {
            let k = assemble_k(&l, Dispersion::Continuum, mu, &f).unwrap();
            let inv_trace: f64 = k.eigenvalues().unwrap().iter().map(|e| 1.0 / e).sum();
            let exact = inv_trace / (2.0 * 4.0 * l.volume());
            let h = 1e-4 * mu;
            let fd = (t(mu + h) - t(mu - h)) / (2.0 * h);
            assert!(exact > 0.0);
            assert!((fd / exact - 1.0).abs() < 1e-4, "{fd} vs {exact}");
            assert!(t(mu + 0.1) > t(mu));
        }
    }

    #[test]
    fn t0_consistency_and_limits() {
        let l = build_lattice(8, 1.0).unwrap();
        let s = SpectrumEnsemble::constant(2, 0.0).unwrap();
        let f = MultiplierField::identity(l, s);
        let k = assemble_k(&l, Dispersion::Continuum, 1.3, &f).unwrap();
        let t0 = t0_closed_form(&l, Dispersion::Continuum, 1.3, 0.0).unwrap();
        assert!((t_of_o(&k).unwrap() - t0).abs() < 1e-12);
        let m = 1e9;
        let big = t0_closed_form(&l, Dispersion::Continuum, m, 0.0).unwrap();
        let lead = 64.0 / 2.0 * m.ln();
        assert!((big - lead).abs() < 64.0 * l.cutoff().powi(2) / m);
        assert!(t0_closed_form(&l, Dispersion::Continuum, 1.0, -1.0).is_err());
        // Derivative in mu matches the trace formula.
        for mu in [0.5, 1.0, 2.0] {
            let h = 1e-4;
            let fd = (t0_closed_form(&l, Dispersion::Continuum, mu + h, 0.5).unwrap()
                - t0_closed_form(&l, Dispersion::Continuum, mu - h, 0.5).unwrap())
                / (2.0 * h);
            let exact: f64 = Dispersion::Continuum
                .on_grid(&l)
                .iter()
                .map(|e| 1.0 / (e + mu + 0.5))
                .sum::<f64>()
                / 2.0;
            assert!((fd - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn t0_direct_sum_value() {
        // Oracle: the momentum sum written out over integer indices.
        let l = build_lattice(8, 1.0).unwrap();
        let mut s = 0.0;
        for a in -4i32..4 {
            for b in -4i32..4 {
                let p2 = 4.0 * std::f64::consts::PI.powi(2) * (a * a + b * b) as f64;
                s += (p2 + 1.5).ln();
            }
        }
        let t0 = t0_closed_form(&l, Dispersion::Continuum, 1.0, 0.5).unwrap();
        assert!((t0 - s / 2.0).abs() < 1e-11);
        assert!((t0 - 183.215_573_009_987).abs() < 1e-9, "{t0}");
    }

    #[test]
    fn source_functional_cases() {
        let l = build_lattice(3, 1.0).unwrap();
        let n = 3;
        let f = MultiplierField::haar(l, spectrum_ensemble(vec![0.2, 1.0, 1.7]).unwrap(), &mut rng(5));
        let k = assemble_k(&l, Dispersion::Continuum, 1.0, &f).unwrap();
        assert_eq!(j_functional(&k, &SourceField::zero(&l, n)).unwrap(), 0.0);

        let j = SourceField::random_normal(&l, n, &mut rng(6));
        let a = j_functional(&k, &j).unwrap();
        let b = j_functional_dense(&k, &j).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-10 * a, "{a} vs {b}");

        // Zero multiplier: colour indices decouple onto the scalar propagator.
        let f0 = MultiplierField::haar(l, SpectrumEnsemble::constant(n, 0.0).unwrap(), &mut rng(7));
        let k0 = assemble_k(&l, Dispersion::Continuum, 1.0, &f0).unwrap();
        let prop = crate::lattice::propagator_kernel(&l, Dispersion::Continuum, 1.0).unwrap();
        let mut direct = 0.0;
        for b in 0..n {
            for x in 0..9 {
                for y in 0..9 {
                    for a in 0..n {
                        direct += j.values()[x][(a, b)] * prop.at_index(x, y) * j.values()[y][(a, b)];
                    }
                }
            }
        }
        let v = j_functional(&k0, &j).unwrap();
        assert!((v - direct).abs() < 1e-8 * direct);
        let avg = averaged_j_prediction(&l, Dispersion::Continuum, 1.0, 0.0, &j).unwrap();
        assert!((avg - v).abs() < 1e-10 * v);
    }

    #[test]
    fn single_site_source_dense_oracle() {
        let l = build_lattice(2, 1.0).unwrap();
        let f = MultiplierField::haar(l, spectrum_ensemble(vec![0.0, 1.0]).unwrap(), &mut rng(8));
        let k = assemble_k(&l, Dispersion::Continuum, 1.0, &f).unwrap();
        let jm = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 2.0]);
        let j = SourceField::single_site(&l, 1, jm.clone()).unwrap();
        let kinv = k.dense().unwrap().try_inverse().unwrap();
        let mut oracle = 0.0;
        for b in 0..2 {
            for a in 0..2 {
                for a2 in 0..2 {
                    oracle += jm[(a, b)] * kinv[(2 + a, 2 + a2)] * jm[(a2, b)];
                }
            }
        }
        assert!((j_functional(&k, &j).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn averaged_prediction_large_mass_limit() {
        let l = build_lattice(4, 1.0).unwrap();
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 0.6;
        m[(2, 2)] = 0.8;
        let j = SourceField::single_site(&l, 5, m).unwrap();
        assert!((j.hs_norm_sq(5) - 1.0).abs() < 1e-15);
        let mass = 1e7;
        let v = averaged_j_prediction(&l, Dispersion::Continuum, mass - 0.5, 0.5, &j).unwrap();
        assert!((v * mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lipschitz_degenerate_cases() {
        let l = build_lattice(2, 1.0).unwrap();
        let n = 3;
        let j = SourceField::random_normal(&l, n, &mut rng(9));
        let zero = SpectrumEnsemble::constant(n, 0.0).unwrap();
        let a = MultiplierField::haar(l, zero.clone(), &mut rng(10));
        let b = MultiplierField::haar(l, zero, &mut rng(11));
        let c = lipschitz_ratio(Dispersion::Continuum, 1.0, &j, &a, &b).unwrap();
        assert!(c.ratio < 1e-12);
        assert!(lipschitz_ratio(Dispersion::Continuum, 1.0, &j, &a, &a).is_err());
    }

    #[test]
    fn lipschitz_tiny_perturbation() {
        let l = build_lattice(2, 1.0).unwrap();
        let s = spectrum_ensemble(vec![0.0, 1.0, 0.5]).unwrap();
        let a = MultiplierField::haar(l, s, &mut rng(12));
        let theta: f64 = 1e-14;
        let b = a
            .map_rotations(|x, o| {
                let mut g = DMatrix::identity(3, 3);
                if x == 0 {
                    g[(0, 0)] = theta.cos();
                    g[(1, 1)] = theta.cos();
                    g[(0, 1)] = -theta.sin();
                    g[(1, 0)] = theta.sin();
                }
                g * o.matrix()
            })
            .unwrap();
        let j = SourceField::random_normal(&l, 3, &mut rng(13));
        let c = lipschitz_ratio(Dispersion::Continuum, 1.0, &j, &a, &b).unwrap();
        assert!(c.ratio.is_finite());
        assert!(c.holds(), "{c:?}");
    }

    #[test]
    fn gauge_covariance() {
        let l = build_lattice(3, 1.0).unwrap();
        // Equal entries: M̂ = cI commutes with every rotation, t is unchanged.
        let s = SpectrumEnsemble::constant(4, 0.7).unwrap();
        let f = MultiplierField::haar(l, s, &mut rng(14));
        let p = DMatrix::from_fn(4, 4, |i, j| if (i + 1) % 4 == j { 1.0 } else { 0.0 });
        let g = f.map_rotations(|_, o| &p * o.matrix()).unwrap();
        let t = |fld: &MultiplierField| {
            t_of_o(&assemble_k(&l, Dispersion::Continuum, 1.0, fld).unwrap()).unwrap()
        };
        assert!((t(&f) - t(&g)).abs() < 1e-10);

        // Generic spectrum: t depends only on Oᵀ M̂ O. A left permutation that
        // preserves M̂ leaves t fixed, and so does a site-independent right
        // multiplication, which conjugates K by I ⊗ S. A generic left
        // multiplication changes it.
        let s = spectrum_ensemble(vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let f = MultiplierField::haar(l, s, &mut rng(15));
        let swap = DMatrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0,
        ]);
        let g = f.map_rotations(|_, o| &swap * o.matrix()).unwrap();
        assert!((t(&f) - t(&g)).abs() < 1e-10);
        let r = sample_haar(4, &mut rng(16));
        let right = f.map_rotations(|_, o| o.matrix() * r.matrix()).unwrap();
        assert!((t(&f) - t(&right)).abs() < 1e-10);
        let h = f.map_rotations(|_, o| r.matrix() * o.matrix()).unwrap();
        assert!((t(&f) - t(&h)).abs() > 1e-8);
    }

    #[test]
    fn variance_prediction_scaling() {
        let l = build_lattice(8, 1.0).unwrap();
        assert_eq!(variance_prediction(&l, 16, 0.0, 0.0), 0.0);
        let a = variance_prediction(&l, 16, 0.5, 0.5);
        assert!((variance_prediction(&l, 32, 0.5, 0.5) * 4.0 - a).abs() < 1e-15 * a.max(1.0));
        let l2 = build_lattice(16, 1.0).unwrap();
        assert!((variance_prediction(&l2, 16, 0.5, 0.5) * 16.0 - a).abs() < 1e-15);
    }
}
