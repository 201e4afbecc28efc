//! Haar sampling on O(N), leading-order Weingarten moments, pair partitions
//! and empirical eigenvalue spectra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthogonality tolerance `‖OᵀO − I‖_max`.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// An element of O(N).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix(DMatrix<f64>);

impl OrthogonalMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("matrix", "orthogonal matrix must be square"));
        }
        let o = Self(m);
        let defect = o.orthogonality_defect();
        if defect >= ORTHOGONALITY_TOL {
            return Err(Error::invalid(
                "matrix",
                format!("not orthogonal: max |OᵀO − I| = {defect:e}"),
            ));
        }
        Ok(o)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.dim();
        (self.0.transpose() * &self.0 - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// `Oᵀ diag(values) O`.
    pub fn conjugate_diagonal(&self, values: &[f64]) -> DMatrix<f64> {
        let d = DVector::from_column_slice(values);
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| d[i] * self.0[(i, j)]);
        self.0.transpose() * scaled
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill, so the first k columns consume the same draws as an
    // N×k matrix would.
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Draw from the normalized Haar measure on O(N): QR of a Gaussian matrix with
/// the signs of `R`'s diagonal moved into `Q`.
pub fn sample_haar<R: Rng + ?Sized>(n: usize, rng: &mut R) -> OrthogonalMatrix {
    assert!(n >= 1, "dimension must be positive");
    let qr = gaussian_matrix(n, n, rng).qr();
    let r_diag = qr.r().diagonal();
    let mut q = qr.q();
    for (j, &r) in r_diag.iter().enumerate() {
        if r < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    OrthogonalMatrix(q)
}

/// The first `k` columns of a Haar-distributed O(N) element (a uniform point
/// on the Stiefel manifold), by Gram–Schmidt on `k` Gaussian columns. Costs
/// `O(N k²)` instead of `O(N³)`.
pub fn sample_haar_columns<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(k <= n && n >= 1);
    let mut g = gaussian_matrix(n, k, rng);
    for j in 0..k {
        // Two passes of modified Gram–Schmidt keep the columns orthogonal to
        // working precision.
        for _ in 0..2 {
            for i in 0..j {
                let proj = g.column(i).dot(&g.column(j));
                let ci = g.column(i).clone_owned();
                g.column_mut(j).axpy(-proj, &ci, 1.0);
            }
        }
        let norm = g.column(j).norm();
        g.column_mut(j).scale_mut(1.0 / norm);
    }
    g
}

/// A perfect matching of `{0, …, 2k−1}` (displayed 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairPartition {
    pairs: Vec<(usize, usize)>,
}

impl PairPartition {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

impl std::fmt::Display for PairPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .pairs
            .iter()
            .map(|(a, b)| format!("({},{})", a + 1, b + 1))
            .collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

pub const MAX_PARTITION_SIZE: usize = 12;

/// All `(2k−1)!!` pair partitions of `two_k` points. The first free point is
/// always matched with each later free point in increasing order, which fixes a
/// canonical ordering.
pub fn enumerate_pair_partitions(two_k: usize) -> Result<Vec<PairPartition>> {
    if two_k == 0 || !two_k.is_multiple_of(2) {
        return Err(Error::invalid("two_k", format!("must be even and positive, got {two_k}")));
    }
    if two_k > MAX_PARTITION_SIZE {
        return Err(Error::invalid(
            "two_k",
            format!("at most {MAX_PARTITION_SIZE} points, got {two_k}"),
        ));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(two_k / 2);
    let free: Vec<usize> = (0..two_k).collect();
    fn rec(free: &[usize], current: &mut Vec<(usize, usize)>, out: &mut Vec<PairPartition>) {
        if free.is_empty() {
            out.push(PairPartition {
                pairs: current.clone(),
            });
            return;
        }
        let first = free[0];
        for idx in 1..free.len() {
            current.push((first, free[idx]));
            let rest: Vec<usize> = free[1..]
                .iter()
                .enumerate()
                .filter(|&(i, _)| i + 1 != idx)
                .map(|(_, &v)| v)
                .collect();
            rec(&rest, current, out);
            current.pop();
        }
    }
    rec(&free, &mut current, &mut out);
    Ok(out)
}

/// Indices of a monomial `O_{a₁b₁} ⋯ O_{a_d b_d}`, 1-based as in the usual
/// matrix notation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentSpec {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl MomentSpec {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.len() != cols.len() {
            return Err(Error::invalid("cols", "row and column index lists differ in length"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("rows", "empty monomial"));
        }
        if rows.iter().chain(&cols).any(|&i| i == 0) {
            return Err(Error::invalid("rows", "indices are 1-based"));
        }
        Ok(Self { rows, cols })
    }

    /// Build from interleaved pairs `[(a₁, b₁), (a₂, b₂), …]`.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn degree(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.rows.iter().chain(&self.cols).any(|&i| i > n) {
            return Err(Error::invalid("spec", format!("index exceeds N = {n}")));
        }
        Ok(())
    }

    /// Evaluate the monomial on a matrix whose columns cover every column
    /// index in the spec.
    fn eval(&self, m: &DMatrix<f64>) -> f64 {
        self.rows
            .iter()
            .zip(&self.cols)
            .map(|(&a, &b)| m[(a - 1, b - 1)])
            .product()
    }
}

/// Leading large-N Haar moment:
/// `N^{-k} Σ_{pairings} Π δ_{a_α a_β} δ_{b_α b_β}`. Exact for `k = 1`.
/// Odd-degree monomials integrate to zero.
pub fn leading_moment(n: usize, spec: &MomentSpec) -> Result<f64> {
    spec.check_dim(n)?;
    let d = spec.degree();
    if d % 2 == 1 {
        return Ok(0.0);
    }
    let k = d / 2;
    let matches = enumerate_pair_partitions(d)?
        .iter()
        .filter(|p| {
            p.pairs()
                .iter()
                .all(|&(i, j)| spec.rows[i] == spec.rows[j] && spec.cols[i] == spec.cols[j])
        })
        .count();
    Ok(matches as f64 / (n as f64).powi(k as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `∫ dO O_{a₁b₁} ⋯ O_{a_d b_d}` over Haar draws.
pub fn mc_moment<R: Rng + ?Sized>(
    n: usize,
    spec: &MomentSpec,
    samples: usize,
    rng: &mut R,
) -> Result<MomentEstimate> {
    spec.check_dim(n)?;
    if samples < 100 {
        return Err(Error::invalid("samples", format!("need at least 100, got {samples}")));
    }
    let k = *spec.cols.iter().max().expect("non-empty spec");
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..samples {
        let cols = sample_haar_columns(n, k, rng);
        let v = spec.eval(&cols);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(MomentEstimate {
        estimate: mean,
        stderr: (var / samples as f64).sqrt(),
        samples,
    })
}

/// Eigenvalue vector `M̂` with its empirical density `ρ = (1/N) Σ_a δ(· − M̂_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEnsemble {
    values: Vec<f64>,
}

impl SpectrumEnsemble {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("spectrum", "empty eigenvalue list"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrum", "non-finite eigenvalue"));
        }
        Ok(Self { values })
    }

    /// Equal-weight two-point spectrum: first half `m1`, second half `m2`.
    pub fn two_point(n: usize, m1: f64, m2: f64) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::invalid("n", format!("two-point spectrum needs even N, got {n}")));
        }
        let mut v = vec![m1; n / 2];
        v.extend(std::iter::repeat_n(m2, n / 2));
        Self::new(v)
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `M̄ = ∫ ρ(M) M dM`.
    pub fn mean(&self) -> f64 {
        self.integrate(|m| m)
    }

    /// `\bar{M²} = ∫ ρ(M) M² dM`.
    pub fn mean_square(&self) -> f64 {
        self.integrate(|m| m * m)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Operator norm `max_a |M̂_a|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `∫ ρ(M) f(M) dM`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        crate::numeric::compensated_sum(self.values.iter().map(|&v| f(v))) / self.len() as f64
    }

    /// Atoms of the empirical density as `(location, weight)`.
    pub fn density(&self) -> Vec<(f64, f64)> {
        let w = 1.0 / self.len() as f64;
        self.values.iter().map(|&v| (v, w)).collect()
    }

    /// The same spectrum shifted by a constant.
    pub fn shifted(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + s).collect(),
        }
    }
}

/// `spectrum_ensemble(values)`.
pub fn spectrum_ensemble(values: Vec<f64>) -> Result<SpectrumEnsemble> {
    SpectrumEnsemble::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_samples_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [1, 2, 5, 16, 64] {
            let o = sample_haar(n, &mut rng);
            assert!(o.orthogonality_defect() < ORTHOGONALITY_TOL);
        }
        let c = sample_haar_columns(20, 3, &mut rng);
        assert!((c.transpose() * &c - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn one_dimensional_group_is_plus_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let plus = (0..draws)
            .filter(|_| {
                let o = sample_haar(1, &mut rng);
                assert!((o.matrix()[(0, 0)].abs() - 1.0).abs() < 1e-15);
                o.matrix()[(0, 0)] > 0.0
            })
            .count();
        let se = (draws as f64 * 0.25).sqrt();
        assert!((plus as f64 - draws as f64 / 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn rejects_non_orthogonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(OrthogonalMatrix::new(m).is_err());
    }

    #[test]
    fn partition_counts() {
        assert_eq!(enumerate_pair_partitions(2).unwrap().len(), 1);
        assert_eq!(enumerate_pair_partitions(4).unwrap().len(), 3);
        assert_eq!(enumerate_pair_partitions(6).unwrap().len(), 15);
        let mut double_factorial = 1;
        for k in 1..=6 {
            double_factorial *= 2 * k - 1;
            let parts = enumerate_pair_partitions(2 * k).unwrap();
            assert_eq!(parts.len(), double_factorial);
            let mut uniq = parts.clone();
            uniq.sort_by_key(|p| p.pairs().to_vec());
            uniq.dedup();
            assert_eq!(uniq.len(), parts.len());
            for p in &parts {
                let mut seen: Vec<usize> = p.pairs().iter().flat_map(|&(a, b)| [a, b]).collect();
                seen.sort();
                assert_eq!(seen, (0..2 * k).collect::<Vec<_>>());
            }
        }
        assert_eq!(enumerate_pair_partitions(2).unwrap()[0].to_string(), "{(1,2)}");
        assert!(enumerate_pair_partitions(3).is_err());
        assert!(enumerate_pair_partitions(14).is_err());
    }

    #[test]
    fn leading_moment_examples() {
        let s = MomentSpec::from_pairs(&[(1, 2), (1, 2)]).unwrap();
        assert!((leading_moment(3, &s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let s = MomentSpec::from_pairs(&[(1, 2), (3, 4)]).unwrap();
        for n in [4, 7, 20] {
            assert_eq!(leading_moment(n, &s).unwrap(), 0.0);
        }
        let s = MomentSpec::from_pairs(&[(1, 1); 4]).unwrap();
        assert!((leading_moment(4, &s).unwrap() - 3.0 / 16.0).abs() < 1e-15);
        let s = MomentSpec::from_pairs(&[(1, 1); 3]).unwrap();
        assert_eq!(leading_moment(4, &s).unwrap(), 0.0);
    }

    #[test]
    fn spectrum_moments() {
        let s = spectrum_ensemble(vec![2.5; 7]).unwrap();
        assert_eq!(s.mean(), 2.5);
        assert_eq!(s.mean_square(), 6.25);
        let s = spectrum_ensemble(vec![-1.0, 1.0]).unwrap();
        assert_eq!((s.mean(), s.mean_square()), (0.0, 1.0));
        assert!((s.density().iter().map(|a| a.1).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(spectrum_ensemble(vec![]).unwrap_err().is_validation());
    }

    #[test]
    fn uniform_spectrum_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let s = spectrum_ensemble(v.clone()).unwrap();
        let direct = v.iter().sum::<f64>() / 100.0;
        assert!((s.mean() - direct).abs() < 1e-14);
        let stderr = (1.0 / 12.0f64 / 100.0).sqrt();
        assert!((s.mean() - 0.5).abs() < 4.0 * stderr);
        assert!(s.mean_square() >= s.mean() * s.mean());
    }
}
