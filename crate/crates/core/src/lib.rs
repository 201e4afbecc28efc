//! Numerical laboratory for the large-N O(N) principal chiral model on a
//! two-dimensional periodic lattice.
//!
//! - [`lattice`]: geometry, momentum grids, Fourier conventions, propagators.
//! - [`orthogonal`]: Haar sampling on O(N), leading Weingarten moments, spectra.
//! - [`spectral`]: the operator `K`, the functional `t(O)` and the source functional.
//! - [`concentration`]: Haar Monte Carlo of `t(O)` and its moments.
//! - [`gap`]: the lattice gap equation and the stationarity system.
//! - [`chiral_mc`]: Metropolis simulation and correlator analysis.
//! - [`contour`]: check of the contour-rotation identity.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chiral_mc;
pub mod concentration;
pub mod contour;
pub mod error;
pub mod gap;
pub mod lattice;
pub mod linalg;
pub mod numeric;
pub mod orthogonal;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use chiral_mc::{CorrelatorEstimate, EffectiveMass, Ensemble, FieldConfig, McParams};
pub use concentration::{EmpiricalMoments, GaussianityReport, MeanGap, SamplingPoint, ScalingAxis, ScalingFit};
pub use contour::{CatalogFunction, ContourTestCase, RotationCheck};
pub use error::{Error, Result};
pub use gap::{GapSolution, StationarityState};
pub use lattice::{Dispersion, LatticeSpec, MomentumGrid};
pub use orthogonal::{MomentSpec, OrthogonalMatrix, PairPartition, SpectrumEnsemble};
pub use spectral::{KOperator, MultiplierField, SourceField};
