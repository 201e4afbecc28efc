//! Shared fixtures for the benchmarks.

use pcm_core::lattice::build_lattice;
use pcm_core::rng::stream;
use pcm_core::spectral::assemble_k;
use pcm_core::{Dispersion, KOperator, MultiplierField, SpectrumEnsemble};

/// `K` for an independent Haar field with spectrum `{0, 1}` at `μ = 1`.
pub fn haar_operator(side: usize, n: usize, seed: u64) -> KOperator {
    let lattice = build_lattice(side, 1.0).expect("valid lattice");
    let spectrum = SpectrumEnsemble::two_point(n, 0.0, 1.0).expect("even n");
    let field = MultiplierField::haar(lattice, spectrum, &mut stream(seed, 0, 0));
    assemble_k(&lattice, Dispersion::Continuum, 1.0, &field).expect("guard holds")
}
