//! Shared fixtures for the criterion benchmarks.

use flowforge_core::pipeline::{build_network, chunk_hamiltonian};
use flowforge_core::{BuildConfig, CouplingNetwork, GaussianDensity, MultiIndex, Polynomial};
use nalgebra::{DMatrix, DVector};

/// Phase-space Gaussian with correlated position and velocity, `d = 1`.
pub fn skewed_gaussian() -> GaussianDensity {
    GaussianDensity::new(
        DVector::from_vec(vec![0.3, -0.1]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.9]),
    )
    .expect("positive definite")
}

/// Quadratic chunk Hamiltonian of [`skewed_gaussian`].
pub fn quadratic_hamiltonian() -> Polynomial {
    chunk_hamiltonian(&skewed_gaussian()).expect("valid density")
}

/// Dense polynomial of total degree `degree` in `2d` variables with fixed coefficients.
pub fn dense_hamiltonian(d: usize, degree: u32) -> Polynomial {
    let terms = MultiIndex::all_up_to_degree(2 * d, degree)
        .into_iter()
        .filter(|i| i.degree() >= 1)
        .enumerate()
        .map(|(k, i)| (i, ((k as f64) * 0.7).sin()))
        .collect::<Vec<_>>();
    Polynomial::from_terms(2 * d, terms)
}

/// `d = 1`, `Σ_x = ½`, `γ = 1` build with a short horizon.
pub fn small_config(tau: f64) -> BuildConfig {
    let mut cfg = BuildConfig::new(DMatrix::from_element(1, 1, 0.5), 1.0, 0.1, tau);
    cfg.phi = Some(1.0);
    cfg.w1_samples = 0;
    cfg.probe_grid = 5;
    cfg
}

pub fn small_network() -> CouplingNetwork {
    build_network(&small_config(0.25)).expect("build succeeds").0
}

/// Deterministic lattice of `n` points in `[-2, 2]²`.
pub fn latent_points(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            vec![4.0 * t - 2.0, 2.0 * (17.0 * t).sin()]
        })
        .collect()
}
