//! Cross-checks of the eigensolver against analytic spectra and an
//! independent brute-force Jacobi iteration.

mod common;

use gcnn::graph::{build_grid_graph, laplacian, Graph};
use gcnn::spectral::eigendecompose;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn grid_28x28_spectrum_matches_analytic_formula() {
    let g = build_grid_graph(28, 28).unwrap();
    let basis = eigendecompose(&laplacian(&g)).unwrap();
    let expected = common::grid_spectrum_analytic(28, 28);
    let mut worst: f64 = 0.0;
    for (got, want) in basis.lambda().iter().zip(&expected) {
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-8, "max eigenvalue deviation {worst}");

    // Largest eigenvalue of the square grid: 8 sin^2(27π/56).
    let lambda_max = 8.0 * (27.0 * std::f64::consts::PI / 56.0).sin().powi(2);
    let got = basis.lambda()[783];
    assert!((got - lambda_max).abs() < 1e-8, "{got} vs {lambda_max}");
}

#[test]
fn path_graphs_match_cosine_formula() {
    for n in [2usize, 3, 5, 8, 13] {
        let g = build_grid_graph(1, n).unwrap();
        let basis = eigendecompose(&laplacian(&g)).unwrap();
        for (k, got) in basis.lambda().iter().enumerate() {
            let want = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos();
            assert!((got - want).abs() < 1e-10, "n = {n}, k = {k}");
        }
    }
}

#[test]
fn jacobi_oracle_agrees_on_grid_and_random_graphs() {
    let g = build_grid_graph(5, 5).unwrap();
    let l = laplacian(&g);
    let basis = eigendecompose(&l).unwrap();
    let oracle = common::jacobi_eigenvalues(l.matrix());
    for (got, want) in basis.lambda().iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let n = rng.random_range(5..25);
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.5 {
                    let weight = rng.random::<f64>() * 2.0;
                    w[[i, j]] = weight;
                    w[[j, i]] = weight;
                }
            }
        }
        let l = laplacian(&Graph::from_adjacency(w).unwrap());
        let basis = eigendecompose(&l).unwrap();
        let oracle = common::jacobi_eigenvalues(l.matrix());
        for (got, want) in basis.lambda().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}
