//! End-to-end network checks: a straight-line forward oracle and full
//! finite-difference gradient coverage for small networks.

use std::cell::RefCell;

use gcnn::graph::build_grid_graph;
use gcnn::net::{Network, NetworkConfig};
use gcnn::verify::{finite_difference_grad, percent_error};
use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// `C1 F` on the 3-path with the identity interpolator (M = N = 3) admits a
/// fully hand-written forward pass via the analytic eigenbasis
/// u0 = (1,1,1)/√3, u1 = (1,0,−1)/√2, u2 = (−1,2,−1)/√6.
#[test]
fn tiny_network_matches_straight_line_oracle() {
    let g = build_grid_graph(1, 3).unwrap();
    let cfg = NetworkConfig {
        architecture: "C1 F".to_string(),
        tracked_weights: 3,
        epochs: 1,
        seed: 0,
        ..NetworkConfig::default()
    };
    let mut net = Network::build(&cfg, &g).unwrap();

    let k = [0.5, -1.0, 2.0];
    let conv_bias = 0.25;
    net.params_mut().convs[0]
        .k_hat
        .as_slice_mut()
        .unwrap()
        .copy_from_slice(&k);
    net.params_mut().convs[0].bias[0] = conv_bias;
    // fc weight[d][c] = 0.1·(d+1) − 0.05·c, bias[c] = 0.01·c
    for d in 0..3 {
        for c in 0..10 {
            net.params_mut().fc[0].0[[d, c]] = 0.1 * (d as f64 + 1.0) - 0.05 * c as f64;
        }
    }
    for c in 0..10 {
        net.params_mut().fc[0].1[c] = 0.01 * c as f64;
    }

    let f = [0.3, -0.7, 1.1];
    let label = 4u8;

    // Straight-line reference computation.
    let s3 = 3.0_f64.sqrt();
    let s2 = 2.0_f64.sqrt();
    let s6 = 6.0_f64.sqrt();
    let u = [
        [1.0 / s3, 1.0 / s2, -1.0 / s6],
        [1.0 / s3, 0.0, 2.0 / s6],
        [1.0 / s3, -1.0 / s2, -1.0 / s6],
    ];
    let mut f_hat = [0.0; 3];
    for bin in 0..3 {
        for v in 0..3 {
            f_hat[bin] += u[v][bin] * f[v];
        }
    }
    let z = [f_hat[0] * k[0], f_hat[1] * k[1], f_hat[2] * k[2]];
    let mut y = [0.0; 3];
    for v in 0..3 {
        for bin in 0..3 {
            y[v] += u[v][bin] * z[bin];
        }
        y[v] += conv_bias;
    }
    let mut logits = [0.0; 10];
    for c in 0..10 {
        for (d, yv) in y.iter().enumerate() {
            logits[c] += yv * (0.1 * (d as f64 + 1.0) - 0.05 * c as f64);
        }
        logits[c] += 0.01 * c as f64;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let expected_loss = -((logits[label as usize] - max).exp() / sum).ln();
    let expected_probs: Vec<f64> = logits.iter().map(|l| (l - max).exp() / sum).collect();

    let input = Array3::from_shape_vec((1, 1, 3), f.to_vec()).unwrap();
    let (loss, probs, _) = net.forward(&input.view(), &[label]).unwrap();
    assert!((loss - expected_loss).abs() < 1e-10, "{loss} vs {expected_loss}");
    for (got, want) in probs.iter().zip(&expected_probs) {
        assert!((got - want).abs() < 1e-10);
    }
}

/// Finite-difference check of every parameter gradient and the input
/// gradient for a compiled network.
fn check_network_gradients(cfg: &NetworkConfig, rows: usize, cols: usize, tol: f64) {
    let g = build_grid_graph(rows, cols).unwrap();
    let net = Network::build(cfg, &g).unwrap();
    let n = g.n();
    let samples = 3usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let images = Array2::from_shape_fn((samples, n), |_| rng.random::<f64>());
    let labels: Vec<u8> = (0..samples).map(|_| rng.random_range(0..10)).collect();
    let input = images
        .clone()
        .into_shape_with_order((samples, 1, n))
        .unwrap();

    let (_, _, state) = net.forward(&input.view(), &labels).unwrap();
    let grads = net.backward(&state, true).unwrap();
    let analytic = Network::grad_slices(&grads);

    let cell = RefCell::new(net);
    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    for (name, analytic_flat) in names.iter().zip(analytic.iter().map(|(_, g)| g)) {
        let base: Vec<f64> = {
            let mut net = cell.borrow_mut();
            let mut slices = net.param_slices_mut();
            let (_, slice) = slices
                .iter_mut()
                .find(|(n, _)| n == name)
                .expect("parameter exists");
            slice.to_vec()
        };
        let numeric = finite_difference_grad(
            |x| {
                let mut net = cell.borrow_mut();
                {
                    let mut slices = net.param_slices_mut();
                    let (_, slice) = slices.iter_mut().find(|(n, _)| n == name).unwrap();
                    slice.copy_from_slice(x);
                }
                let (loss, _, _) = net.forward(&input.view(), &labels)?;
                Ok(loss)
            },
            &base,
            1e-6,
        )
        .unwrap();
        {
            let mut net = cell.borrow_mut();
            let mut slices = net.param_slices_mut();
            let (_, slice) = slices.iter_mut().find(|(n, _)| n == name).unwrap();
            slice.copy_from_slice(&base);
        }
        let rel = percent_error(analytic_flat, &numeric) / 100.0;
        assert!(rel < tol, "{name}: relative error {rel}");
    }

    // Input gradient.
    let analytic_input: Vec<f64> = grads.input.as_ref().unwrap().iter().cloned().collect();
    let flat: Vec<f64> = input.iter().cloned().collect();
    let numeric = finite_difference_grad(
        |x| {
            let ix = Array3::from_shape_vec((samples, 1, n), x.to_vec()).unwrap();
            let net = cell.borrow();
            let (loss, _, _) = net.forward(&ix.view(), &labels)?;
            Ok(loss)
        },
        &flat,
        1e-6,
    )
    .unwrap();
    let rel = percent_error(&analytic_input, &numeric) / 100.0;
    assert!(rel < tol, "input: relative error {rel}");
}

#[test]
fn small_network_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        architecture: "C2 P C3 R F".to_string(),
        tracked_weights: 4,
        epochs: 1,
        seed: 6,
        ..NetworkConfig::default()
    };
    check_network_gradients(&cfg, 4, 4, 1e-5);
}

#[test]
fn relu_after_conv_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        architecture: "C2 P C2 R F".to_string(),
        tracked_weights: 4,
        epochs: 1,
        seed: 7,
        relu_after_conv: true,
        ..NetworkConfig::default()
    };
    check_network_gradients(&cfg, 4, 4, 1e-5);
}

#[test]
fn hidden_fc_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        architecture: "C2 P R F".to_string(),
        tracked_weights: 4,
        epochs: 1,
        seed: 8,
        fc_hidden: Some(7),
        ..NetworkConfig::default()
    };
    check_network_gradients(&cfg, 4, 4, 1e-5);
}

#[test]
fn value_knot_domain_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        architecture: "C2 P R F".to_string(),
        tracked_weights: 4,
        epochs: 1,
        seed: 9,
        knot_domain: gcnn::net::KnotDomain::Value,
        ..NetworkConfig::default()
    };
    check_network_gradients(&cfg, 4, 4, 1e-5);
}
