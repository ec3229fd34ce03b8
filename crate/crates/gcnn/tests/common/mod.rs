#![allow(dead_code)]

//! Independent oracles for integration tests. Everything here is written
//! against the definitions directly and shares no code with the library's
//! implementation paths.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3};

/// Brute-force cyclic Jacobi eigenvalue iteration for symmetric matrices.
/// Returns the eigenvalues sorted ascending.
pub fn jacobi_eigenvalues(matrix: &Array2<f64>) -> Vec<f64> {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Ascending analytic spectrum of the `rows`×`cols` grid graph: the grid is
/// the Cartesian product of two paths, so every eigenvalue is a sum of path
/// eigenvalues `2 − 2cos(kπ/n)`.
pub fn grid_spectrum_analytic(rows: usize, cols: usize) -> Vec<f64> {
    let path = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect()
    };
    let pr = path(rows);
    let pc = path(cols);
    let mut out = Vec::with_capacity(rows * cols);
    for a in &pr {
        for b in &pc {
            out.push(a + b);
        }
    }
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Natural cubic spline evaluation in the classic second-derivative
/// formulation: forward elimination with an auxiliary `u` array, then back
/// substitution, then piecewise evaluation by segment search.
pub fn natural_spline_oracle(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    assert!(n >= 2);
    let mut y2 = vec![0.0; n];
    let mut u = vec![0.0; n - 1];
    for i in 1..n - 1 {
        let sig = (knots[i] - knots[i - 1]) / (knots[i + 1] - knots[i - 1]);
        let p = sig * y2[i - 1] + 2.0;
        y2[i] = (sig - 1.0) / p;
        let rhs = (values[i + 1] - values[i]) / (knots[i + 1] - knots[i])
            - (values[i] - values[i - 1]) / (knots[i] - knots[i - 1]);
        u[i] = (6.0 * rhs / (knots[i + 1] - knots[i - 1]) - sig * u[i - 1]) / p;
    }
    y2[n - 1] = 0.0;
    for k in (0..n - 1).rev() {
        y2[k] = y2[k] * y2[k + 1] + u[k];
    }

    let mut klo = 0;
    let mut khi = n - 1;
    while khi - klo > 1 {
        let k = (khi + klo) / 2;
        if knots[k] > x {
            khi = k;
        } else {
            klo = k;
        }
    }
    let h = knots[khi] - knots[klo];
    let a = (knots[khi] - x) / h;
    let b = (x - knots[klo]) / h;
    a * values[klo]
        + b * values[khi]
        + ((a * a * a - a) * y2[klo] + (b * b * b - b) * y2[khi]) * (h * h) / 6.0
}

/// Scalar-loop evaluation of the multi-channel spectral convolution, written
/// directly from the definition with no matrix products.
pub fn conv_forward_loops(
    u: &Array2<f64>,
    f: &ArrayView3<f64>,
    k: &ArrayView3<f64>,
    bias: &ArrayView1<f64>,
) -> Array3<f64> {
    let (samples, in_ch, n) = f.dim();
    let out_ch = k.dim().1;
    let mut y = Array3::zeros((samples, out_ch, n));
    for s in 0..samples {
        for o in 0..out_ch {
            // Spectral accumulator: sum_i (U^T f_{s,i}) ⊙ k_{i,o}.
            let mut z = Array1::<f64>::zeros(n);
            for i in 0..in_ch {
                for bin in 0..n {
                    let mut coeff = 0.0;
                    for v in 0..n {
                        coeff += u[[v, bin]] * f[[s, i, v]];
                    }
                    z[bin] += coeff * k[[i, o, bin]];
                }
            }
            for v in 0..n {
                let mut val = 0.0;
                for bin in 0..n {
                    val += u[[v, bin]] * z[bin];
                }
                y[[s, o, v]] = val + bias[o];
            }
        }
    }
    y
}
