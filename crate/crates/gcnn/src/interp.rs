//! Natural cubic-spline interpolation of tracked filter weights.
//!
//! A spectral filter is parameterized by `m` tracked weights at knot
//! positions; the interpolator matrix `phi` (n×m) maps them to a smooth
//! multiplier over all `n` spectral bins. `phi`'s columns are the cardinal
//! basis: column `j` is the natural cubic spline through the unit data
//! `e_j`, evaluated at the query points. Rows therefore sum to 1 (constant
//! tracked weights give a constant filter).

use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Interpolator {
    phi: Array2<f64>,
    knots: Vec<f64>,
}

impl Interpolator {
    /// Tracked-weight count (columns of phi).
    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    /// Spectral bin count (rows of phi).
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// Second derivatives of the natural cubic spline through `(knots, values)`.
fn natural_spline_second_derivatives(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let m = knots.len();
    let mut y2 = vec![0.0; m];
    if m < 3 {
        return y2;
    }
    // Thomas solve of the tridiagonal system; natural ends stay zero.
    let mut diag = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for i in 1..m - 1 {
        let h_prev = knots[i] - knots[i - 1];
        let h_next = knots[i + 1] - knots[i];
        diag[i] = (h_prev + h_next) / 3.0;
        upper[i] = h_next / 6.0;
        rhs[i] = (values[i + 1] - values[i]) / h_next - (values[i] - values[i - 1]) / h_prev;
    }
    for i in 2..m - 1 {
        let h_prev = knots[i] - knots[i - 1];
        let lower = h_prev / 6.0;
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (1..m - 1).rev() {
        y2[i] = (rhs[i] - upper[i] * y2[i + 1]) / diag[i];
    }
    y2
}

/// Evaluates the natural cubic spline at `x` given knot data and the
/// precomputed second derivatives.
fn spline_eval(knots: &[f64], values: &[f64], y2: &[f64], x: f64) -> f64 {
    let m = knots.len();
    let mut lo = 0;
    let mut hi = m - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if knots[mid] > x {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let h = knots[hi] - knots[lo];
    let a = (knots[hi] - x) / h;
    let b = (x - knots[lo]) / h;
    a * values[lo]
        + b * values[hi]
        + ((a * a * a - a) * y2[lo] + (b * b * b - b) * y2[hi]) * (h * h) / 6.0
}

/// Builds the cardinal-basis matrix for ascending `knots` evaluated at
/// `queries`. Queries are clamped to the knot span.
fn cardinal_basis(knots: &[f64], queries: &[f64]) -> Array2<f64> {
    let m = knots.len();
    let n = queries.len();
    let mut phi = Array2::zeros((n, m));
    if m == 1 {
        phi.fill(1.0);
        return phi;
    }
    let mut values = vec![0.0; m];
    for j in 0..m {
        values.iter_mut().for_each(|v| *v = 0.0);
        values[j] = 1.0;
        let y2 = natural_spline_second_derivatives(knots, &values);
        for (q, &x) in queries.iter().enumerate() {
            let x = x.clamp(knots[0], knots[m - 1]);
            phi[[q, j]] = spline_eval(knots, &values, &y2, x);
        }
    }
    phi
}

/// Builds the interpolator for `m` tracked weights over `n` spectral bins,
/// with knots uniformly spaced over the spectral index rank `[1, n]`.
/// `m == n` places a knot on every bin and yields the exact identity.
pub fn build_interpolator(m: usize, n: usize) -> Result<Interpolator> {
    if m < 1 || m > n {
        return Err(Error::invalid_argument(format!(
            "tracked-weight count must satisfy 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    if m == n {
        return Ok(Interpolator {
            phi: Array2::eye(n),
            knots: (1..=n).map(|i| i as f64).collect(),
        });
    }
    let knots: Vec<f64> = if m == 1 {
        vec![(1.0 + n as f64) / 2.0]
    } else {
        (0..m)
            .map(|j| 1.0 + j as f64 * (n as f64 - 1.0) / (m as f64 - 1.0))
            .collect()
    };
    let queries: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    Ok(Interpolator {
        phi: cardinal_basis(&knots, &queries),
        knots,
    })
}

/// Value-domain variant: knots uniformly spaced over the eigenvalue range,
/// queried at the eigenvalues themselves. Falls back to a constant filter
/// when the spectrum is degenerate (all eigenvalues equal).
pub fn build_interpolator_over_values(m: usize, eigenvalues: &[f64]) -> Result<Interpolator> {
    let n = eigenvalues.len();
    if m < 1 || m > n {
        return Err(Error::invalid_argument(format!(
            "tracked-weight count must satisfy 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let lo = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == 1 || hi - lo <= 0.0 {
        let mut phi = Array2::zeros((n, m));
        phi.column_mut(0).fill(1.0);
        return Ok(Interpolator {
            phi,
            knots: vec![(lo + hi) / 2.0; 1],
        });
    }
    let knots: Vec<f64> = (0..m)
        .map(|j| lo + j as f64 * (hi - lo) / (m as f64 - 1.0))
        .collect();
    Ok(Interpolator {
        phi: cardinal_basis(&knots, eigenvalues),
        knots,
    })
}

/// Expands tracked weights `k_hat` (I×O×M) into full multipliers (I×O×N):
/// `k[i][o] = phi · k_hat[i][o]`.
pub fn interpolate_filters(interp: &Interpolator, k_hat: &ArrayView3<f64>) -> Result<Array3<f64>> {
    let (i_ch, o_ch, m) = k_hat.dim();
    if m != interp.m() {
        return Err(Error::invalid_argument(format!(
            "tracked-weight dimension {m} does not match interpolator ({})",
            interp.m()
        )));
    }
    let n = interp.n();
    let mut k = Array3::zeros((i_ch, o_ch, n));
    for i in 0..i_ch {
        for o in 0..o_ch {
            let full = interp.phi.dot(&k_hat.slice(ndarray::s![i, o, ..]));
            k.slice_mut(ndarray::s![i, o, ..]).assign(&full);
        }
    }
    Ok(k)
}

/// Projects full-filter gradients (I×O×N) back onto the tracked set:
/// `dk_hat[i][o] = phiᵀ · dk[i][o]`.
pub fn project_filter_grads(interp: &Interpolator, dk: &ArrayView3<f64>) -> Result<Array3<f64>> {
    let (i_ch, o_ch, n) = dk.dim();
    if n != interp.n() {
        return Err(Error::invalid_argument(format!(
            "filter dimension {n} does not match interpolator ({})",
            interp.n()
        )));
    }
    let m = interp.m();
    let mut dk_hat = Array3::zeros((i_ch, o_ch, m));
    for i in 0..i_ch {
        for o in 0..o_ch {
            let proj = interp.phi.t().dot(&dk.slice(ndarray::s![i, o, ..]));
            dk_hat.slice_mut(ndarray::s![i, o, ..]).assign(&proj);
        }
    }
    Ok(dk_hat)
}
