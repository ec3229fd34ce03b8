//! Spectral-multiplier convolution and its hand-derived gradients.
//!
//! Forward convolution multiplies the signal's spectral coefficients by a
//! per-bin filter and transforms back:
//!
//! ```text
//! y[s,o] = U · Σ_i (Uᵀ f[s,i] ⊙ k[i,o]) + bias[o]·1
//! ```
//!
//! The data gradient convolves the output gradient with the filters in the
//! spectral domain; the filter gradient is the spectral product of output
//! gradient and input, left in the spectral domain (filters are spectral
//! multipliers, so no inverse transform is applied). The `naive_*` variants
//! omit the forward transform of the stated operand and exist as the
//! comparison baseline for the gradient-error study.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView3, CowArray, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::interp::Interpolator;
use crate::spectral::SpectralBasis;

/// A batch of graph signals: `samples × channels × vertices`.
#[derive(Debug, Clone)]
pub struct SignalBatch {
    data: Array3<f64>,
    graph: Graph,
}

impl SignalBatch {
    pub fn new(graph: Graph, data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != graph.n() {
            return Err(Error::invalid_argument(format!(
                "signal length {} does not match graph size {}",
                data.dim().2,
                graph.n()
            )));
        }
        Ok(SignalBatch { data, graph })
    }

    /// Wraps single-channel signals given as rows of `images`.
    pub fn from_rows(graph: Graph, images: &Array2<f64>) -> Result<Self> {
        let (samples, n) = images.dim();
        let data = images
            .to_shape((samples, 1, n))
            .map_err(|e| Error::invalid_argument(e.to_string()))?
            .to_owned();
        SignalBatch::new(graph, data)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn samples(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn vertices(&self) -> usize {
        self.data.dim().2
    }

    /// Layer-boundary invariant: every amplitude is finite.
    pub fn validate_finite(&self) -> Result<()> {
        ensure_finite(&self.data.view(), "signal batch")
    }
}

/// Learned parameters of one spectral convolution layer: tracked weights
/// `k_hat` (I×O×M), one bias per output map, and the interpolator that
/// expands tracked weights to full multipliers.
#[derive(Debug, Clone)]
pub struct SpectralConvParams {
    pub k_hat: Array3<f64>,
    pub bias: Array1<f64>,
    pub interp: Interpolator,
}

impl SpectralConvParams {
    /// Gaussian initialization with standard deviation `1/sqrt(I*M)`;
    /// biases start at zero.
    pub fn init<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        interp: Interpolator,
        rng: &mut R,
    ) -> Self {
        let m = interp.m();
        let std = 1.0 / ((in_channels * m) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let k_hat =
            Array3::from_shape_fn((in_channels, out_channels, m), |_| normal.sample(rng));
        SpectralConvParams {
            k_hat,
            bias: Array1::zeros(out_channels),
            interp,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.k_hat.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.k_hat.dim().1
    }

    pub fn tracked(&self) -> usize {
        self.k_hat.dim().2
    }

    /// Full interpolated multipliers `k = phi·k_hat`, shaped I×O×N.
    pub fn full_filters(&self) -> Result<Array3<f64>> {
        crate::interp::interpolate_filters(&self.interp, &self.k_hat.view())
    }
}

fn ensure_finite(t: &ArrayView3<f64>, what: &str) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite value in {what}"), None))
    }
}

fn as_rows<'a>(t: ArrayView3<'a, f64>) -> Result<CowArray<'a, f64, Ix2>> {
    let (a, b, c) = t.dim();
    match t.into_shape_with_order((a * b, c)) {
        Ok(view) => Ok(CowArray::from(view)),
        // Non-contiguous views take a copy.
        Err(_) => Ok(CowArray::from(
            t.to_owned()
                .into_shape_with_order((a * b, c))
                .map_err(|e| Error::invalid_argument(e.to_string()))?,
        )),
    }
}

fn check_shapes(
    basis: &SpectralBasis,
    f_dim: Option<(usize, usize, usize)>,
    k_dim: Option<(usize, usize, usize)>,
    dy_dim: Option<(usize, usize, usize)>,
) -> Result<()> {
    let n = basis.n();
    if let Some((_, _, fn_)) = f_dim {
        if fn_ != n {
            return Err(Error::invalid_argument(format!(
                "signal length {fn_} does not match basis size {n}"
            )));
        }
    }
    if let Some((_, _, kn)) = k_dim {
        if kn != n {
            return Err(Error::invalid_argument(format!(
                "filter length {kn} does not match basis size {n}"
            )));
        }
    }
    if let Some((_, _, dn)) = dy_dim {
        if dn != n {
            return Err(Error::invalid_argument(format!(
                "gradient length {dn} does not match basis size {n}"
            )));
        }
    }
    if let (Some((_, fi, _)), Some((ki, _, _))) = (f_dim, k_dim) {
        if fi != ki {
            return Err(Error::invalid_argument(format!(
                "input channel mismatch: signal has {fi}, filters have {ki}"
            )));
        }
    }
    if let (Some((_, dyo, _)), Some((_, ko, _))) = (dy_dim, k_dim) {
        if dyo != ko {
            return Err(Error::invalid_argument(format!(
                "output channel mismatch: gradient has {dyo}, filters have {ko}"
            )));
        }
    }
    Ok(())
}

/// Channel-mixing in the spectral domain:
/// `out[s,b] = Σ_a lhs[s,a] ⊙ rhs[a,b]` over bins.
fn mix_channels(lhs: &ArrayView3<f64>, rhs: &ArrayView3<f64>) -> Array3<f64> {
    let (samples, a_ch, n) = lhs.dim();
    let (_, b_ch, _) = rhs.dim();
    let mut out = Array3::zeros((samples, b_ch, n));
    for s in 0..samples {
        for b in 0..b_ch {
            let mut acc = out.slice_mut(s![s, b, ..]);
            for a in 0..a_ch {
                let l = lhs.slice(s![s, a, ..]);
                let r = rhs.slice(s![a, b, ..]);
                ndarray::Zip::from(&mut acc)
                    .and(&l)
                    .and(&r)
                    .for_each(|dst, &x, &y| *dst += x * y);
            }
        }
    }
    out
}

/// Forward spectral convolution (batched over samples and channels).
///
/// `f` is S×I×N, `k` is I×O×N, `bias` has length O; the result is S×O×N.
pub fn conv_forward(
    basis: &SpectralBasis,
    f: &ArrayView3<f64>,
    k: &ArrayView3<f64>,
    bias: &ArrayView1<f64>,
) -> Result<Array3<f64>> {
    check_shapes(basis, Some(f.dim()), Some(k.dim()), None)?;
    let (samples, _, n) = f.dim();
    let o_ch = k.dim().1;
    if bias.len() != o_ch {
        return Err(Error::invalid_argument(format!(
            "bias length {} does not match output channels {o_ch}",
            bias.len()
        )));
    }
    let f_rows = as_rows(*f)?;
    let f_spec = f_rows.dot(basis.u());
    let f_spec3 = f_spec
        .to_shape((samples, f.dim().1, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned();
    let z = mix_channels(&f_spec3.view(), k);
    let z_rows = as_rows(z.view())?;
    let y_rows = z_rows.dot(&basis.u().t());
    let mut y = y_rows
        .to_shape((samples, o_ch, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned();
    for s in 0..samples {
        for o in 0..o_ch {
            let b = bias[o];
            if b != 0.0 {
                y.slice_mut(s![s, o, ..]).mapv_inplace(|v| v + b);
            }
        }
    }
    ensure_finite(&y.view(), "conv_forward output")?;
    Ok(y)
}

/// Gradient with respect to the input signals:
/// `df[s,i] = U · Σ_o (Uᵀ dy[s,o] ⊙ k[i,o])`.
pub fn conv_backward_data(
    basis: &SpectralBasis,
    dy: &ArrayView3<f64>,
    k: &ArrayView3<f64>,
) -> Result<Array3<f64>> {
    check_shapes(basis, None, Some(k.dim()), Some(dy.dim()))?;
    let (samples, o_ch, n) = dy.dim();
    let i_ch = k.dim().0;
    let dy_rows = as_rows(*dy)?;
    let dy_spec = dy_rows.dot(basis.u());
    let dy_spec3 = dy_spec
        .to_shape((samples, o_ch, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned();
    // Mix against filters transposed to O×I×N.
    let k_t = k.permuted_axes([1, 0, 2]).to_owned();
    let df_spec = mix_channels(&dy_spec3.view(), &k_t.view());
    let df_rows = as_rows(df_spec.view())?;
    let df = df_rows
        .dot(&basis.u().t())
        .to_shape((samples, i_ch, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned();
    Ok(df)
}

/// Gradient with respect to the full spectral multipliers:
/// `dk[i,o] = Σ_s (Uᵀ dy[s,o]) ⊙ (Uᵀ f[s,i])`. The result stays in the
/// spectral domain.
pub fn conv_backward_filters(
    basis: &SpectralBasis,
    dy: &ArrayView3<f64>,
    f: &ArrayView3<f64>,
) -> Result<Array3<f64>> {
    check_shapes(basis, Some(f.dim()), None, Some(dy.dim()))?;
    let (samples, o_ch, n) = dy.dim();
    if f.dim().0 != samples {
        return Err(Error::invalid_argument(format!(
            "sample mismatch: signal has {}, gradient has {samples}",
            f.dim().0
        )));
    }
    let i_ch = f.dim().1;
    let f_spec = as_rows(*f)?.dot(basis.u());
    let dy_spec = as_rows(*dy)?.dot(basis.u());
    let mut dk = Array3::zeros((i_ch, o_ch, n));
    for i in 0..i_ch {
        for o in 0..o_ch {
            let mut acc = dk.slice_mut(s![i, o, ..]);
            for s in 0..samples {
                let fs = f_spec.row(s * i_ch + i);
                let ds = dy_spec.row(s * o_ch + o);
                for v in 0..n {
                    acc[v] += fs[v] * ds[v];
                }
            }
        }
    }
    Ok(dk)
}

/// Baseline data gradient that skips the forward transform of `dy`:
/// `df[s,i] = U · Σ_o (dy[s,o] ⊙ k[i,o])`.
pub fn naive_backward_data(
    basis: &SpectralBasis,
    dy: &ArrayView3<f64>,
    k: &ArrayView3<f64>,
) -> Result<Array3<f64>> {
    check_shapes(basis, None, Some(k.dim()), Some(dy.dim()))?;
    let (samples, _, n) = dy.dim();
    let i_ch = k.dim().0;
    let k_t = k.permuted_axes([1, 0, 2]).to_owned();
    let df_spec = mix_channels(dy, &k_t.view());
    let df = as_rows(df_spec.view())?
        .dot(&basis.u().t())
        .to_shape((samples, i_ch, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned();
    Ok(df)
}

/// Baseline filter gradient that skips both forward transforms:
/// `dk[i,o] = Σ_s dy[s,o] ⊙ f[s,i]`.
pub fn naive_backward_filters(
    basis: &SpectralBasis,
    dy: &ArrayView3<f64>,
    f: &ArrayView3<f64>,
) -> Result<Array3<f64>> {
    check_shapes(basis, Some(f.dim()), None, Some(dy.dim()))?;
    let (samples, o_ch, n) = dy.dim();
    if f.dim().0 != samples {
        return Err(Error::invalid_argument(format!(
            "sample mismatch: signal has {}, gradient has {samples}",
            f.dim().0
        )));
    }
    let i_ch = f.dim().1;
    let mut dk = Array3::zeros((i_ch, o_ch, n));
    for i in 0..i_ch {
        for o in 0..o_ch {
            let mut acc = dk.slice_mut(s![i, o, ..]);
            for s in 0..samples {
                for v in 0..n {
                    acc[v] += f[[s, i, v]] * dy[[s, o, v]];
                }
            }
        }
    }
    Ok(dk)
}

/// Convenience wrapper over [`conv_forward`] for [`SignalBatch`] inputs.
pub fn conv_forward_batch(
    basis: &SpectralBasis,
    f: &SignalBatch,
    params: &SpectralConvParams,
) -> Result<SignalBatch> {
    let k = params.full_filters()?;
    let y = conv_forward(basis, &f.data().view(), &k.view(), &params.bias.view())?;
    SignalBatch::new(f.graph().clone(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid_graph, laplacian};
    use crate::spectral::eigendecompose;
    use ndarray::{Array1, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn basis_for(rows: usize, cols: usize) -> SpectralBasis {
        let g = build_grid_graph(rows, cols).unwrap();
        eigendecompose(&laplacian(&g)).unwrap()
    }

    #[test]
    fn all_ones_filter_is_identity() {
        let basis = basis_for(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Array3::from_shape_fn((2, 1, 9), |_| rng.random::<f64>() - 0.5);
        let k = Array3::from_elem((1, 1, 9), 1.0);
        let bias = Array1::zeros(1);
        let y = conv_forward(&basis, &f.view(), &k.view(), &bias.view()).unwrap();
        for (a, b) in y.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn one_hot_filter_projects_onto_eigenvector() {
        let basis = basis_for(1, 4);
        let j = 2;
        let mut k = Array3::zeros((1, 1, 4));
        k[[0, 0, j]] = 1.0;
        let bias = Array1::zeros(1);

        // f = u_j passes through unchanged.
        let mut f = Array3::zeros((1, 1, 4));
        f.slice_mut(s![0, 0, ..]).assign(&basis.eigenvector(j));
        let y = conv_forward(&basis, &f.view(), &k.view(), &bias.view()).unwrap();
        for v in 0..4 {
            assert!((y[[0, 0, v]] - basis.eigenvector(j)[v]).abs() < 1e-12);
        }

        // f orthogonal to u_j (another eigenvector) is annihilated.
        let mut g = Array3::zeros((1, 1, 4));
        g.slice_mut(s![0, 0, ..]).assign(&basis.eigenvector(0));
        let y = conv_forward(&basis, &g.view(), &k.view(), &bias.view()).unwrap();
        for v in 0..4 {
            assert!(y[[0, 0, v]].abs() < 1e-12);
        }
    }

    #[test]
    fn bias_adds_constant_per_map() {
        let basis = basis_for(2, 2);
        let f = Array3::zeros((1, 1, 4));
        let k = Array3::from_elem((1, 2, 4), 1.0);
        let bias = ndarray::array![0.25, -1.5];
        let y = conv_forward(&basis, &f.view(), &k.view(), &bias.view()).unwrap();
        for v in 0..4 {
            assert_eq!(y[[0, 0, v]], 0.25);
            assert_eq!(y[[0, 1, v]], -1.5);
        }
    }

    #[test]
    fn backward_data_zero_and_allpass() {
        let basis = basis_for(2, 3);
        let zeros = Array3::zeros((2, 1, 6));
        let k = Array3::from_elem((1, 1, 6), 1.0);
        let df = conv_backward_data(&basis, &zeros.view(), &k.view()).unwrap();
        assert!(df.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dy = Array3::from_shape_fn((2, 1, 6), |_| rng.random::<f64>() - 0.5);
        let df = conv_backward_data(&basis, &dy.view(), &k.view()).unwrap();
        for (a, b) in df.iter().zip(dy.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_filters_orthonormal_projection() {
        let basis = basis_for(1, 5);
        let j = 3;
        let mut f = Array3::zeros((1, 1, 5));
        f.slice_mut(s![0, 0, ..]).assign(&basis.eigenvector(j));
        let mut dy = Array3::zeros((1, 1, 5));
        dy.slice_mut(s![0, 0, ..]).assign(&basis.eigenvector(j));
        let dk = conv_backward_filters(&basis, &dy.view(), &f.view()).unwrap();
        for v in 0..5 {
            let want = if v == j { 1.0 } else { 0.0 };
            assert!((dk[[0, 0, v]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_filters_zero_gradient() {
        let basis = basis_for(1, 5);
        let f = Array3::from_elem((3, 2, 5), 0.7);
        let dy = Array3::zeros((3, 1, 5));
        let dk = conv_backward_filters(&basis, &dy.view(), &f.view()).unwrap();
        assert!(dk.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn naive_variants_zero_and_identity_basis() {
        // On an edgeless graph L = 0 and U = I, so naive and proposed
        // gradients coincide.
        let g = crate::graph::Graph::from_adjacency(Array2::zeros((4, 4))).unwrap();
        let basis = eigendecompose(&laplacian(&g)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dy = Array3::from_shape_fn((2, 2, 4), |_| rng.random::<f64>() - 0.5);
        let f = Array3::from_shape_fn((2, 3, 4), |_| rng.random::<f64>() - 0.5);
        let k = Array3::from_shape_fn((3, 2, 4), |_| rng.random::<f64>() - 0.5);

        let zeros = Array3::zeros((2, 2, 4));
        assert!(naive_backward_data(&basis, &zeros.view(), &k.view())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(naive_backward_filters(&basis, &zeros.view(), &f.view())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let a = conv_backward_data(&basis, &dy.view(), &k.view()).unwrap();
        let b = naive_backward_data(&basis, &dy.view(), &k.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let a = conv_backward_filters(&basis, &dy.view(), &f.view()).unwrap();
        let b = naive_backward_filters(&basis, &dy.view(), &f.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_between_forward_and_backward_data() {
        // <conv(f,k) - bias, dy> == <f, conv_backward_data(dy,k)>
        let basis = basis_for(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Array3::from_shape_fn((2, 3, 9), |_| rng.random::<f64>() - 0.5);
        let k = Array3::from_shape_fn((3, 2, 9), |_| rng.random::<f64>() - 0.5);
        let dy = Array3::from_shape_fn((2, 2, 9), |_| rng.random::<f64>() - 0.5);
        let bias = Array1::zeros(2);
        let y = conv_forward(&basis, &f.view(), &k.view(), &bias.view()).unwrap();
        let df = conv_backward_data(&basis, &dy.view(), &k.view()).unwrap();
        let lhs: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(df.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn forward_is_linear_in_signal_and_filter() {
        let basis = basis_for(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bias = Array1::zeros(2);
        let f1 = Array3::from_shape_fn((1, 2, 6), |_| rng.random::<f64>() - 0.5);
        let f2 = Array3::from_shape_fn((1, 2, 6), |_| rng.random::<f64>() - 0.5);
        let k1 = Array3::from_shape_fn((2, 2, 6), |_| rng.random::<f64>() - 0.5);
        let k2 = Array3::from_shape_fn((2, 2, 6), |_| rng.random::<f64>() - 0.5);

        let sum_f = &f1 + &f2;
        let lhs = conv_forward(&basis, &sum_f.view(), &k1.view(), &bias.view()).unwrap();
        let rhs = conv_forward(&basis, &f1.view(), &k1.view(), &bias.view()).unwrap()
            + conv_forward(&basis, &f2.view(), &k1.view(), &bias.view()).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-10);
        }

        let sum_k = &k1 + &k2;
        let lhs = conv_forward(&basis, &f1.view(), &sum_k.view(), &bias.view()).unwrap();
        let rhs = conv_forward(&basis, &f1.view(), &k1.view(), &bias.view()).unwrap()
            + conv_forward(&basis, &f1.view(), &k2.view(), &bias.view()).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatches_rejected() {
        let basis = basis_for(2, 2);
        let f = Array3::<f64>::zeros((1, 2, 4));
        let k_bad_n = Array3::<f64>::zeros((2, 1, 5));
        let bias = Array1::zeros(1);
        assert!(conv_forward(&basis, &f.view(), &k_bad_n.view(), &bias.view()).is_err());
        let k_bad_i = Array3::<f64>::zeros((3, 1, 4));
        assert!(conv_forward(&basis, &f.view(), &k_bad_i.view(), &bias.view()).is_err());
        let k = Array3::<f64>::zeros((2, 1, 4));
        let bad_bias = Array1::zeros(2);
        assert!(conv_forward(&basis, &f.view(), &k.view(), &bad_bias.view()).is_err());
        let dy_bad = Array3::<f64>::zeros((1, 3, 4));
        assert!(conv_backward_data(&basis, &dy_bad.view(), &k.view()).is_err());
        let dy = Array3::<f64>::zeros((2, 1, 4));
        assert!(conv_backward_filters(&basis, &dy.view(), &f.view()).is_err());
    }

    #[test]
    fn non_finite_input_detected() {
        let g = build_grid_graph(2, 2).unwrap();
        let mut data = Array3::zeros((1, 1, 4));
        data[[0, 0, 2]] = f64::NAN;
        let batch = SignalBatch::new(g, data).unwrap();
        assert!(batch.validate_finite().is_err());
    }

    use ndarray::Array2;
}
