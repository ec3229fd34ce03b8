//! Graph pooling by greedy AMG-style vertex aggregation.
//!
//! Each level visits vertices in descending weighted-degree order (ties by
//! index). An unassigned vertex seeds an aggregate and absorbs its
//! strongest still-unassigned neighbor, provided that connection passes the
//! strength threshold `w_ij >= beta * max_k w_ik` (ties broken by lowest
//! index). Aggregates define:
//!
//! * the restriction `R` (averaging rows, one per aggregate; rows sum to 1),
//!   used for pooling `f̂ = R f` and, transposed, as the exact adjoint for
//!   backpropagation;
//! * the prolongation `P` (piecewise-constant columns, `R·P = I`), used to
//!   broadcast coarse signals back to the fine graph.
//!
//! Coarse edge weights are `R·W·Rᵀ` with the diagonal zeroed. The polarity
//! split of the top eigenvector is provided as an alternative reduction.

use ndarray::{Array2, Array3, ArrayView3};

use crate::conv::SignalBatch;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::SpectralBasis;

/// One coarsening level: the coarse graph plus its transfer operators.
#[derive(Debug, Clone)]
pub struct CoarseningLevel {
    pub coarse_graph: Graph,
    /// Averaging restriction, `coarse_n × fine_n`.
    pub restriction: Array2<f64>,
    /// Piecewise-constant prolongation, `fine_n × coarse_n`; `R·P = I`.
    pub prolongation: Array2<f64>,
    /// Aggregate id of every fine vertex.
    pub aggregate_map: Vec<usize>,
}

impl CoarseningLevel {
    pub fn fine_n(&self) -> usize {
        self.aggregate_map.len()
    }

    pub fn coarse_n(&self) -> usize {
        self.coarse_graph.n()
    }

    /// Aggregate sizes indexed by aggregate id.
    pub fn aggregate_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.coarse_n()];
        for &a in &self.aggregate_map {
            sizes[a] += 1;
        }
        sizes
    }
}

/// A stack of coarsening levels applied by one pooling layer, with the
/// composed transfer operators across all of them.
#[derive(Debug, Clone)]
pub struct CoarseningHierarchy {
    levels: Vec<CoarseningLevel>,
    composed_r: Array2<f64>,
    composed_p: Array2<f64>,
    fine_graph: Graph,
}

impl CoarseningHierarchy {
    pub fn levels(&self) -> &[CoarseningLevel] {
        &self.levels
    }

    pub fn fine_graph(&self) -> &Graph {
        &self.fine_graph
    }

    pub fn coarse_graph(&self) -> &Graph {
        &self.levels.last().expect("at least one level").coarse_graph
    }

    pub fn fine_n(&self) -> usize {
        self.fine_graph.n()
    }

    pub fn coarse_n(&self) -> usize {
        self.coarse_graph().n()
    }

    /// `R_last · … · R_first`, mapping fine signals to the coarsest level.
    pub fn composed_r(&self) -> &Array2<f64> {
        &self.composed_r
    }

    /// `P_first · … · P_last`, broadcasting coarse signals back up.
    pub fn composed_p(&self) -> &Array2<f64> {
        &self.composed_p
    }
}

fn coarsen_once(g: &Graph, beta: f64, level: usize) -> Result<CoarseningLevel> {
    let n = g.n();
    let w = g.adjacency();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        g.degree(b)
            .partial_cmp(&g.degree(a))
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut aggregate_map = vec![usize::MAX; n];
    let mut aggregates = 0usize;
    for &i in &order {
        if aggregate_map[i] != usize::MAX {
            continue;
        }
        let id = aggregates;
        aggregates += 1;
        aggregate_map[i] = id;
        let row = w.row(i);
        let row_max = row.iter().cloned().fold(0.0_f64, f64::max);
        if row_max > 0.0 {
            let threshold = beta * row_max;
            let mut mate: Option<usize> = None;
            let mut best = 0.0_f64;
            for j in 0..n {
                if aggregate_map[j] == usize::MAX
                    && row[j] > 0.0
                    && row[j] >= threshold
                    && row[j] > best
                {
                    best = row[j];
                    mate = Some(j);
                }
            }
            if let Some(j) = mate {
                aggregate_map[j] = id;
            }
        }
    }
    if aggregates == n && n > 1 {
        return Err(Error::CoarseningStall { level, n });
    }

    let mut sizes = vec![0usize; aggregates];
    for &a in &aggregate_map {
        sizes[a] += 1;
    }
    let mut restriction = Array2::zeros((aggregates, n));
    let mut prolongation = Array2::zeros((n, aggregates));
    for (v, &a) in aggregate_map.iter().enumerate() {
        restriction[[a, v]] = 1.0 / sizes[a] as f64;
        prolongation[[v, a]] = 1.0;
    }

    let coarse_w = restriction.dot(w).dot(&restriction.t());
    let mut adj = Array2::zeros((aggregates, aggregates));
    for a in 0..aggregates {
        for b in (a + 1)..aggregates {
            // Symmetrize away GEMM round-off.
            let weight = 0.5 * (coarse_w[[a, b]] + coarse_w[[b, a]]);
            adj[[a, b]] = weight;
            adj[[b, a]] = weight;
        }
    }
    let coarse_graph = Graph::from_adjacency(adj)?;

    Ok(CoarseningLevel {
        coarse_graph,
        restriction,
        prolongation,
        aggregate_map,
    })
}

/// Builds `levels` successive aggregation levels starting from `g`.
///
/// The visit order is deterministic (weighted degree descending, index
/// tiebreak); `_seed` is reserved for randomized tie-breaking, which is off.
pub fn amg_coarsen(
    g: &Graph,
    beta: f64,
    levels: usize,
    _seed: u64,
) -> Result<CoarseningHierarchy> {
    if g.n() < 2 {
        return Err(Error::invalid_argument(
            "coarsening requires at least 2 vertices",
        ));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::invalid_argument(format!(
            "strength threshold must lie in (0,1), got {beta}"
        )));
    }
    if levels == 0 {
        return Err(Error::invalid_argument("level count must be positive"));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = g.clone();
    for level in 0..levels {
        let lvl = coarsen_once(&current, beta, level)?;
        current = lvl.coarse_graph.clone();
        out.push(lvl);
    }
    let mut composed_r = out[0].restriction.clone();
    let mut composed_p = out[0].prolongation.clone();
    for lvl in &out[1..] {
        composed_r = lvl.restriction.dot(&composed_r);
        composed_p = composed_p.dot(&lvl.prolongation);
    }
    Ok(CoarseningHierarchy {
        levels: out,
        composed_r,
        composed_p,
        fine_graph: g.clone(),
    })
}

fn apply_rows(matrix_t: &Array2<f64>, t: &ArrayView3<f64>) -> Result<Array3<f64>> {
    let (s, c, n) = t.dim();
    let rows = t
        .to_shape((s * c, n))
        .map_err(|e| Error::invalid_argument(e.to_string()))?;
    let out = rows.dot(matrix_t);
    let m = out.ncols();
    Ok(out
        .to_shape((s, c, m))
        .map_err(|e| Error::invalid_argument(e.to_string()))?
        .to_owned())
}

/// Pools every sample/channel to the coarsest level: `f̂ = R f`.
pub fn pool_forward(h: &CoarseningHierarchy, f: &ArrayView3<f64>) -> Result<Array3<f64>> {
    if f.dim().2 != h.fine_n() {
        return Err(Error::invalid_argument(format!(
            "signal length {} does not match fine graph size {}",
            f.dim().2,
            h.fine_n()
        )));
    }
    apply_rows(&h.composed_r.t().to_owned(), f)
}

/// Backpropagates gradients through pooling with the exact adjoint of the
/// restriction: `df = Rᵀ df̂`.
pub fn pool_backward(h: &CoarseningHierarchy, dcoarse: &ArrayView3<f64>) -> Result<Array3<f64>> {
    if dcoarse.dim().2 != h.coarse_n() {
        return Err(Error::invalid_argument(format!(
            "gradient length {} does not match coarse graph size {}",
            dcoarse.dim().2,
            h.coarse_n()
        )));
    }
    apply_rows(&h.composed_r, dcoarse)
}

/// Reconstructs a fine signal from a coarse one with the prolongation:
/// `f = P f̂` (each aggregate's value is broadcast to its members).
pub fn unpool(h: &CoarseningHierarchy, coarse: &ArrayView3<f64>) -> Result<Array3<f64>> {
    if coarse.dim().2 != h.coarse_n() {
        return Err(Error::invalid_argument(format!(
            "signal length {} does not match coarse graph size {}",
            coarse.dim().2,
            h.coarse_n()
        )));
    }
    apply_rows(&h.composed_p.t().to_owned(), coarse)
}

/// [`pool_forward`] for [`SignalBatch`], landing on the coarsest graph.
pub fn pool_forward_batch(h: &CoarseningHierarchy, f: &SignalBatch) -> Result<SignalBatch> {
    let data = pool_forward(h, &f.data().view())?;
    SignalBatch::new(h.coarse_graph().clone(), data)
}

/// Splits the vertex set on the polarity of the top eigenvector: vertices
/// where `u_N >= 0` (under the basis sign convention) versus the rest. On
/// degenerate spectra both sets may be uneven, including the all-kept case
/// for an edgeless graph.
pub fn polarity_split(basis: &SpectralBasis) -> (Vec<usize>, Vec<usize>) {
    let top = basis.eigenvector(basis.n() - 1);
    let mut kept = Vec::new();
    let mut complement = Vec::new();
    for (i, &v) in top.iter().enumerate() {
        if v >= 0.0 {
            kept.push(i);
        } else {
            complement.push(i);
        }
    }
    (kept, complement)
}
