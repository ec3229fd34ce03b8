//! Weighted undirected graphs and their unnormalized Laplacians.
//!
//! Graphs are dense and desk-scale (N ≤ ~1000): adjacency is an N×N
//! symmetric matrix with zero diagonal and non-negative weights. The two
//! constructors used by the experiments are the 4-way regular grid and its
//! random subsampling.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug)]
struct GraphData {
    n: usize,
    adjacency: Array2<f64>,
    /// For subsampled graphs, maps each vertex to its index in the graph it
    /// was sampled from. `None` for directly constructed graphs.
    vertex_labels: Option<Vec<usize>>,
}

/// An immutable weighted undirected graph. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Graph {
    data: Arc<GraphData>,
}

impl Graph {
    /// Builds a graph from a symmetric non-negative adjacency matrix with a
    /// zero diagonal.
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        Self::from_adjacency_labeled(adjacency, None)
    }

    pub fn from_adjacency_labeled(
        adjacency: Array2<f64>,
        vertex_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (rows, cols) = adjacency.dim();
        if rows == 0 || rows != cols {
            return Err(Error::invalid_argument(format!(
                "adjacency must be square and non-empty, got {rows}x{cols}"
            )));
        }
        for i in 0..rows {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::invalid_argument(format!(
                    "self-loop at vertex {i} (diagonal must be zero)"
                )));
            }
            for j in (i + 1)..cols {
                let w = adjacency[[i, j]];
                if w != adjacency[[j, i]] {
                    return Err(Error::invalid_argument(format!(
                        "adjacency not symmetric at ({i},{j})"
                    )));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::invalid_argument(format!(
                        "edge weight at ({i},{j}) must be finite and non-negative, got {w}"
                    )));
                }
            }
        }
        if let Some(labels) = &vertex_labels {
            if labels.len() != rows {
                return Err(Error::invalid_argument(
                    "vertex label count does not match vertex count",
                ));
            }
        }
        Ok(Graph {
            data: Arc::new(GraphData {
                n: rows,
                adjacency,
                vertex_labels,
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.data.n
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.data.adjacency
    }

    pub fn vertex_labels(&self) -> Option<&[usize]> {
        self.data.vertex_labels.as_deref()
    }

    /// Weighted degree (row sum of the adjacency).
    pub fn degree(&self, v: usize) -> f64 {
        self.data.adjacency.row(v).sum()
    }

    /// Number of edges, counting each unordered pair once.
    pub fn edge_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                if self.data.adjacency[[i, j]] > 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Number of connected components (zero-weight entries are non-edges).
    pub fn component_count(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for u in 0..n {
                    if !seen[u] && self.data.adjacency[[v, u]] > 0.0 {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    /// Hop distances from `source` by breadth-first search; unreachable
    /// vertices get `usize::MAX`.
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        let n = self.n();
        let mut dist = vec![usize::MAX; n];
        dist[source] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for u in 0..n {
                if dist[u] == usize::MAX && self.data.adjacency[[v, u]] > 0.0 {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Serializes to the plain-text edge list: `N` on the first line, then
    /// one `i j w` line per edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.n())?;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                let w = self.data.adjacency[[i, j]];
                if w > 0.0 {
                    writeln!(out, "{i} {j} {w}")?;
                }
            }
        }
        Ok(())
    }

    /// Parses the edge-list format produced by [`Graph::write_edge_list`].
    pub fn read_edge_list<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines().enumerate();
        let n: usize = match lines.next() {
            Some((_, line)) => {
                let line = line?;
                line.trim()
                    .parse()
                    .map_err(|_| Error::format(format!("line 1: expected vertex count, got {line:?}"), None))?
            }
            None => return Err(Error::format("empty edge-list file", Some(0))),
        };
        if n == 0 {
            return Err(Error::format("vertex count must be positive", None));
        }
        let mut adjacency = Array2::zeros((n, n));
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>, what: &str| -> Result<String> {
                tok.map(str::to_owned)
                    .ok_or_else(|| Error::format(format!("line {}: missing {what}", idx + 1), None))
            };
            let i: usize = parse(parts.next(), "source vertex")?
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad source vertex", idx + 1), None))?;
            let j: usize = parse(parts.next(), "target vertex")?
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad target vertex", idx + 1), None))?;
            let w: f64 = parse(parts.next(), "weight")?
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad weight", idx + 1), None))?;
            if i >= n || j >= n {
                return Err(Error::format(
                    format!("line {}: vertex index out of range (n = {n})", idx + 1),
                    None,
                ));
            }
            if i == j {
                return Err(Error::format(format!("line {}: self-loop", idx + 1), None));
            }
            if adjacency[[i, j]] != 0.0 {
                return Err(Error::format(format!("line {}: duplicate edge", idx + 1), None));
            }
            adjacency[[i, j]] = w;
            adjacency[[j, i]] = w;
        }
        Graph::from_adjacency(adjacency)
    }
}

/// The unnormalized graph Laplacian L = D − W.
#[derive(Debug, Clone)]
pub struct LaplacianMatrix {
    matrix: Array2<f64>,
    graph: Graph,
}

impl LaplacianMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Content hash of the matrix entries (used as an eigenbasis cache key).
    pub fn content_hash(&self) -> u64 {
        // FNV-1a over the f64 bit patterns; stable across runs.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for &x in self.matrix.iter() {
            for byte in x.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

/// Edge-weight convention for grid graphs. On the unit grid the Euclidean
/// distance between 4-way neighbors is 1, so both modes coincide there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Binary,
    Euclidean,
}

/// Builds the `rows`×`cols` regular grid graph with 4-way (Von Neumann)
/// adjacency and unit edge weights.
pub fn build_grid_graph(rows: usize, cols: usize) -> Result<Graph> {
    build_grid_graph_weighted(rows, cols, WeightMode::Binary)
}

pub fn build_grid_graph_weighted(rows: usize, cols: usize, mode: WeightMode) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid_argument(format!(
            "grid dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let n = rows * cols;
    let mut adjacency = Array2::zeros((n, n));
    // Unit spacing: neighbor distance is 1 in either mode.
    let w = match mode {
        WeightMode::Binary => 1.0,
        WeightMode::Euclidean => 1.0,
    };
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                adjacency[[v, v + 1]] = w;
                adjacency[[v + 1, v]] = w;
            }
            if r + 1 < rows {
                adjacency[[v, v + cols]] = w;
                adjacency[[v + cols, v]] = w;
            }
        }
    }
    Graph::from_adjacency(adjacency)
}

/// Removes `exclude_count` uniformly sampled vertices (without replacement)
/// and every incident edge. Returns the reduced graph and the ascending list
/// of kept original indices. Deterministic for a fixed seed.
///
/// The result may be disconnected; callers can report
/// [`Graph::component_count`] rather than resample.
pub fn subsample_graph(g: &Graph, exclude_count: usize, seed: u64) -> Result<(Graph, Vec<usize>)> {
    let n = g.n();
    if exclude_count >= n {
        return Err(Error::invalid_argument(format!(
            "cannot exclude {exclude_count} of {n} vertices"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let excluded = rand::seq::index::sample(&mut rng, n, exclude_count);
    let mut keep = vec![true; n];
    for idx in excluded.iter() {
        keep[idx] = false;
    }
    let kept: Vec<usize> = (0..n).filter(|&v| keep[v]).collect();
    let m = kept.len();
    let mut adjacency = Array2::zeros((m, m));
    for (new_i, &old_i) in kept.iter().enumerate() {
        for (new_j, &old_j) in kept.iter().enumerate().skip(new_i + 1) {
            let w = g.adjacency()[[old_i, old_j]];
            adjacency[[new_i, new_j]] = w;
            adjacency[[new_j, new_i]] = w;
        }
    }
    let original: Vec<usize> = match g.vertex_labels() {
        Some(labels) => kept.iter().map(|&v| labels[v]).collect(),
        None => kept.clone(),
    };
    let graph = Graph::from_adjacency_labeled(adjacency, Some(original))?;
    Ok((graph, kept))
}

/// Forms L = D − W for the graph's adjacency W and degree matrix D.
pub fn laplacian(g: &Graph) -> LaplacianMatrix {
    let n = g.n();
    let w = g.adjacency();
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            degree += w[[i, j]];
            if i != j {
                matrix[[i, j]] = -w[[i, j]];
            }
        }
        matrix[[i, i]] = degree;
    }
    LaplacianMatrix {
        matrix,
        graph: g.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_28x28_has_784_vertices() {
        let g = build_grid_graph(28, 28).unwrap();
        assert_eq!(g.n(), 784);
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn grid_1x1_single_vertex() {
        let g = build_grid_graph(1, 1).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.edge_count(), 0);
        let l = laplacian(&g);
        assert_eq!(l.matrix()[[0, 0]], 0.0);
    }

    #[test]
    fn grid_2x2_four_edges_degree_two() {
        // Hand enumeration of the 4-neighborhood: each corner touches its
        // horizontal and vertical neighbor.
        let g = build_grid_graph(2, 2).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.edge_count(), 4);
        for v in 0..4 {
            assert_eq!(g.degree(v), 2.0);
        }
    }

    #[test]
    fn grid_edge_count_formula() {
        for (r, c) in [(1, 1), (1, 7), (3, 4), (5, 5), (2, 9)] {
            let g = build_grid_graph(r, c).unwrap();
            assert_eq!(g.edge_count(), r * (c - 1) + c * (r - 1), "{r}x{c}");
        }
    }

    #[test]
    fn grid_zero_dimension_rejected() {
        assert!(matches!(
            build_grid_graph(0, 5),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            build_grid_graph(5, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn weight_modes_coincide_on_unit_grid() {
        let a = build_grid_graph_weighted(3, 4, WeightMode::Binary).unwrap();
        let b = build_grid_graph_weighted(3, 4, WeightMode::Euclidean).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
    }

    #[test]
    fn subsample_removes_requested_count() {
        let g = build_grid_graph(28, 28).unwrap();
        let (sub, kept) = subsample_graph(&g, 84, 42).unwrap();
        assert_eq!(sub.n(), 700);
        assert_eq!(kept.len(), 700);
        assert!(kept.windows(2).all(|w| w[0] < w[1]), "kept indices ascending");
        assert_eq!(sub.vertex_labels().unwrap(), kept.as_slice());
    }

    #[test]
    fn subsample_zero_is_identity() {
        let g = build_grid_graph(3, 3).unwrap();
        let (sub, kept) = subsample_graph(&g, 0, 7).unwrap();
        assert_eq!(sub.adjacency(), g.adjacency());
        assert_eq!(kept, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_2x2_remove_one_gives_path() {
        // The 2x2 grid is a 4-cycle; deleting any vertex leaves a 3-path.
        let g = build_grid_graph(2, 2).unwrap();
        for seed in 0..8 {
            let (sub, _) = subsample_graph(&g, 1, seed).unwrap();
            assert_eq!(sub.n(), 3);
            assert_eq!(sub.edge_count(), 2);
            let mut degrees: Vec<f64> = (0..3).map(|v| sub.degree(v)).collect();
            degrees.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(degrees, vec![1.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn subsample_excluding_everything_rejected() {
        let g = build_grid_graph(2, 2).unwrap();
        assert!(matches!(
            subsample_graph(&g, 4, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn subsample_deterministic_per_seed() {
        let g = build_grid_graph(10, 10).unwrap();
        let (a, ka) = subsample_graph(&g, 15, 123).unwrap();
        let (b, kb) = subsample_graph(&g, 15, 123).unwrap();
        let (c, kc) = subsample_graph(&g, 15, 124).unwrap();
        assert_eq!(ka, kb);
        assert_eq!(a.adjacency(), b.adjacency());
        assert_ne!(ka, kc, "different seed should pick a different subset");
        let _ = c;
    }

    #[test]
    fn laplacian_of_path3() {
        // Direct D − W computation for the 3-path with unit weights.
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let g = Graph::from_adjacency(w).unwrap();
        let l = laplacian(&g);
        let expected = array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        assert_eq!(l.matrix(), &expected);
    }

    #[test]
    fn laplacian_weighted_pair() {
        let w = array![[0.0, 5.0], [5.0, 0.0]];
        let g = Graph::from_adjacency(w).unwrap();
        let l = laplacian(&g);
        let expected = array![[5.0, -5.0], [-5.0, 5.0]];
        assert_eq!(l.matrix(), &expected);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = build_grid_graph(5, 7).unwrap();
        let l = laplacian(&g);
        for row in l.matrix().rows() {
            assert!(row.sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn subsample_commutes_with_laplacian_restriction() {
        // Deleting rows/columns of W first and forming D − W on the
        // submatrix must equal the Laplacian of the subsampled graph.
        for (r, c) in [(3, 3), (4, 5), (5, 5)] {
            let g = build_grid_graph(r, c).unwrap();
            let (sub, kept) = subsample_graph(&g, (r * c) / 4, 99).unwrap();
            let m = kept.len();
            let mut w_sub = Array2::zeros((m, m));
            for (i, &oi) in kept.iter().enumerate() {
                for (j, &oj) in kept.iter().enumerate() {
                    w_sub[[i, j]] = g.adjacency()[[oi, oj]];
                }
            }
            let direct = laplacian(&Graph::from_adjacency(w_sub).unwrap());
            let via_sub = laplacian(&sub);
            assert_eq!(direct.matrix(), via_sub.matrix());
        }
    }

    #[test]
    fn adjacency_validation() {
        let asym = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(Graph::from_adjacency(asym).is_err());
        let selfloop = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(Graph::from_adjacency(selfloop).is_err());
        let negative = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(Graph::from_adjacency(negative).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_grid_graph(3, 4).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back = Graph::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(back.adjacency(), g.adjacency());
    }

    #[test]
    fn edge_list_parse_errors() {
        assert!(matches!(
            Graph::read_edge_list("".as_bytes()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Graph::read_edge_list("3\n0 9 1.0\n".as_bytes()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Graph::read_edge_list("3\n0 1\n".as_bytes()),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Graph::read_edge_list("2\n0 1 1.0\n0 1 2.0\n".as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn laplacian_content_hash_distinguishes() {
        let a = laplacian(&build_grid_graph(3, 3).unwrap());
        let b = laplacian(&build_grid_graph(3, 3).unwrap());
        let c = laplacian(&build_grid_graph(3, 4).unwrap());
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
