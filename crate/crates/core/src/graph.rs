//! Graph and Laplacian algebra for the DC grid and the controller
//! communication networks.
//!
//! All three networks in this crate (HVDC lines, the `eta` consensus graph
//! and the `phi` consensus graph) are static, undirected, connected and
//! positively weighted, so a single [`Topology`] type covers them. The
//! algebra is dense: the systems of interest have at most a few hundred
//! nodes and the analysis needs full eigendecompositions anyway.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node count must be at least 1")]
    EmptyGraph,
    #[error("edge ({i}, {j}) is out of range for {n} nodes")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}) has non-positive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("graph is not connected (node {0} unreachable from node 0)")]
    Disconnected(usize),
    #[error("orthonormal complement requires at least 2 nodes, got {0}")]
    InvalidDimension(usize),
    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
}

/// An undirected weighted edge, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// A static, undirected, connected graph with strictly positive edge
/// weights. Edge weight units depend on the network: per-unit conductance
/// `1/R_ij` for the DC grid, controller gains for the communication graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: Vec<Edge>,
}

impl Topology {
    /// Builds a topology from `(i, j, weight)` triples. Endpoint order is
    /// normalized to `i < j`; self-loops, duplicates, non-positive weights
    /// and disconnected graphs are rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut normalized: Vec<Edge> = Vec::new();
        for (i, j, weight) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EdgeOutOfRange { i, j, n });
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            if !(weight > 0.0) {
                return Err(GraphError::NonPositiveWeight { i, j, weight });
            }
            if normalized.iter().any(|e| e.i == i && e.j == j) {
                return Err(GraphError::DuplicateEdge { i, j });
            }
            normalized.push(Edge { i, j, weight });
        }
        let topo = Self { n, edges: normalized };
        topo.check_connected()?;
        Ok(topo)
    }

    fn check_connected(&self) -> Result<(), GraphError> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                let u = if e.i == v {
                    e.j
                } else if e.j == v {
                    e.i
                } else {
                    continue;
                };
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(GraphError::Disconnected(v)),
            None => Ok(()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of node `i` with the connecting edge weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.i == i {
                Some((e.j, e.weight))
            } else if e.j == i {
                Some((e.i, e.weight))
            } else {
                None
            }
        })
    }

    /// Same edge set with every weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self, GraphError> {
        Self::new(self.n, self.edges.iter().map(|e| (e.i, e.j, k * e.weight)))
    }

    /// The n x m vertex-edge incidence matrix. The column for edge `(i, j)`
    /// with `i < j` carries `+1` at row `i` and `-1` at row `j`, so that
    /// `B W B^T` equals [`Topology::weighted_laplacian`].
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.i, k)] = 1.0;
            b[(e.j, k)] = -1.0;
        }
        b
    }

    /// The diagonal matrix of edge weights, ordered like
    /// [`Topology::incidence_matrix`] columns.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.edges.len(),
            self.edges.iter().map(|e| e.weight),
        ))
    }

    /// The weighted Laplacian: `L_ii = sum of incident weights`,
    /// `L_ij = -w_ij` for edges, zero elsewhere.
    pub fn weighted_laplacian(&self) -> LaplacianMatrix {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.i, e.i)] += e.weight;
            l[(e.j, e.j)] += e.weight;
            l[(e.i, e.j)] -= e.weight;
            l[(e.j, e.i)] -= e.weight;
        }
        LaplacianMatrix(l)
    }
}

/// Dense symmetric weighted Laplacian of a connected graph: positive
/// semidefinite with kernel spanned by the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for LaplacianMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Deterministic n x (n-1) matrix `S` with `S^T S = I`, `S^T 1 = 0` and
/// `S S^T = I - (1/n) 1 1^T`, i.e. `[1/sqrt(n) S]` is orthonormal.
///
/// Built from the Householder reflector that maps the first canonical basis
/// vector onto `1/sqrt(n)`; columns 2..n of the reflector form `S`. The
/// reflector is unique, so the sign convention is fixed.
pub fn orthonormal_complement(n: usize) -> Result<DMatrix<f64>, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidDimension(n));
    }
    Ok(ones_complement_unchecked(n))
}

/// Like [`orthonormal_complement`] but yields an n x 0 matrix for `n = 1`,
/// which is what the reduced closed-loop assembly needs for a single node.
pub(crate) fn ones_complement_unchecked(n: usize) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::zeros(1, 0);
    }
    let target = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut u = target;
    u[0] -= 1.0;
    // |u[0]| >= 1 - 1/sqrt(2), no cancellation risk
    let scale = 2.0 / u.dot(&u);
    let h = DMatrix::identity(n, n) - (&u * u.transpose()) * scale;
    h.columns(1, n - 1).into_owned()
}

/// Looks for a scalar `k` with `La = k * Lb`, within a relative tolerance of
/// `1e-9` on the largest entry of `La`. Returns `None` when the Laplacians
/// are not proportional (different sparsity or mismatched ratios) or when
/// the only candidate factor is non-positive.
pub fn proportionality_factor(
    la: &LaplacianMatrix,
    lb: &LaplacianMatrix,
) -> Result<Option<f64>, GraphError> {
    const REL_TOL: f64 = 1e-9;
    if la.dim() != lb.dim() {
        return Err(GraphError::DimensionMismatch(la.dim(), lb.dim()));
    }
    let norm_a = la.as_matrix().amax();
    let norm_b = lb.as_matrix().amax();
    if norm_a == 0.0 || norm_b == 0.0 {
        // all-zero Laplacian only happens for n = 1; call them proportional
        return Ok(if norm_a == norm_b { Some(1.0) } else { None });
    }
    // estimate k at the largest entry of Lb, then verify globally
    let (r, c) = lb
        .as_matrix()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(idx, _)| (idx % lb.dim(), idx / lb.dim()))
        .expect("non-empty matrix");
    let k = la.as_matrix()[(r, c)] / lb.as_matrix()[(r, c)];
    if !(k > 0.0) {
        return Ok(None);
    }
    let residual = (la.as_matrix() - lb.as_matrix() * k).amax();
    if residual <= REL_TOL * norm_a {
        Ok(Some(k))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{table1_dc_lines, testgrid6};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn path2() -> Topology {
        Topology::new(2, [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn incidence_two_node_path() {
        let t = Topology::new(2, [(0, 1, 0.7)]).unwrap();
        let b = t.incidence_matrix();
        assert_eq!(b.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn incidence_triangle_columns_sum_to_zero() {
        let t = Topology::new(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]).unwrap();
        let b = t.incidence_matrix();
        assert_eq!(b.shape(), (3, 3));
        for c in 0..3 {
            assert_eq!(b.column(c).sum(), 0.0);
        }
    }

    #[test]
    fn incidence_matches_laplacian_on_table1_grid() {
        let t = Topology::new(6, table1_dc_lines().map(|(i, j, r)| (i, j, 1.0 / r))).unwrap();
        assert_eq!(t.edge_count(), 10);
        let b = t.incidence_matrix();
        assert_eq!(b.shape(), (6, 10));
        let bwbt = &b * t.weight_matrix() * b.transpose();
        let l = t.weighted_laplacian();
        assert!((bwbt - l.as_matrix()).amax() <= 1e-12);
    }

    #[test]
    fn laplacian_two_node_path() {
        let l = path2().weighted_laplacian();
        assert_eq!(l.as_matrix().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn laplacian_table1_corner_entry() {
        // node 1 connects to nodes 2 and 3 through 0.0586 p.u. lines
        let sd = testgrid6();
        let l = sd.dc_topology().weighted_laplacian();
        assert_relative_eq!(l[(0, 0)], 2.0 / 0.0586, max_relative = 1e-14);
        assert_relative_eq!(l[(0, 0)], 34.13, max_relative = 1e-4);
    }

    #[test]
    fn algebraic_connectivity_positive() {
        let sd = testgrid6();
        let eig = sd
            .dc_topology()
            .weighted_laplacian()
            .as_matrix()
            .clone()
            .symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-10);
        assert!(ev[1] > 1e-6);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            Topology::new(3, [(0, 0, 1.0)]),
            Err(GraphError::SelfLoop(0))
        ));
        assert!(matches!(
            Topology::new(3, [(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0)]),
            Err(GraphError::DuplicateEdge { i: 0, j: 1 })
        ));
        assert!(matches!(
            Topology::new(3, [(0, 1, 0.0), (1, 2, 1.0)]),
            Err(GraphError::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            Topology::new(3, [(0, 1, 1.0)]),
            Err(GraphError::Disconnected(2))
        ));
        assert!(matches!(
            Topology::new(2, [(0, 5, 1.0)]),
            Err(GraphError::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn complement_two_nodes() {
        let s = orthonormal_complement(2).unwrap();
        let r = 1.0 / 2.0_f64.sqrt();
        assert_relative_eq!(s[(0, 0)], r, max_relative = 1e-15);
        assert_relative_eq!(s[(1, 0)], -r, max_relative = 1e-15);
    }

    #[test]
    fn complement_identities_n6() {
        let s = orthonormal_complement(6).unwrap();
        let sts = s.transpose() * &s;
        assert!((sts - DMatrix::<f64>::identity(5, 5)).amax() <= 1e-12);
        let ones = DVector::from_element(6, 1.0);
        assert!((s.transpose() * &ones).amax() <= 1e-12);
        assert!((&s * s.transpose() * &ones).amax() <= 1e-12);
    }

    #[test]
    fn complement_rejects_small_n() {
        assert!(matches!(
            orthonormal_complement(1),
            Err(GraphError::InvalidDimension(1))
        ));
    }

    #[test]
    fn proportionality_detects_table2_ratio() {
        let sd = testgrid6();
        let k = proportionality_factor(
            &sd.phi_topology().weighted_laplacian(),
            &sd.dc_topology().weighted_laplacian(),
        )
        .unwrap();
        assert_relative_eq!(k.unwrap(), 15.0, max_relative = 1e-12);
    }

    #[test]
    fn proportionality_identity_and_mismatch() {
        let l = path2().weighted_laplacian();
        assert_relative_eq!(
            proportionality_factor(&l, &l).unwrap().unwrap(),
            1.0,
            max_relative = 1e-15
        );

        let triangle = Topology::new(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let path = Topology::new(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(
            proportionality_factor(
                &triangle.weighted_laplacian(),
                &path.weighted_laplacian()
            )
            .unwrap(),
            None
        );

        assert!(matches!(
            proportionality_factor(&l, &triangle.weighted_laplacian()),
            Err(GraphError::DimensionMismatch(2, 3))
        ));
    }

    proptest! {
        #[test]
        fn laplacian_kernel_and_incidence_identity(n in 2usize..20, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = crate::synth::random_connected_topology(&mut rng, n, 0.1, 10.0);
            let l = t.weighted_laplacian();
            // symmetric, zero row sums
            prop_assert!((l.as_matrix() - l.as_matrix().transpose()).amax() <= 1e-12);
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((l.as_matrix() * &ones).amax() <= 1e-12 * l.as_matrix().amax().max(1.0));
            // PSD with rank n-1
            let mut ev: Vec<f64> = l.as_matrix().clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            prop_assert!(ev[0] >= -1e-9 * l.as_matrix().amax());
            prop_assert!(ev[1] > 0.0);
            // B W B^T = L
            let b = t.incidence_matrix();
            prop_assert!((&b * t.weight_matrix() * b.transpose() - l.as_matrix()).amax() <= 1e-12 * l.as_matrix().amax().max(1.0));
        }

        #[test]
        fn complement_identities_hold(n in 2usize..=50) {
            let s = orthonormal_complement(n).unwrap();
            let eye = DMatrix::<f64>::identity(n - 1, n - 1);
            prop_assert!((s.transpose() * &s - eye).amax() <= 1e-12);
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((s.transpose() * &ones).amax() <= 1e-12);
            let centering = DMatrix::<f64>::identity(n, n)
                - DMatrix::from_element(n, n, 1.0 / n as f64);
            prop_assert!((&s * s.transpose() - centering).amax() <= 1e-12);
        }

        #[test]
        fn proportionality_recovers_scale(n in 2usize..15, seed in 0u64..1000, k in 1e-6f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = crate::synth::random_connected_topology(&mut rng, n, 0.1, 10.0);
            let lb = t.weighted_laplacian();
            let la = t.scaled(k).unwrap().weighted_laplacian();
            let found = proportionality_factor(&la, &lb).unwrap();
            prop_assert!(found.is_some());
            prop_assert!((found.unwrap() - k).abs() <= 1e-9 * k.max(1.0));
        }
    }
}
