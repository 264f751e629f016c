//! Directed interaction graphs and the Lyapunov matrices built from them.
//!
//! Agents are indexed from 0 internally; agent 0 is the leader. The weight
//! `a[(i, j)] > 0` means agent `i` receives information from agent `j`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Index of the leader agent.
pub const LEADER: usize = 0;

/// Threshold used for the positive-definiteness checks.
pub const PD_THRESHOLD: f64 = 1e-12;

/// A weighted directed edge. `receiver` listens to `sender`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(receiver: usize, sender: usize, weight: f64) -> Self {
        Self {
            receiver,
            sender,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedTopology {
    weights: DMatrix<f64>,
}

impl DirectedTopology {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::invalid(
                "adjacency matrix must be square and non-empty",
            ));
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("self-loop at agent {}", i + 1)));
            }
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!(
                "edge weights must be finite and nonnegative, got {w}"
            )));
        }
        Ok(Self { weights })
    }

    /// Graph on `n` agents from 0-based edges. Repeated edges accumulate.
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("topology needs at least one agent"));
        }
        let mut weights = DMatrix::zeros(n, n);
        for e in edges {
            if e.receiver >= n || e.sender >= n {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) references an agent outside 1..={n}",
                    e.receiver + 1,
                    e.sender + 1
                )));
            }
            if e.receiver == e.sender {
                return Err(Error::invalid(format!(
                    "self-loop at agent {}",
                    e.receiver + 1
                )));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) has negative or non-finite weight {}",
                    e.receiver + 1,
                    e.sender + 1,
                    e.weight
                )));
            }
            weights[(e.receiver, e.sender)] += e.weight;
        }
        Self::new(weights)
    }

    /// Directed chain `1 → 2 → … → n` with unit weights.
    pub fn chain(n: usize) -> Result<Self> {
        let edges: Vec<Edge> = (1..n).map(|i| Edge::new(i, i - 1, 1.0)).collect();
        Self::from_edges(n, &edges)
    }

    /// Chain plus a two-hop shortcut into every agent from the third on:
    /// agent `i` hears `i − 1` and `i − 2`.
    pub fn chain_with_shortcuts(n: usize) -> Result<Self> {
        let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(i, i - 1, 1.0)).collect();
        edges.extend((2..n).map(|i| Edge::new(i, i - 2, 1.0)));
        Self::from_edges(n, &edges)
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, receiver: usize, sender: usize) -> f64 {
        self.weights[(receiver, sender)]
    }

    /// In-neighbors of `agent` with their weights.
    pub fn neighbors(&self, agent: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .row(agent)
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .collect::<Vec<_>>()
            .into_iter()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let n = self.agents();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    out.push(Edge::new(i, j, w));
                }
            }
        }
        out
    }
}

/// Graph Laplacian `L` with `l_ii = Σ_j a_ij`, `l_ij = −a_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }
}

pub fn build_laplacian(topology: &DirectedTopology) -> LaplacianMatrix {
    let a = topology.weights();
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        // In-degree: the diagonal of `a` is zero, so the full row sum is the
        // sum over neighbors.
        l[(i, i)] = a.row(i).iter().sum();
    }
    LaplacianMatrix(l)
}

/// `Λ = diag(1, 0, …, 0)`.
pub fn leader_selector(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    if n > 0 {
        m[(LEADER, LEADER)] = 1.0;
    }
    m
}

/// True iff every agent is reachable from `root` along the direction
/// information flows (sender → receiver).
pub fn has_rooted_spanning_tree(topology: &DirectedTopology, root: usize) -> bool {
    let n = topology.agents();
    if root >= n {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(j) = queue.pop_front() {
        for (i, flag) in seen.iter_mut().enumerate() {
            if !*flag && topology.weight(i, j) > 0.0 {
                *flag = true;
                queue.push_back(i);
            }
        }
    }
    seen.into_iter().all(|v| v)
}

/// `q`, `p`, `P`, `Q` of the diagonal Lyapunov construction for `L + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremOneMatrices {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    /// Diagonal of `P`, i.e. `p_i / q_i`.
    pub p_diag: DVector<f64>,
    /// `P(L + B) + (L + B)ᵀP`.
    pub q_matrix: DMatrix<f64>,
    pub min_eig_p: f64,
    /// Smallest eigenvalue of `(Q + Qᵀ)/2`.
    pub min_eig_q: f64,
}

impl TheoremOneMatrices {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.p_diag)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eig_p > PD_THRESHOLD && self.min_eig_q > PD_THRESHOLD
    }
}

/// Builds `P` and `Q` for `L + diag(b)`.
///
/// Fails with [`Error::NotSpanningTree`] when `L + B` is singular, which
/// happens exactly when some agent is cut off from every pinned agent.
pub fn theorem1_matrices(l: &LaplacianMatrix, b: &DVector<f64>) -> Result<TheoremOneMatrices> {
    let n = l.size();
    if b.len() != n {
        return Err(Error::invalid(format!(
            "pinning vector has {} entries for {n} agents",
            b.len()
        )));
    }
    if b.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("pinning gains must be nonnegative"));
    }
    let m = l.matrix() + DMatrix::from_diagonal(b);
    let sv = m.singular_values();
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::NotSpanningTree);
    }
    let ones = DVector::from_element(n, 1.0);
    let lu = m.clone().lu();
    let q = lu.solve(&ones).ok_or(Error::NotSpanningTree)?;
    let p = m
        .transpose()
        .lu()
        .solve(&ones)
        .ok_or(Error::NotSpanningTree)?;
    if q.iter().chain(p.iter()).any(|v| *v <= 0.0) {
        return Err(Error::NotSpanningTree);
    }
    let p_diag = p.zip_map(&q, |pi, qi| pi / qi);
    let p_mat = DMatrix::from_diagonal(&p_diag);
    let q_matrix = &p_mat * &m + m.transpose() * &p_mat;
    let sym = (&q_matrix + q_matrix.transpose()) * 0.5;
    let min_eig_q = SymmetricEigen::new(sym).eigenvalues.min();
    Ok(TheoremOneMatrices {
        min_eig_p: p_diag.min(),
        q,
        p,
        p_diag,
        q_matrix,
        min_eig_q,
    })
}

/// `M ⊗ I₂`.
pub fn extend_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.kronecker(&DMatrix::<f64>::identity(2, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_digraph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DirectedTopology {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(density) {
                    edges.push(Edge::new(i, j, rng.random_range(0.1..2.0)));
                }
            }
        }
        DirectedTopology::from_edges(n, &edges).unwrap()
    }

    // Reachability by repeated relaxation over the full edge list; a different
    // route from the breadth-first search under test.
    fn reachable_all(topology: &DirectedTopology, root: usize) -> bool {
        let n = topology.agents();
        let mut reach = vec![false; n];
        reach[root] = true;
        for _ in 0..n {
            for e in topology.edges() {
                if reach[e.sender] {
                    reach[e.receiver] = true;
                }
            }
        }
        reach.iter().all(|&r| r)
    }

    #[test]
    fn two_node_laplacian() {
        let t = DirectedTopology::from_edges(2, &[Edge::new(1, 0, 1.0)]).unwrap();
        let l = build_laplacian(&t);
        assert_eq!(
            l.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 1.0])
        );
    }

    #[test]
    fn three_cycle_laplacian() {
        // 1 hears 3, 2 hears 1, 3 hears 2.
        let edges = [
            Edge::new(0, 2, 1.0),
            Edge::new(1, 0, 1.0),
            Edge::new(2, 1, 1.0),
        ];
        let t = DirectedTopology::from_edges(3, &edges).unwrap();
        let l = build_laplacian(&t);
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(l.matrix(), &expected);
        let ones = DVector::from_element(3, 1.0);
        assert_eq!(l.matrix() * ones, DVector::zeros(3));
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..9);
            let t = random_digraph(&mut rng, n, 0.4);
            let l = build_laplacian(&t);
            for i in 0..n {
                let sum: f64 = l.matrix().row(i).iter().sum();
                assert!(sum.abs() <= 1e-15 * (1.0 + l.matrix()[(i, i)]));
                assert!(l.matrix()[(i, i)] >= 0.0);
                for j in 0..n {
                    if i != j {
                        assert!(l.matrix()[(i, j)] <= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(DirectedTopology::from_edges(2, &[Edge::new(1, 0, -1.0)]).is_err());
        assert!(DirectedTopology::from_edges(2, &[Edge::new(1, 1, 1.0)]).is_err());
        assert!(DirectedTopology::from_edges(2, &[Edge::new(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn spanning_tree_detection() {
        assert!(has_rooted_spanning_tree(
            &DirectedTopology::chain(7).unwrap(),
            0
        ));
        assert!(!has_rooted_spanning_tree(
            &DirectedTopology::chain(7).unwrap(),
            3
        ));
        let split = DirectedTopology::from_edges(2, &[]).unwrap();
        assert!(!has_rooted_spanning_tree(&split, 0));
        assert!(has_rooted_spanning_tree(
            &DirectedTopology::chain(1).unwrap(),
            0
        ));
    }

    #[test]
    fn spanning_tree_matches_relaxation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let t = random_digraph(&mut rng, 5, 0.25);
            let root = rng.random_range(0..5);
            assert_eq!(has_rooted_spanning_tree(&t, root), reachable_all(&t, root));
        }
    }

    #[test]
    fn scalar_theorem_one() {
        let t = DirectedTopology::chain(1).unwrap();
        let m = theorem1_matrices(&build_laplacian(&t), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(m.q[0], 1.0);
        assert_eq!(m.p[0], 1.0);
        assert_eq!(m.p_diag[0], 1.0);
        assert_eq!(m.q_matrix[(0, 0)], 2.0);
    }

    #[test]
    fn two_node_chain_theorem_one() {
        // L + Λ = [[1, 0], [-1, 1]]: q = [1, 2], p = [2, 1], P = diag(2, 1/2),
        // Q = [[4, -1/2], [-1/2, 1]] with det 3.75 and trace 5.
        let t = DirectedTopology::chain(2).unwrap();
        let m = theorem1_matrices(&build_laplacian(&t), &leader_selector(2).diagonal()).unwrap();
        assert!((&m.q - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-14);
        assert!((&m.p - DVector::from_vec(vec![2.0, 1.0])).amax() < 1e-14);
        assert!((&m.p_diag - DVector::from_vec(vec![2.0, 0.5])).amax() < 1e-14);
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, -0.5, -0.5, 1.0]);
        assert!((&m.q_matrix - expected).amax() < 1e-14);
        let (tr, det) = (5.0_f64, 3.75_f64);
        let lo = (tr - (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert!((m.min_eig_q - lo).abs() < 1e-12);
        assert!(m.is_positive_definite());
    }

    #[test]
    fn singular_pinning_is_reported() {
        let t = DirectedTopology::from_edges(3, &[Edge::new(1, 0, 1.0)]).unwrap();
        let r = theorem1_matrices(&build_laplacian(&t), &leader_selector(3).diagonal());
        assert!(matches!(r, Err(Error::NotSpanningTree)));
    }

    #[test]
    fn random_rooted_graphs_give_positive_definite_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tested = 0;
        while tested < 100 {
            let n = rng.random_range(1..=10);
            let mut t = random_digraph(&mut rng, n, 0.3);
            // Leader hears nobody.
            let mut w = t.weights().clone();
            w.row_mut(LEADER).fill(0.0);
            t = DirectedTopology::new(w).unwrap();
            if !has_rooted_spanning_tree(&t, LEADER) {
                continue;
            }
            tested += 1;
            let m =
                theorem1_matrices(&build_laplacian(&t), &leader_selector(n).diagonal()).unwrap();
            assert!(m.min_eig_p > 1e-12 && m.min_eig_q > 1e-12);
            assert!((&m.q_matrix - m.q_matrix.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn kronecker_extension() {
        let one = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(
            extend_matrix(&one),
            DMatrix::from_diagonal_element(2, 2, 3.0)
        );
        let l = build_laplacian(&DirectedTopology::chain(2).unwrap());
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                -1.0, 0.0, 1.0, 0.0, //
                0.0, -1.0, 0.0, 1.0,
            ],
        );
        assert_eq!(extend_matrix(l.matrix()), expected);
    }

    #[test]
    fn kronecker_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let lhs = extend_matrix(&a) * extend_matrix(&b);
        let rhs = extend_matrix(&(&a * &b));
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn diagonal_extension_commutes_with_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let p = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.1..5.0)));
            let mut r = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                let block = Matrix2::from_fn(|_, _| rng.random_range(-2.0..2.0));
                r.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(&block);
            }
            let pe = extend_matrix(&p);
            assert!((&pe * &r - &r * &pe).amax() < 1e-12);
        }
    }
}
