//! Undirected weighted communication graphs.
//!
//! The weight matrix uses the sign convention `L_ij > 0` for edges and
//! `L_ii = −Σ_{j≠i} L_ij`, i.e. the negated graph Laplacian. Its eigenvalues
//! are all `≤ 0`, the largest is `0` and the second largest, `ϱ₂`, is strictly
//! negative exactly when the graph is connected. Node indices are 0-based.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    rho2: f64,
}

impl Topology {
    /// Builds the weight matrix from an undirected edge list `(i, j, w)`.
    pub fn build(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut weights = DMatrix::<f64>::zeros(n, n);
        let mut seen = BTreeSet::new();
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Topology(format!("edge ({i}, {j}) references a node outside 0..{n}")));
            }
            if i == j {
                return Err(Error::Topology(format!("self-loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Topology(format!("edge ({i}, {j}) has nonpositive weight {w}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Topology(format!("duplicate edge ({i}, {j})")));
            }
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| weights[(i, j)]).sum();
            weights[(i, i)] = -off;
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && weights[(i, j)] > 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        if !is_connected(&neighbors) {
            return Err(Error::Topology("graph is disconnected".into()));
        }
        let rho2 = if n == 1 {
            0.0
        } else {
            let mut eig: Vec<f64> = SymmetricEigen::new(weights.clone()).eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            eig[1]
        };
        Ok(Self { n, weights, neighbors, rho2 })
    }

    pub fn ring(n: usize, weight: f64) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1, weight)],
            _ => (0..n).map(|i| (i, (i + 1) % n, weight)).collect(),
        };
        Self::build(n, &edges)
    }

    pub fn path(n: usize, weight: f64) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, weight)).collect();
        Self::build(n, &edges)
    }

    pub fn complete(n: usize, weight: f64) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, weight))).collect();
        Self::build(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Neighbors of `i` with their edge weights, in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Second largest eigenvalue of the weight matrix. A single node has no
    /// second eigenvalue; `0.0` is reported.
    pub fn second_eigenvalue(&self) -> f64 {
        self.rho2
    }

    /// `Σ_{j∈N_i} L_ij (v_j − v_i)` for every `i`.
    pub fn mix(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.mix_at(i, v)).collect()
    }

    #[inline]
    pub fn mix_at(&self, i: usize, v: &[f64]) -> f64 {
        self.neighbors[i].iter().map(|&(j, w)| w * (v[j] - v[i])).sum()
    }

    /// Dense product `L v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.weights[(i, j)] * v[j]).sum()).collect()
    }
}

fn is_connected(neighbors: &[Vec<(usize, f64)>]) -> bool {
    let mut seen = vec![false; neighbors.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &(j, _) in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn ring_spectrum() {
        let t = Topology::ring(5, 1.0).unwrap();
        // circulant eigenvalues 2cos(2πm/5) − 2
        let expected = 2.0 * (2.0 * PI / 5.0).cos() - 2.0;
        assert!((t.second_eigenvalue() - expected).abs() < 1e-12);
        assert!((t.second_eigenvalue() + 1.3820).abs() < 1e-4);
        let half = Topology::ring(5, 0.5).unwrap();
        assert!((half.second_eigenvalue() + 0.6910).abs() < 1e-4);
    }

    #[test]
    fn complete_and_path_spectrum() {
        let k3 = Topology::complete(3, 1.0).unwrap();
        assert!((k3.second_eigenvalue() + 3.0).abs() < 1e-12);
        let mut eig: Vec<f64> = SymmetricEigen::new(k3.weights().clone()).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        assert!(eig[0].abs() < 1e-12 && (eig[2] + 3.0).abs() < 1e-12);

        let p2 = Topology::path(2, 0.7).unwrap();
        assert!((p2.second_eigenvalue() + 1.4).abs() < 1e-12);
    }

    #[test]
    fn structure_invariants() {
        let t = Topology::build(4, &[(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0), (3, 0, 0.25), (0, 2, 1.5)]).unwrap();
        let w = t.weights();
        assert_eq!(w, &w.transpose());
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| w[(i, j)]).sum();
            let col: f64 = (0..4).map(|j| w[(j, i)]).sum();
            assert!(row.abs() < 1e-12 && col.abs() < 1e-12);
        }
        assert_eq!(w[(0, 0)], -(0.5 + 0.25 + 1.5));
        assert!(t.second_eigenvalue() < 0.0);
        assert_eq!(t.neighbors(0), &[(1, 0.5), (2, 1.5), (3, 0.25)]);
    }

    #[test]
    fn build_errors() {
        assert!(Topology::build(3, &[(0, 1, 1.0)]).is_err());
        assert!(Topology::build(2, &[(0, 0, 1.0), (0, 1, 1.0)]).is_err());
        assert!(Topology::build(2, &[(0, 1, 0.0)]).is_err());
        assert!(Topology::build(2, &[(0, 1, -1.0)]).is_err());
        assert!(Topology::build(2, &[(0, 1, 1.0), (1, 0, 1.0)]).is_err());
        assert!(Topology::build(2, &[(0, 2, 1.0)]).is_err());
        assert!(Topology::build(0, &[]).is_err());
    }

    #[test]
    fn single_node() {
        let t = Topology::build(1, &[]).unwrap();
        assert_eq!(t.second_eigenvalue(), 0.0);
        assert_eq!(t.mix(&[3.0]), vec![0.0]);
    }

    proptest! {
        #[test]
        fn consensus_null_space_and_conservation(
            c in -1e3f64..1e3,
            v in proptest::collection::vec(-1e3f64..1e3, 6),
            w in proptest::collection::vec(0.01f64..5.0, 6),
        ) {
            let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6, w[i])).collect();
            let t = Topology::build(6, &edges).unwrap();
            let lc = t.apply(&[c; 6]);
            prop_assert!(lc.iter().all(|x| x.abs() <= 1e-12 * c.abs().max(1.0) * 10.0));
            let lv = t.apply(&v);
            let scale: f64 = v.iter().map(|x| x.abs()).sum::<f64>() * 10.0;
            prop_assert!(lv.iter().sum::<f64>().abs() <= 1e-12 * scale.max(1.0) * 10.0);
            let mixed = t.mix(&v);
            for i in 0..6 {
                prop_assert!((mixed[i] - lv[i]).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
