//! Row-stochastic mixing matrices confined to a graph's support.
//!
//! `A[i][j]` is the weight agent `i` puts on the message from `j`; it may
//! be nonzero only when `(j, i)` is an edge. The feasible set is the product
//! of one probability simplex per row.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::graph::DirectedGraph;
use crate::io;
use crate::{Error, Result};

/// Row sums must equal 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    graph: Arc<DirectedGraph>,
    weights: DMatrix<f64>,
}

impl MixingMatrix {
    /// Validates `weights` against the feasible set of `graph`.
    pub fn new(graph: Arc<DirectedGraph>, weights: DMatrix<f64>) -> Result<Self> {
        check_feasible(&graph, &weights)?;
        Ok(Self { graph, weights })
    }

    pub fn graph(&self) -> &Arc<DirectedGraph> {
        &self.graph
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> DMatrix<f64> {
        self.weights
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Weight of edge `from -> to`, i.e. `A[to][from]`.
    pub fn edge_weight(&self, from: usize, to: usize) -> f64 {
        self.weights[(to, from)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.weights.row(i).iter().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        io::matrix_to_csv(&self.weights)
    }

    pub fn from_csv(graph: Arc<DirectedGraph>, text: &str) -> Result<Self> {
        Self::new(graph, io::matrix_from_csv(text)?)
    }

    /// Graphviz rendering; every support edge (self-loops included) is
    /// labeled with its weight to 4 decimals.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph mixing {\n");
        for i in 0..self.n() {
            let _ = writeln!(s, "  {i};");
        }
        for (from, to) in self.graph.edges() {
            let _ = writeln!(
                s,
                "  {from} -> {to} [label=\"{:.4}\"];",
                self.edge_weight(from, to)
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Checks shape, support confinement, entry range and row sums.
pub fn check_feasible(graph: &DirectedGraph, w: &DMatrix<f64>) -> Result<()> {
    let n = graph.n();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "mixing matrix side",
            expected: n,
            got: if w.nrows() != n { w.nrows() } else { w.ncols() },
        });
    }
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let a = w[(i, j)];
            if !graph.has_edge(j, i) && a != 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "A[{i}][{j}] = {a} but ({j}, {i}) is not an edge"
                )));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidWeights(format!("A[{i}][{j}] = {a} outside [0, 1]")));
            }
            sum += a;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidWeights(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

fn require_strongly_connected(graph: &DirectedGraph) -> Result<()> {
    if graph.is_strongly_connected() {
        Ok(())
    } else {
        Err(Error::NotStronglyConnected)
    }
}

/// `A[i][j] = 1 / (|N_i| + 1)` on the support of row `i`, where `|N_i|`
/// counts in-neighbors excluding `i` itself.
pub fn uniform_in_weights(graph: Arc<DirectedGraph>) -> Result<MixingMatrix> {
    require_strongly_connected(&graph)?;
    let n = graph.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let a = 1.0 / (graph.in_degree(i) + 1) as f64;
        for &j in graph.in_neighbors(i) {
            w[(i, j)] = a;
        }
    }
    MixingMatrix::new(graph, w)
}

/// Metropolis rule with in-degrees:
/// `A[i][j] = 1 / (1 + max(deg_in(i), deg_in(j)))` for in-neighbors `j != i`,
/// and the self-weight takes the remainder. On symmetric graphs this is the
/// usual Metropolis–Hastings construction.
pub fn metropolis_weights(graph: Arc<DirectedGraph>) -> Result<MixingMatrix> {
    require_strongly_connected(&graph)?;
    let n = graph.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in graph.in_neighbors(i) {
            if j != i {
                let a = 1.0 / (1 + graph.in_degree(i).max(graph.in_degree(j))) as f64;
                w[(i, j)] = a;
                off += a;
            }
        }
        let self_weight = 1.0 - off;
        if self_weight < 0.0 {
            return Err(Error::InvalidWeights(format!(
                "negative Metropolis self-weight {self_weight} at agent {i}"
            )));
        }
        w[(i, i)] = self_weight;
    }
    MixingMatrix::new(graph, w)
}
