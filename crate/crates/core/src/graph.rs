//! Directed communication graphs.
//!
//! An edge `(i, j)` means agent `i` sends to agent `j`, so `i` is an
//! in-neighbor of `j`. Every graph carries all self-loops; in-neighbor
//! lists therefore always contain the agent itself.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::rng::{stream_rng, Domain};
use crate::{Error, Result};

/// Maximum number of regenerations attempted by [`generate_er_digraph`].
pub const ER_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
}

/// Reachability certificate from agent 0.
///
/// `forward[v]` is true when 0 reaches `v`, `backward[v]` when `v` reaches 0.
/// The graph is strongly connected iff both sets cover every agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectivity {
    pub strongly_connected: bool,
    pub forward: Vec<bool>,
    pub backward: Vec<bool>,
}

impl DirectedGraph {
    /// Builds a graph on `n` agents. Self-loops are added automatically;
    /// duplicate edges are merged.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one agent".into()));
        }
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            set.insert((i, j));
        }
        let mut in_neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            in_neighbors[j].push(i);
        }
        for list in &mut in_neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set,
            in_neighbors,
        })
    }

    /// Complete digraph with self-loops.
    pub fn complete(n: usize) -> Result<Self> {
        Self::new(
            n,
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))),
        )
    }

    /// Directed cycle visiting agents in the given order:
    /// `order[0] -> order[1] -> ... -> order[m-1] -> order[0]`.
    pub fn directed_cycle(order: &[usize]) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &v in order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidGraph("cycle order must be a permutation".into()));
            }
        }
        Self::new(n, (0..n).map(|t| (order[t], order[(t + 1) % n])))
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Result<Self> {
        Self::directed_cycle(&(0..n).collect::<Vec<_>>())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// In-neighbors of `i`, including `i`, sorted ascending.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Number of in-neighbors of `i` excluding the self-loop.
    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors[i].len() - 1
    }

    /// Recomputes in-neighbor lists from the edge set.
    pub fn transpose_view(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            lists[j].push(i);
        }
        lists
    }

    /// Two-pass reachability from agent 0 (forward on edges, backward on
    /// reversed edges). Aperiodicity needs no separate test: every agent
    /// has a self-loop, so every cycle length gcd is 1.
    pub fn strong_connectivity(&self) -> Connectivity {
        let mut out_neighbors = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            out_neighbors[i].push(j);
        }
        let forward = reach(&out_neighbors, 0);
        let backward = reach(&self.in_neighbors, 0);
        let strongly_connected = forward.iter().chain(&backward).all(|&b| b);
        Connectivity {
            strongly_connected,
            forward,
            backward,
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.strong_connectivity().strongly_connected
    }

    /// Parses an edge list: one `i j` pair per line, 0-based, `#` comments.
    /// The agent count is `n` if given, otherwise one past the largest index.
    pub fn from_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_index = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `i j`", lineno + 1)))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let (i, j) = (next()?, next()?);
            if parts.next().is_some() {
                return Err(Error::Parse(format!("line {}: trailing tokens", lineno + 1)));
            }
            max_index = max_index.max(i).max(j);
            edges.push((i, j));
        }
        let n = n.unwrap_or(if edges.is_empty() { 0 } else { max_index + 1 });
        Self::new(n, edges)
    }

    /// Edge list including self-loops, with a header comment.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# n = {}\n", self.n);
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Directed Erdős–Rényi graph: every ordered pair `(i, j)`, `i != j`, is an
/// edge independently with probability `p`. Disconnected draws are
/// discarded and redrawn on the next sub-stream.
pub fn generate_er_digraph(n: usize, p: f64, seed: u64) -> Result<DirectedGraph> {
    if n < 2 {
        return Err(Error::param("n", "ER digraph needs at least two agents"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("{p} not in (0, 1]")));
    }
    for attempt in 0..ER_RETRY_BUDGET {
        let mut rng = stream_rng(seed, Domain::Graph, attempt as u64);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = DirectedGraph::new(n, edges)?;
        if g.is_strongly_connected() {
            return Ok(g);
        }
    }
    Err(Error::RetryBudgetExhausted {
        n,
        p,
        seed,
        attempts: ER_RETRY_BUDGET,
    })
}
