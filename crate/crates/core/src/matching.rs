//! Bipartite graphs and perfect r-matchings.
//!
//! Left vertices are agents, right vertices are items. An r-matching gives
//! each left vertex at most `r` right vertices and each right vertex at most
//! one left vertex; it is perfect when every degree is exactly `r` and 1.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::rng::DrawStream;

/// Largest left side accepted by [`hall_violation_search`].
pub const MAX_HALL_LEFT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    left_count: usize,
    right_count: usize,
    adjacency: Vec<Vec<usize>>,
}

impl BipartiteGraph {
    /// `adjacency[u]` must be strictly increasing and inside `0..right_count`.
    pub fn new(right_count: usize, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        for (u, nbrs) in adjacency.iter().enumerate() {
            if nbrs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!(
                    "neighbors of left vertex {u} not strictly increasing"
                )));
            }
            if let Some(&v) = nbrs.last().filter(|&&v| v >= right_count) {
                return Err(Error::IndexOutOfRange(format!(
                    "right vertex {v} of {right_count} (left vertex {u})"
                )));
            }
        }
        Ok(BipartiteGraph {
            left_count: adjacency.len(),
            right_count,
            adjacency,
        })
    }

    pub fn from_edges(
        left_count: usize,
        right_count: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); left_count];
        for &(u, v) in edges {
            adjacency
                .get_mut(u)
                .ok_or_else(|| Error::IndexOutOfRange(format!("left vertex {u} of {left_count}")))?
                .push(v);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        BipartiteGraph::new(right_count, adjacency)
    }

    pub fn complete(left_count: usize, right_count: usize) -> Self {
        BipartiteGraph {
            left_count,
            right_count,
            adjacency: vec![(0..right_count).collect(); left_count],
        }
    }

    pub fn left_count(&self) -> usize {
        self.left_count
    }

    pub fn right_count(&self) -> usize {
        self.right_count
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency
            .get(u)
            .is_some_and(|nbrs| nbrs.binary_search(&v).is_ok())
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Adjacency-list dump, one left vertex per line: `u: v1 v2 ...`.
    pub fn to_adjacency_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BipartiteGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            write!(f, "{u}:")?;
            for v in nbrs {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Edge `(u, v)` present independently with probability `p`.
pub fn erdos_renyi(
    left_count: usize,
    right_count: usize,
    p: f64,
    rng: &mut DrawStream,
) -> BipartiteGraph {
    let adjacency = (0..left_count)
        .map(|_| (0..right_count).filter(|_| rng.next_unit() < p).collect())
        .collect();
    BipartiteGraph {
        left_count,
        right_count,
        adjacency,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RMatching {
    /// Right vertices matched to each left vertex, in increasing order.
    pub assignment: Vec<Vec<usize>>,
}

const UNREACHED: usize = usize::MAX;

struct Solver<'a> {
    g: &'a BipartiteGraph,
    r: usize,
    load: Vec<usize>,
    mate: Vec<Option<usize>>,
    dist: Vec<usize>,
    cursor: Vec<usize>,
}

impl Solver<'_> {
    fn bfs(&mut self) -> bool {
        let mut queue = VecDeque::new();
        for u in 0..self.g.left_count {
            if self.load[u] < self.r {
                self.dist[u] = 0;
                queue.push_back(u);
            } else {
                self.dist[u] = UNREACHED;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &self.g.adjacency[u] {
                match self.mate[v] {
                    None => found = true,
                    Some(w) if w != u && self.dist[w] == UNREACHED => {
                        self.dist[w] = self.dist[u] + 1;
                        queue.push_back(w);
                    }
                    Some(_) => {}
                }
            }
        }
        found
    }

    fn dfs(&mut self, u: usize) -> bool {
        let g = self.g;
        while self.cursor[u] < g.adjacency[u].len() {
            let v = g.adjacency[u][self.cursor[u]];
            let ok = match self.mate[v] {
                None => true,
                Some(w) if w != u && self.dist[w] == self.dist[u] + 1 => self.dfs(w),
                Some(_) => false,
            };
            if ok {
                self.mate[v] = Some(u);
                return true;
            }
            self.cursor[u] += 1;
        }
        self.dist[u] = UNREACHED;
        false
    }
}

/// Finds a perfect r-matching, or `None` when the graph has none.
///
/// Hopcroft–Karp on the implicit graph with `r` copies of each left vertex.
/// Left vertices and their neighbors are scanned in index order, so the result
/// depends only on the graph.
pub fn find_perfect_r_matching(g: &BipartiteGraph, r: usize) -> Result<Option<RMatching>> {
    if r == 0 {
        return Err(Error::InvalidParameter("r must be at least 1".into()));
    }
    if g.right_count != r * g.left_count {
        return Err(Error::DimensionMismatch(format!(
            "right side has {} vertices, perfect {r}-matching needs {}",
            g.right_count,
            r * g.left_count
        )));
    }
    if g.adjacency.iter().any(|nbrs| nbrs.len() < r) {
        return Ok(None);
    }
    let mut covered = vec![false; g.right_count];
    g.adjacency
        .iter()
        .flatten()
        .for_each(|&v| covered[v] = true);
    if covered.contains(&false) {
        return Ok(None);
    }

    let mut s = Solver {
        g,
        r,
        load: vec![0; g.left_count],
        mate: vec![None; g.right_count],
        dist: vec![UNREACHED; g.left_count],
        cursor: vec![0; g.left_count],
    };
    let mut size = 0;
    while size < g.right_count && s.bfs() {
        s.cursor.fill(0);
        let mut grown = 0;
        for u in 0..g.left_count {
            while s.load[u] < r && s.dist[u] == 0 && s.dfs(u) {
                s.load[u] += 1;
                grown += 1;
            }
        }
        if grown == 0 {
            break;
        }
        size += grown;
    }
    if size < g.right_count {
        return Ok(None);
    }
    let mut assignment = vec![Vec::with_capacity(r); g.left_count];
    for (v, u) in s.mate.iter().enumerate() {
        assignment[u.expect("perfect matching covers every right vertex")].push(v);
    }
    Ok(Some(RMatching { assignment }))
}

/// Exhaustive Hall check: some `S` with `|N(S)| < r|S|`, smallest as a bitmask.
pub fn hall_violation_search(g: &BipartiteGraph, r: usize) -> Result<Option<Vec<usize>>> {
    let left = g.left_count;
    if left > MAX_HALL_LEFT {
        return Err(Error::CapExceeded(format!(
            "{left} left vertices, exhaustive Hall search allows at most {MAX_HALL_LEFT}"
        )));
    }
    let words = g.right_count.div_ceil(64).max(1);
    let masks: Vec<Vec<u64>> = g
        .adjacency
        .iter()
        .map(|nbrs| {
            let mut bits = vec![0u64; words];
            nbrs.iter().for_each(|&v| bits[v / 64] |= 1 << (v % 64));
            bits
        })
        .collect();
    let mut union = vec![0u64; words];
    for subset in 1u32..(1u32 << left) {
        union.fill(0);
        for (u, bits) in masks.iter().enumerate() {
            if subset >> u & 1 == 1 {
                union.iter_mut().zip(bits).for_each(|(a, b)| *a |= b);
            }
        }
        let covered: usize = union.iter().map(|w| w.count_ones() as usize).sum();
        if covered < r * subset.count_ones() as usize {
            return Ok(Some((0..left).filter(|&u| subset >> u & 1 == 1).collect()));
        }
    }
    Ok(None)
}

/// True iff `m` is a perfect r-matching contained in `g`.
pub fn validate_r_matching(g: &BipartiteGraph, m: &RMatching, r: usize) -> bool {
    if m.assignment.len() != g.left_count || g.right_count != r * g.left_count {
        return false;
    }
    let mut used = vec![false; g.right_count];
    for (u, items) in m.assignment.iter().enumerate() {
        if items.len() != r {
            return false;
        }
        for &v in items {
            if v >= g.right_count || used[v] || !g.has_edge(u, v) {
                return false;
            }
            used[v] = true;
        }
    }
    used.iter().all(|&b| b)
}
