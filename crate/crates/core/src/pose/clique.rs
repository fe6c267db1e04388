use std::time::{Duration, Instant};

use nalgebra::Point3;

use crate::scalar::Real;

/// `| ‖p_i − p_j‖ − ‖q_i − q_j‖ | < δ`.
pub fn compatibility<T: Real>(pi: &Point3<T>, qi: &Point3<T>, pj: &Point3<T>, qj: &Point3<T>, delta: T) -> bool {
    ((pi - pj).norm() - (qi - qj).norm()).abs() < delta
}

/// Fixed-size bitset over vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    pub fn new(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn intersect(&self, other: &BitSet) -> BitSet {
        BitSet {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= b);
    }

    pub fn difference_with(&mut self, other: &BitSet) {
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= !b);
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Correspondence compatibility graph at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityGraph {
    pub level: usize,
    pub delta: f64,
    adj: Vec<BitSet>,
}

impl CompatibilityGraph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = vec![BitSet::new(n); n];
        for (a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        Self {
            level: 0,
            delta: 0.0,
            adj,
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(b)
    }

    pub fn neighbors(&self, v: usize) -> &BitSet {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].count()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BitSet::count).sum::<usize>() / 2
    }

    pub fn is_clique(&self, vs: &[usize]) -> bool {
        vs.iter()
            .enumerate()
            .all(|(k, &a)| vs[k + 1..].iter().all(|&b| self.has_edge(a, b)))
    }
}

/// One compatibility graph per threshold; thresholds must increase, which
/// makes the edge sets nested.
pub fn build_pyramid<T: Real>(src: &[Point3<T>], dst: &[Point3<T>], deltas: &[T]) -> Vec<CompatibilityGraph> {
    let n = src.len();
    let mut graphs: Vec<CompatibilityGraph> = deltas
        .iter()
        .enumerate()
        .map(|(level, d)| CompatibilityGraph {
            level,
            delta: d.to_f64_lossy(),
            adj: vec![BitSet::new(n); n],
        })
        .collect();
    for a in 0..n {
        for b in a + 1..n {
            let gap = ((src[a] - src[b]).norm() - (dst[a] - dst[b]).norm()).abs();
            for (g, d) in graphs.iter_mut().zip(deltas) {
                if gap < *d {
                    g.adj[a].insert(b);
                    g.adj[b].insert(a);
                }
            }
        }
    }
    graphs
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueResult {
    /// Sorted vertex indices.
    pub vertices: Vec<usize>,
    /// False when the time budget ran out before the search completed.
    pub exact: bool,
}

/// Core number of every vertex (Batagelj–Zaversnik bucket peeling), and
/// the peeling order.
fn core_numbers(g: &CompatibilityGraph) -> (Vec<usize>, Vec<usize>) {
    let n = g.len();
    let mut deg: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); max_deg + 1];
    for v in 0..n {
        buckets[deg[v]].push(v);
    }
    let mut removed = vec![false; n];
    let mut core = vec![0; n];
    let mut order = Vec::with_capacity(n);
    let mut k = 0;
    for _ in 0..n {
        let v = loop {
            let b = buckets.iter().position(|b| !b.is_empty()).unwrap();
            let v = buckets[b].pop().unwrap();
            if !removed[v] && deg[v] == b {
                break v;
            }
        };
        k = k.max(deg[v]);
        core[v] = k;
        removed[v] = true;
        order.push(v);
        for u in g.neighbors(v).iter() {
            if !removed[u] {
                deg[u] -= 1;
                buckets[deg[u]].push(u);
            }
        }
    }
    (core, order)
}

struct Search<'a> {
    g: &'a CompatibilityGraph,
    best: Vec<usize>,
    current: Vec<usize>,
    deadline: Option<Instant>,
    timed_out: bool,
    steps: u64,
}

impl Search<'_> {
    /// Greedy sequential colouring of `p` in ascending index order; returns
    /// vertices ordered by colour and their colour numbers.
    fn colour(&self, p: &BitSet) -> (Vec<usize>, Vec<usize>) {
        let mut uncoloured = p.clone();
        let mut order = Vec::new();
        let mut colours = Vec::new();
        let mut c = 0;
        while !uncoloured.is_empty() {
            c += 1;
            let mut q = uncoloured.clone();
            while let Some(v) = q.first() {
                uncoloured.remove(v);
                q.remove(v);
                q.difference_with(self.g.neighbors(v));
                order.push(v);
                colours.push(c);
            }
        }
        (order, colours)
    }

    fn expand(&mut self, mut p: BitSet) {
        let (order, colours) = self.colour(&p);
        for idx in (0..order.len()).rev() {
            if self.timed_out {
                return;
            }
            if self.current.len() + colours[idx] <= self.best.len() {
                return;
            }
            self.steps += 1;
            if self.steps.is_multiple_of(256) {
                if let Some(d) = self.deadline {
                    if Instant::now() >= d {
                        self.timed_out = true;
                        return;
                    }
                }
            }
            let v = order[idx];
            self.current.push(v);
            let np = p.intersect(self.g.neighbors(v));
            if np.is_empty() {
                if self.current.len() > self.best.len() {
                    self.best = self.current.clone();
                }
            } else {
                self.expand(np);
            }
            self.current.pop();
            p.remove(v);
        }
    }
}

/// Greedy clique grown from `start`, scanning vertices from the deepest
/// core outwards and keeping each one adjacent to everything kept so far.
fn greedy_clique(g: &CompatibilityGraph, start: usize, order: &[usize]) -> Vec<usize> {
    let mut clique = vec![start];
    let mut cand = g.neighbors(start).clone();
    for &v in order.iter().rev() {
        if cand.contains(v) {
            clique.push(v);
            cand.intersect_with(g.neighbors(v));
        }
    }
    clique
}

/// Maximum clique by branch and bound with greedy colouring bounds and
/// k-core pruning. Returns the best clique found and whether the search
/// finished within `budget`.
pub fn max_clique(g: &CompatibilityGraph, budget: Option<Duration>) -> CliqueResult {
    let n = g.len();
    if n == 0 {
        return CliqueResult {
            vertices: Vec::new(),
            exact: true,
        };
    }
    let start = Instant::now();
    let (core, order) = core_numbers(g);
    // Seed the bound with greedy cliques from the highest-core vertices.
    let mut best = vec![order[n - 1]];
    for &v in order.iter().rev().take(8) {
        let c = greedy_clique(g, v, &order);
        if c.len() > best.len() {
            best = c;
        }
    }
    let mut search = Search {
        g,
        best,
        current: Vec::new(),
        deadline: budget.map(|b| start + b),
        timed_out: false,
        steps: 0,
    };
    // Branch on vertices in peeling order; each branch only sees later
    // vertices, and vertices whose core number cannot beat the incumbent
    // are skipped.
    let max_core = core.iter().copied().max().unwrap_or(0);
    if max_core < search.best.len() {
        let mut vertices = search.best;
        vertices.sort_unstable();
        return CliqueResult { vertices, exact: true };
    }
    let mut rank = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        rank[v] = i;
    }
    for &v in order.iter() {
        if search.timed_out {
            break;
        }
        if core[v] < search.best.len() {
            continue;
        }
        let mut p = BitSet::new(n);
        for u in g.neighbors(v).iter() {
            if rank[u] > rank[v] && core[u] + 1 > search.best.len() {
                p.insert(u);
            }
        }
        if p.count() < search.best.len() {
            continue;
        }
        search.current.push(v);
        search.expand(p);
        search.current.pop();
    }
    let mut vertices = search.best;
    vertices.sort_unstable();
    CliqueResult {
        vertices,
        exact: !search.timed_out,
    }
}
