//! Communication graphs: construction, hop distances, graph powers, and the
//! greedy partitions used by the cooperative policies.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least {min} vertices, got {got}")]
    TooFewVertices { min: usize, got: usize },
    #[error("edge ({0}, {1}) references a vertex outside 0..{2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph power requires gamma >= 1")]
    ZeroGamma,
    #[error("edge probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("no connected Erdős–Rényi sample after {0} attempts")]
    RetriesExhausted(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("peripheral vertex {0} has no adjacent central vertex")]
    UncoveredPeripheral(usize),
    #[error("edge list contains no edges")]
    EmptyEdgeList,
}

/// Undirected, connected, simple graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl Graph {
    /// Builds a graph, dropping self-loops and duplicate edges. Fails if the
    /// result is not connected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let g = Self::unchecked(n, edges)?;
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    fn unchecked(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::TooFewVertices { min: 1, got: 0 });
        }
        let mut adjacency = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::VertexOutOfRange(a, b, n));
            }
            if a != b {
                adjacency[a].insert(b);
                adjacency[b].insert(a);
            }
        }
        Ok(Self { adjacency })
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Star with centre 0.
    pub fn star(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    /// Edges `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        let n = self.vertex_count();
        self.adjacency.iter().all(|ns| ns.len() == n - 1)
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.vertex_count()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for w in self.neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(Option::is_some)
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.vertex_count()];
        let mut out = Vec::new();
        for s in 0..self.vertex_count() {
            if seen[s] {
                continue;
            }
            let comp: Vec<usize> = self
                .bfs(s)
                .iter()
                .enumerate()
                .filter_map(|(v, d)| d.map(|_| v))
                .collect();
            for &v in &comp {
                seen[v] = true;
            }
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `keep`, relabelled by position in `keep`.
    fn induced(&self, keep: &[usize]) -> Result<Self, GraphError> {
        let index: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edges = self
            .edges()
            .into_iter()
            .filter_map(|(a, b)| Some((*index.get(&a)?, *index.get(&b)?)));
        Self::new(keep.len(), edges)
    }
}

/// Shortest-path hop counts between all vertex pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    hops: Vec<usize>,
}

impl DistanceMatrix {
    pub fn get(&self, a: usize, b: usize) -> usize {
        self.hops[a * self.n + b]
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn diameter(&self) -> usize {
        self.hops.iter().copied().max().unwrap_or(0)
    }

    /// Vertices `w != v` with `d(v, w) <= radius`, ascending.
    pub fn ball(&self, v: usize, radius: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&w| w != v && self.get(v, w) <= radius)
            .collect()
    }
}

pub fn all_pairs_distances(g: &Graph) -> DistanceMatrix {
    let n = g.vertex_count();
    let mut hops = Vec::with_capacity(n * n);
    for s in 0..n {
        // Graph construction guarantees connectivity.
        hops.extend(g.bfs(s).into_iter().map(|d| d.expect("connected graph")));
    }
    DistanceMatrix { n, hops }
}

/// `G_gamma`: an edge between every pair at hop distance `1..=gamma`.
pub fn graph_power(g: &Graph, gamma: usize) -> Result<Graph, GraphError> {
    if gamma == 0 {
        return Err(GraphError::ZeroGamma);
    }
    let d = all_pairs_distances(g);
    let n = g.vertex_count();
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Graph::new(n, edges.filter(|&(i, j)| d.get(i, j) <= gamma))
}

/// Disjoint cliques covering every vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueCover {
    cliques: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl CliqueCover {
    pub fn from_parts(n: usize, cliques: Vec<Vec<usize>>) -> Self {
        let mut membership = vec![usize::MAX; n];
        for (c, part) in cliques.iter().enumerate() {
            for &v in part {
                membership[v] = c;
            }
        }
        Self { cliques, membership }
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    pub fn clique_of(&self, v: usize) -> usize {
        self.membership[v]
    }

    pub fn same_clique(&self, a: usize, b: usize) -> bool {
        self.membership[a] == self.membership[b]
    }

    /// Checks disjointness, coverage, and that each part is a clique of `g`.
    pub fn is_valid_for(&self, g: &Graph) -> bool {
        let n = g.vertex_count();
        let mut seen = vec![false; n];
        for part in &self.cliques {
            for &v in part {
                if v >= n || seen[v] {
                    return false;
                }
                seen[v] = true;
            }
            for (i, &a) in part.iter().enumerate() {
                if part[i + 1..].iter().any(|&b| !g.has_edge(a, b)) {
                    return false;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Grows cliques from the lowest-id uncovered vertex, each time adding the
/// uncovered common neighbour with the most uncovered neighbours (ties to
/// the lowest id).
pub fn greedy_clique_cover(g: &Graph) -> CliqueCover {
    let n = g.vertex_count();
    let mut uncovered: BTreeSet<usize> = (0..n).collect();
    let mut cliques = Vec::new();
    while let Some(&seed) = uncovered.iter().next() {
        uncovered.remove(&seed);
        let mut clique = vec![seed];
        let mut candidates: BTreeSet<usize> = g.neighbors(seed).filter(|w| uncovered.contains(w)).collect();
        loop {
            let pick = candidates
                .iter()
                .map(|&c| (g.neighbors(c).filter(|w| uncovered.contains(w)).count(), c))
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, c)| c);
            let Some(next) = pick else { break };
            uncovered.remove(&next);
            clique.push(next);
            candidates.remove(&next);
            candidates.retain(|&c| g.has_edge(c, next));
        }
        clique.sort_unstable();
        cliques.push(clique);
    }
    CliqueCover::from_parts(n, cliques)
}

/// Greedy independent set by descending weight, ties to the lowest id.
/// The result is maximal.
pub fn greedy_max_weight_independent_set(g: &Graph, weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.vertex_count()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for v in order {
        if chosen.iter().all(|&c| !g.has_edge(c, v)) {
            chosen.push(v);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Central/peripheral partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralAssignment {
    pub centrals: Vec<usize>,
    /// `assigned[v]` is `None` for centrals, otherwise `(central, delay)`.
    pub assigned: Vec<Option<(usize, usize)>>,
}

impl CentralAssignment {
    pub fn is_central(&self, v: usize) -> bool {
        self.assigned[v].is_none()
    }

    pub fn central_of(&self, v: usize) -> Option<usize> {
        self.assigned[v].map(|(c, _)| c)
    }

    pub fn delay_of(&self, v: usize) -> Option<usize> {
        self.assigned[v].map(|(_, d)| d)
    }
}

/// Assigns every non-central vertex to its adjacent (in `gpow`) central of
/// largest `degrees` value, ties to the lowest id.
pub fn assign_peripherals(
    gpow: &Graph,
    centrals: &[usize],
    degrees: &[usize],
    distances: &DistanceMatrix,
) -> Result<CentralAssignment, GraphError> {
    let n = gpow.vertex_count();
    let is_central: Vec<bool> = (0..n).map(|v| centrals.contains(&v)).collect();
    let mut assigned = vec![None; n];
    for v in (0..n).filter(|&v| !is_central[v]) {
        let best = centrals
            .iter()
            .copied()
            .filter(|&c| gpow.has_edge(v, c))
            .max_by(|&a, &b| degrees[a].cmp(&degrees[b]).then(b.cmp(&a)))
            .ok_or(GraphError::UncoveredPeripheral(v))?;
        assigned[v] = Some((best, distances.get(v, best)));
    }
    let mut centrals = centrals.to_vec();
    centrals.sort_unstable();
    Ok(CentralAssignment { centrals, assigned })
}

/// Central/peripheral partition of `g` for delay `gamma`: centrals are the
/// greedy maximum-weight independent set of `G_gamma` weighted by
/// γ-neighbourhood size.
pub fn central_partition(g: &Graph, gamma: usize) -> Result<CentralAssignment, GraphError> {
    let gpow = graph_power(g, gamma)?;
    let degrees: Vec<usize> = (0..gpow.vertex_count()).map(|v| gpow.degree(v)).collect();
    let weights: Vec<f64> = degrees.iter().map(|&d| (d + 1) as f64).collect();
    let centrals = greedy_max_weight_independent_set(&gpow, &weights);
    assign_peripherals(&gpow, &centrals, &degrees, &all_pairs_distances(g))
}

/// Maximum number of resampling attempts in [`gen_erdos_renyi`].
pub const ER_RETRY_CAP: usize = 1000;

/// Connected `G(n, p)` sample; disconnected draws are resampled with a
/// derived seed.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewVertices { min: 2, got: n });
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::InvalidProbability(p));
    }
    for attempt in 0..ER_RETRY_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[attempt as u64]));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        match Graph::new(n, edges) {
            Ok(g) => return Ok(g),
            Err(GraphError::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::RetriesExhausted(ER_RETRY_CAP))
}

/// Parses a SNAP-style edge list. Vertex ids are relabelled densely in order
/// of first appearance; duplicates and self-loops are dropped; only the
/// largest connected component is kept (ties to the component holding the
/// lowest relabelled id). With `subsample`, the kept graph is cut down to a
/// breadth-first ball around its lowest-id vertex.
pub fn load_edge_list(text: &str, subsample: Option<usize>) -> Result<Graph, GraphError> {
    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(GraphError::Parse {
                line: lineno + 1,
                reason: format!("expected two vertex ids, found {}", fields.len()),
            });
        }
        let mut pair = [0usize; 2];
        for (slot, f) in pair.iter_mut().zip(&fields) {
            let raw_id: i64 = f.parse().map_err(|_| GraphError::Parse {
                line: lineno + 1,
                reason: format!("`{f}` is not an integer"),
            })?;
            let next = ids.len();
            *slot = *ids.entry(raw_id).or_insert(next);
        }
        edges.push((pair[0], pair[1]));
    }
    if ids.is_empty() {
        return Err(GraphError::EmptyEdgeList);
    }
    let full = Graph::unchecked(ids.len(), edges)?;
    let mut components = full.components();
    // stable: earlier components (lower seed id) win ties
    components.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let largest = full.induced(&components[0])?;
    match subsample {
        Some(target) if target < largest.vertex_count() => {
            if target == 0 {
                return Err(GraphError::TooFewVertices { min: 1, got: 0 });
            }
            let mut keep = Vec::with_capacity(target);
            let mut seen = vec![false; largest.vertex_count()];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                keep.push(u);
                if keep.len() == target {
                    break;
                }
                for w in largest.neighbors(u) {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            keep.sort_unstable();
            largest.induced(&keep)
        }
        _ => Ok(largest),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_disconnected_and_bad_vertices() {
        assert_eq!(Graph::new(3, [(0, 1)]), Err(GraphError::Disconnected));
        assert!(matches!(Graph::new(2, [(0, 2)]), Err(GraphError::VertexOutOfRange(..))));
        let g = Graph::new(2, [(0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn path_distances() {
        let d = all_pairs_distances(&Graph::path(4).unwrap());
        assert_eq!(d.get(0, 3), 3);
        assert_eq!(d.get(3, 0), 3);
        assert_eq!(d.diameter(), 3);
    }

    #[test]
    fn complete_distances() {
        let d = all_pairs_distances(&Graph::complete(4).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d.get(i, j), usize::from(i != j));
            }
        }
    }

    #[test]
    fn path_square() {
        let g = graph_power(&Graph::path(4).unwrap(), 2).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn power_edge_cases() {
        let p = Graph::path(5).unwrap();
        assert_eq!(graph_power(&p, 1).unwrap(), p);
        assert!(graph_power(&p, 4).unwrap().is_complete());
        assert_eq!(graph_power(&p, 0), Err(GraphError::ZeroGamma));
    }

    #[test]
    fn covers_of_small_graphs() {
        let c = greedy_clique_cover(&Graph::complete(5).unwrap());
        assert_eq!(c.cliques(), &[vec![0, 1, 2, 3, 4]]);
        let p = Graph::path(4).unwrap();
        let c = greedy_clique_cover(&p);
        assert_eq!(c.cliques(), &[vec![0, 1], vec![2, 3]]);
        assert!(c.is_valid_for(&p));
        let star2 = graph_power(&Graph::star(7).unwrap(), 2).unwrap();
        assert_eq!(greedy_clique_cover(&star2).len(), 1);
    }

    #[test]
    fn independent_sets() {
        let p = Graph::path(5).unwrap();
        assert_eq!(greedy_max_weight_independent_set(&p, &[1.0; 5]), vec![0, 2, 4]);
        let s = Graph::star(6).unwrap();
        let mut w = vec![1.0; 6];
        w[0] = 5.0;
        assert_eq!(greedy_max_weight_independent_set(&s, &w), vec![0]);
    }

    #[test]
    fn peripheral_assignment() {
        let s = Graph::star(5).unwrap();
        let d = all_pairs_distances(&s);
        let degrees: Vec<usize> = (0..5).map(|v| s.degree(v)).collect();
        let a = assign_peripherals(&s, &[0], &degrees, &d).unwrap();
        for leaf in 1..5 {
            assert_eq!(a.assigned[leaf], Some((0, 1)));
        }
        assert!(a.is_central(0));

        let p = Graph::path(3).unwrap();
        let d = all_pairs_distances(&p);
        let degrees: Vec<usize> = (0..3).map(|v| p.degree(v)).collect();
        let a = assign_peripherals(&p, &[0, 2], &degrees, &d).unwrap();
        assert_eq!(a.central_of(1), Some(0));

        assert_eq!(
            assign_peripherals(&Graph::path(4).unwrap(), &[0], &[1, 2, 2, 1], &all_pairs_distances(&Graph::path(4).unwrap())),
            Err(GraphError::UncoveredPeripheral(2))
        );
    }

    #[test]
    fn star_partition_picks_centre() {
        let a = central_partition(&Graph::star(8).unwrap(), 1).unwrap();
        assert_eq!(a.centrals, vec![0]);
        assert!((1..8).all(|v| a.assigned[v] == Some((0, 1))));
    }

    #[test]
    fn erdos_renyi_basics() {
        let g = gen_erdos_renyi(2, 1.0, 3).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert_eq!(gen_erdos_renyi(30, 0.3, 9).unwrap(), gen_erdos_renyi(30, 0.3, 9).unwrap());
        assert!(matches!(gen_erdos_renyi(1, 0.5, 0), Err(GraphError::TooFewVertices { .. })));
        assert_eq!(gen_erdos_renyi(5, 0.0, 0), Err(GraphError::InvalidProbability(0.0)));
        assert_eq!(gen_erdos_renyi(5, 1.5, 0), Err(GraphError::InvalidProbability(1.5)));
        assert_eq!(
            gen_erdos_renyi(60, 0.001, 0),
            Err(GraphError::RetriesExhausted(ER_RETRY_CAP))
        );
    }

    #[test]
    fn paper_scale_erdos_renyi() {
        let g = gen_erdos_renyi(200, 0.7, 1).unwrap();
        assert_eq!(g.vertex_count(), 200);
        assert!(all_pairs_distances(&g).diameter() <= 2);
    }

    #[test]
    fn edge_lists() {
        let g = load_edge_list("0 1\n1 2", None).unwrap();
        assert_eq!(g, Graph::path(3).unwrap());
        let g = load_edge_list("# comment\n5 9\n9 5\n5 5", None).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edges(), vec![(0, 1)]);
        let err = load_edge_list("0 1\n1 x\n", None).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        let err = load_edge_list("0 1\n1 2 3\n", None).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        assert_eq!(load_edge_list("# nothing\n", None), Err(GraphError::EmptyEdgeList));
    }

    #[test]
    fn edge_list_keeps_largest_component_and_subsamples() {
        let text = "10 11\n20 21\n21 22\n22 23\n";
        let g = load_edge_list(text, None).unwrap();
        assert_eq!(g, Graph::path(4).unwrap());
        let g = load_edge_list("1 2\n1 3\n1 4\n4 5\n5 6\n", Some(4)).unwrap();
        // ball around relabelled vertex 0 (raw 1): 1, 2, 3, 4
        assert_eq!(g, Graph::star(4).unwrap());
    }
}
