//! Graph ingestion, validation, degree statistics, connectivity, and the
//! connectivity-preserving link-prediction split.
//!
//! Edge lists are UTF-8 text with one edge per line (two whitespace-separated
//! node identifiers); `#`-prefixed lines are comments. Identifiers may be
//! arbitrary strings and are densely re-indexed: the distinct labels are
//! sorted (numerically when every label parses as an unsigned integer,
//! lexicographically otherwise) and assigned indices in that order, which
//! makes loading idempotent under re-serialization.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A simple undirected graph with canonicalized edges.
///
/// Invariants (enforced by all constructors): every edge `(i, j)` satisfies
/// `i < j < n_nodes`, the edge list is sorted and duplicate-free, and
/// `node_labels` maps each dense index back to its original identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_labels: Vec<String>,
}

impl Graph {
    /// Builds a graph from raw index pairs, canonicalizing and deduplicating.
    /// Labels default to the decimal indices.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let labels = (0..n_nodes).map(|i| i.to_string()).collect();
        Self::from_parts(n_nodes, edges, labels)
    }

    /// Builds a graph from raw index pairs with explicit labels.
    pub fn from_parts(
        n_nodes: usize,
        edges: &[(usize, usize)],
        node_labels: Vec<String>,
    ) -> Result<Self> {
        if node_labels.len() != n_nodes {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} nodes",
                node_labels.len(),
                n_nodes
            )));
        }
        let mut canonical = BTreeSet::new();
        for &(i, j) in edges {
            if i == j {
                return Err(Error::SelfLoop {
                    line: 0,
                    node: i.to_string(),
                });
            }
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::EdgeOutOfRange { i, j, n: n_nodes });
            }
            canonical.insert((i.min(j), i.max(j)));
        }
        Ok(Graph {
            n_nodes,
            edges: canonical.into_iter().collect(),
            node_labels,
        })
    }

    /// Parses an edge list from text. See the module docs for the format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw: Vec<(String, String)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            if tokens.len() != 2 {
                return Err(Error::MalformedEdge {
                    line: line_no,
                    text: trimmed.to_string(),
                });
            }
            if tokens[0] == tokens[1] {
                return Err(Error::SelfLoop {
                    line: line_no,
                    node: tokens[0].to_string(),
                });
            }
            raw.push((tokens[0].to_string(), tokens[1].to_string()));
        }

        // Dense re-indexing over sorted distinct labels.
        let mut labels: Vec<String> = raw
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let all_numeric = labels.iter().all(|l| l.parse::<u64>().is_ok());
        if all_numeric {
            labels.sort_by_key(|l| l.parse::<u64>().unwrap());
        }
        let index: std::collections::HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let edges: Vec<(usize, usize)> = raw
            .iter()
            .map(|(a, b)| (index[a.as_str()], index[b.as_str()]))
            .collect();
        Self::from_parts(labels.len(), &edges, labels)
    }

    /// Loads an edge list from a file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes the edge list using the original node labels, one edge per
    /// line, in canonical order.
    pub fn serialize(&self) -> String {
        format_pair_list(self, &self.edges)
    }

    /// Writes the serialized edge list to a file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    /// Per-node degrees.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Maximum degree (zero for an empty graph).
    pub fn deg_max(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// Canonical edge pairs as a hash set, for membership queries.
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    /// True iff the graph has exactly one connected component. The empty
    /// graph and the single node are connected by convention.
    pub fn is_connected(&self) -> bool {
        if self.n_nodes <= 1 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n_nodes
    }

    /// Number of unordered node pairs, `N (N - 1) / 2`.
    pub fn n_pairs(&self) -> usize {
        self.n_nodes * self.n_nodes.saturating_sub(1) / 2
    }
}

/// Formats a list of index pairs using the graph's node labels.
pub fn format_pair_list(g: &Graph, pairs: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for &(i, j) in pairs {
        out.push_str(&g.node_labels[i]);
        out.push(' ');
        out.push_str(&g.node_labels[j]);
        out.push('\n');
    }
    out
}

/// Result of a connectivity-preserving link-prediction split.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub residual: Graph,
    pub test_positives: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Number of requested removals that could not be performed without
    /// disconnecting the residual graph.
    pub shortfall: usize,
}

/// Removes `⌊holdout_fraction · |E|⌋` edges, chosen by walking a seeded
/// shuffle of the edge list and skipping any edge whose removal would
/// disconnect the current residual. If the walk ends before the quota is met,
/// the shortfall is reported. An equal number of non-edges of the ORIGINAL
/// graph is then sampled uniformly without replacement as test negatives.
pub fn split_links(g: &Graph, holdout_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::BadHoldoutFraction(holdout_fraction));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let quota = (holdout_fraction * g.edges.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order = g.edges.clone();
    order.shuffle(&mut rng);

    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); g.n_nodes];
    for &(i, j) in &g.edges {
        adj[i].insert(j);
        adj[j].insert(i);
    }
    let mut removed: Vec<(usize, usize)> = Vec::with_capacity(quota);
    for &(u, v) in &order {
        if removed.len() == quota {
            break;
        }
        adj[u].remove(&v);
        adj[v].remove(&u);
        if reachable(&adj, u, v) {
            removed.push((u, v));
        } else {
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    let shortfall = quota - removed.len();

    let removed_set: HashSet<(usize, usize)> = removed.iter().copied().collect();
    let kept: Vec<(usize, usize)> = g
        .edges
        .iter()
        .copied()
        .filter(|e| !removed_set.contains(e))
        .collect();
    let residual = Graph::from_parts(g.n_nodes, &kept, g.node_labels.clone())?;

    let mut test_positives = removed;
    test_positives.sort_unstable();
    let test_negatives =
        sample_non_edges_without_replacement(g, test_positives.len(), &mut rng)?;

    Ok(SplitResult {
        residual,
        test_positives,
        test_negatives,
        seed,
        holdout_fraction,
        shortfall,
    })
}

/// Breadth-first reachability of `target` from `start` over a mutable
/// adjacency structure (used for the bridge test during splitting).
fn reachable(adj: &[HashSet<usize>], start: usize, target: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = std::collections::VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        if u == target {
            return true;
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    false
}

/// Samples `count` distinct non-edges of `g` uniformly at random, returned in
/// canonical sorted order. Errs when fewer than `count` non-edges exist.
pub fn sample_non_edges_without_replacement(
    g: &Graph,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let available = g.n_pairs() - g.edges.len();
    if count > available {
        return Err(Error::NotEnoughNonEdges {
            needed: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let edges = g.edge_set();
    // Rejection sampling is efficient when both the complement and the
    // remaining head room are large; otherwise enumerate the complement and
    // take a partial Fisher-Yates shuffle.
    if count * 3 <= available && available * 10 >= g.n_pairs() {
        let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(count);
        let cap = 100 * count + 1000;
        for _ in 0..cap {
            if chosen.len() == count {
                break;
            }
            let i = rng.random_range(0..g.n_nodes);
            let j = rng.random_range(0..g.n_nodes);
            if i == j {
                continue;
            }
            let pair = (i.min(j), i.max(j));
            if !edges.contains(&pair) {
                chosen.insert(pair);
            }
        }
        if chosen.len() == count {
            let mut out: Vec<(usize, usize)> = chosen.into_iter().collect();
            out.sort_unstable();
            return Ok(out);
        }
        // Extremely unlucky rejection run: fall through to enumeration.
    }
    let mut complement: Vec<(usize, usize)> = Vec::with_capacity(available);
    for i in 0..g.n_nodes {
        for j in (i + 1)..g.n_nodes {
            if !edges.contains(&(i, j)) {
                complement.push((i, j));
            }
        }
    }
    for k in 0..count {
        let swap_with = rng.random_range(k..complement.len());
        complement.swap(k, swap_with);
    }
    complement.truncate(count);
    complement.sort_unstable();
    Ok(complement)
}

/// Samples `count` non-edges of `g` uniformly WITH replacement (i.i.d.), as
/// used by the subsampled edge-term estimator. Errs when the graph has no
/// non-edges at all.
pub fn sample_non_edges_with_replacement(
    g: &Graph,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let available = g.n_pairs() - g.edges.len();
    if count == 0 {
        return Ok(Vec::new());
    }
    if available == 0 {
        return Err(Error::NotEnoughNonEdges {
            needed: count,
            available,
        });
    }
    let edges = g.edge_set();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..g.n_nodes);
        let j = rng.random_range(0..g.n_nodes);
        if i == j {
            continue;
        }
        let pair = (i.min(j), i.max(j));
        if !edges.contains(&pair) {
            out.push(pair);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_simple_path() {
        let g = Graph::parse("0 1\n1 2").unwrap();
        assert_eq!(g.n_nodes, 3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.node_labels, vec!["0", "1", "2"]);
    }

    #[test]
    fn parse_collapses_duplicates_and_symmetry() {
        let g = Graph::parse("a b\nb a\na b").unwrap();
        assert_eq!(g.n_nodes, 2);
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn parse_rejects_self_loop_with_line_number() {
        let err = Graph::parse("0 1\n5 5").unwrap_err();
        match err {
            Error::SelfLoop { line, node } => {
                assert_eq!(line, 2);
                assert_eq!(node, "5");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        let err = Graph::parse("0 1\na b c").unwrap_err();
        match err {
            Error::MalformedEdge { line, text } => {
                assert_eq!(line, 2);
                assert_eq!(text, "a b c");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let g = Graph::parse("# header\n\n0 1\n  # indented comment\n1 2\n").unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        // Lexicographic order would put "10" before "9" and flip the indices.
        let g = Graph::parse("10 9").unwrap();
        assert_eq!(g.node_labels, vec!["9", "10"]);
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn non_numeric_labels_sort_lexicographically() {
        let g = Graph::parse("b a\nc a").unwrap();
        assert_eq!(g.node_labels, vec!["a", "b", "c"]);
        assert_eq!(g.edges, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn degree_examples() {
        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(path.degrees(), vec![1, 2, 1]);
        assert_eq!(path.deg_max(), 2);

        let empty = Graph::from_edges(3, &[]).unwrap();
        assert_eq!(empty.degrees(), vec![0, 0, 0]);
        assert_eq!(empty.deg_max(), 0);

        let star = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert_eq!(star.deg_max(), 4);
    }

    #[test]
    fn connectivity_examples() {
        assert!(Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap().is_connected());
        assert!(!Graph::from_edges(2, &[]).unwrap().is_connected());
        assert!(Graph::from_edges(1, &[]).unwrap().is_connected());
    }

    #[test]
    fn split_triangle_removes_one_edge_but_has_no_negatives() {
        // A triangle has no non-edges, so while one edge is removable the
        // negative sample cannot be drawn and the split must fail loudly.
        let g = Graph::from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let err = split_links(&g, 0.34, 7).unwrap_err();
        match err {
            Error::NotEnoughNonEdges { needed, available } => {
                assert_eq!(needed, 1);
                assert_eq!(available, 0);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn split_four_cycle_keeps_residual_connected() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let s = split_links(&g, 0.26, 3).unwrap();
        assert_eq!(s.test_positives.len(), 1);
        assert_eq!(s.test_negatives.len(), 1);
        assert_eq!(s.shortfall, 0);
        assert!(s.residual.is_connected());
        assert_eq!(s.residual.edges.len(), 3);
        // Negatives must avoid the original edges; the only candidates in a
        // 4-cycle are the two diagonals.
        assert!([(0, 2), (1, 3)].contains(&s.test_negatives[0]));
    }

    #[test]
    fn split_spanning_tree_reports_full_shortfall() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let s = split_links(&g, 0.5, 11).unwrap();
        assert_eq!(s.test_positives.len(), 0);
        assert_eq!(s.test_negatives.len(), 0);
        assert_eq!(s.shortfall, 2);
        assert_eq!(s.residual.edges, g.edges);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        assert!(matches!(
            split_links(&g, 0.0, 1),
            Err(Error::BadHoldoutFraction(_))
        ));
        assert!(matches!(
            split_links(&g, 1.0, 1),
            Err(Error::BadHoldoutFraction(_))
        ));
        let disconnected = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            split_links(&disconnected, 0.5, 1),
            Err(Error::Disconnected)
        ));
    }

    /// Independent connectivity oracle: plain DFS over an edge list, written
    /// without reusing any Graph machinery.
    fn oracle_connected(n: usize, edges: &[(usize, usize)]) -> bool {
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        fn dfs(u: usize, adj: &[Vec<usize>], seen: &mut [bool]) {
            seen[u] = true;
            for &v in &adj[u] {
                if !seen[v] {
                    dfs(v, adj, seen);
                }
            }
        }
        dfs(0, &adj, &mut seen);
        seen.iter().all(|&s| s)
    }

    fn random_connected_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            if g.is_connected() {
                return g;
            }
        }
    }

    #[test]
    fn split_invariants_hold_across_many_seeds() {
        // Checked over >= 100 seeded splits of random connected graphs, with
        // connectivity re-verified by the independent oracle.
        for seed in 0..110u64 {
            let n = 20 + (seed as usize % 3) * 15;
            let g = random_connected_graph(n, 0.2, seed.wrapping_mul(31) + 5);
            let quota = (0.5 * g.edges.len() as f64).floor() as usize;
            let s = split_links(&g, 0.5, seed).unwrap();

            assert!(oracle_connected(s.residual.n_nodes, &s.residual.edges));
            assert_eq!(s.test_positives.len() + s.shortfall, quota);
            assert_eq!(s.test_negatives.len(), s.test_positives.len());

            // Exact edge-set partition.
            let mut reunion: Vec<(usize, usize)> = s
                .residual
                .edges
                .iter()
                .chain(s.test_positives.iter())
                .copied()
                .collect();
            reunion.sort_unstable();
            assert_eq!(reunion, g.edges);
            let pos_set: HashSet<_> = s.test_positives.iter().collect();
            assert!(s.residual.edges.iter().all(|e| !pos_set.contains(e)));

            // Negatives: distinct, canonical, disjoint from the ORIGINAL edges.
            let orig = g.edge_set();
            let neg_set: HashSet<_> = s.test_negatives.iter().copied().collect();
            assert_eq!(neg_set.len(), s.test_negatives.len());
            for &(i, j) in &s.test_negatives {
                assert!(i < j && j < g.n_nodes);
                assert!(!orig.contains(&(i, j)));
            }

            // Determinism: same seed, same split.
            let s2 = split_links(&g, 0.5, seed).unwrap();
            assert_eq!(s2.test_positives, s.test_positives);
            assert_eq!(s2.test_negatives, s.test_negatives);
            assert_eq!(s2.residual.edges, s.residual.edges);
        }
    }

    #[test]
    fn erdos_renyi_split_hits_exact_quota() {
        let g = random_connected_graph(50, 0.2, 99);
        let s = split_links(&g, 0.5, 17).unwrap();
        assert_eq!(s.shortfall, 0, "dense ER graphs have ample non-bridges");
        assert_eq!(
            s.test_positives.len(),
            (0.5 * g.edges.len() as f64).floor() as usize
        );
        assert!(oracle_connected(s.residual.n_nodes, &s.residual.edges));
    }

    #[test]
    fn without_replacement_sampler_respects_bounds() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // 4 nodes -> 6 pairs, 4 edges -> 2 non-edges.
        let all = sample_non_edges_without_replacement(&g, 2, &mut rng).unwrap();
        assert_eq!(all, vec![(0, 2), (1, 3)]);
        assert!(matches!(
            sample_non_edges_without_replacement(&g, 3, &mut rng),
            Err(Error::NotEnoughNonEdges {
                needed: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn with_replacement_sampler_avoids_edges_and_self_loops() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let edges = g.edge_set();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = sample_non_edges_with_replacement(&g, 500, &mut rng).unwrap();
        assert_eq!(draws.len(), 500);
        for &(i, j) in &draws {
            assert!(i < j && j < 5);
            assert!(!edges.contains(&(i, j)));
        }
        // Complete graph: no non-edges to draw.
        let complete = Graph::from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        assert!(sample_non_edges_with_replacement(&complete, 1, &mut rng).is_err());
    }

    proptest! {
        /// Round-trip invariant: parsing the serialization of a parsed graph
        /// reproduces it exactly.
        #[test]
        fn parse_serialize_roundtrip(raw_edges in proptest::collection::vec((0usize..30, 0usize..30), 1..60)) {
            let mut text = String::new();
            let mut any = false;
            for (a, b) in raw_edges {
                if a != b {
                    text.push_str(&format!("{a} {b}\n"));
                    any = true;
                }
            }
            prop_assume!(any);
            let g = Graph::parse(&text).unwrap();
            let again = Graph::parse(&g.serialize()).unwrap();
            prop_assert_eq!(g, again);
        }
    }
}
