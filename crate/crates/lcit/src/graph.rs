//! Ground-truth DAG utilities: d-separation and extraction of labeled
//! (x, y, Z) test triplets from a known network. Adjacent pairs stay
//! conditionally dependent under any conditioning set; non-adjacent pairs are
//! d-separated by the union of their parent sets.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Hypothesis;
use crate::rng::rng_from;

/// A directed acyclic graph with named nodes.
#[derive(Debug, Clone)]
pub struct GroundTruthGraph {
    names: Vec<String>,
    parents: Vec<BTreeSet<usize>>,
    children: Vec<BTreeSet<usize>>,
}

/// One extracted CI-test case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Triplet {
    pub x: usize,
    pub y: usize,
    pub z: Vec<usize>,
    pub label: Hypothesis,
}

impl GroundTruthGraph {
    pub fn new(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = names.len();
        let mut parents = vec![BTreeSet::new(); n];
        let mut children = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Config(format!("edge ({u},{v}) references unknown node")));
            }
            if u == v {
                return Err(Error::Config(format!("self loop at node {u}")));
            }
            parents[v].insert(u);
            children[u].insert(v);
        }
        let graph = GroundTruthGraph {
            names,
            parents,
            children,
        };
        if !graph.is_acyclic() {
            return Err(Error::Config("edge set contains a cycle".into()));
        }
        Ok(graph)
    }

    /// Parse a "source<TAB>target" edge-list file; nodes are registered in
    /// order of first appearance.
    pub fn from_edge_list_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut names: Vec<String> = Vec::new();
        let mut edges = Vec::new();
        let index_of = |names: &mut Vec<String>, name: &str| -> usize {
            match names.iter().position(|existing| existing == name) {
                Some(i) => i,
                None => {
                    names.push(name.to_string());
                    names.len() - 1
                }
            }
        };
        for (line_no, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (src, dst) = match (parts.next(), parts.next()) {
                (Some(s), Some(d)) if !s.is_empty() && !d.is_empty() => (s, d),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: expected 'source<TAB>target', got {line:?}",
                        line_no + 1
                    )))
                }
            };
            let u = index_of(&mut names, src);
            let v = index_of(&mut names, dst);
            edges.push((u, v));
        }
        GroundTruthGraph::new(names, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.children[u].contains(&v)
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.has_edge(u, v) || self.has_edge(v, u)
    }

    fn is_acyclic(&self) -> bool {
        // Kahn's algorithm.
        let n = self.n_nodes();
        let mut indegree: Vec<usize> = (0..n).map(|v| self.parents[v].len()).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        seen == n
    }

    /// Descendants of v, excluding v itself.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = self.children[v].iter().copied().collect();
        while let Some(w) = stack.pop() {
            if out.insert(w) {
                stack.extend(self.children[w].iter().copied());
            }
        }
        out
    }

    fn ancestors_closure(&self, seeds: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = seeds.clone();
        let mut stack: Vec<usize> = seeds.iter().copied().collect();
        while let Some(w) = stack.pop() {
            for &p in &self.parents[w] {
                if out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// d-separation via the moralized ancestral graph: restrict to ancestors
    /// of {x, y} ∪ Z, marry co-parents, drop Z, and test undirected
    /// reachability.
    pub fn d_separated(&self, x: usize, y: usize, z: &BTreeSet<usize>) -> bool {
        if x == y {
            return false;
        }
        let mut seeds: BTreeSet<usize> = z.clone();
        seeds.insert(x);
        seeds.insert(y);
        let keep = self.ancestors_closure(&seeds);

        let n = self.n_nodes();
        let mut undirected = vec![BTreeSet::new(); n];
        for v in keep.iter().copied() {
            for &p in &self.parents[v] {
                if keep.contains(&p) {
                    undirected[v].insert(p);
                    undirected[p].insert(v);
                }
            }
            // Marry parents of a common child.
            let ps: Vec<usize> = self.parents[v].iter().copied().filter(|p| keep.contains(p)).collect();
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    undirected[ps[i]].insert(ps[j]);
                    undirected[ps[j]].insert(ps[i]);
                }
            }
        }

        // BFS from x avoiding Z.
        let mut visited = vec![false; n];
        let mut stack = vec![x];
        visited[x] = true;
        while let Some(v) = stack.pop() {
            for &w in &undirected[v] {
                if w == y {
                    return false;
                }
                if !visited[w] && !z.contains(&w) {
                    visited[w] = true;
                    stack.push(w);
                }
            }
        }
        true
    }
}

/// Exhaustive path-blocking d-separation check: enumerates every simple
/// undirected path and applies the collider/non-collider blocking rules.
/// Exponential; intended as an independent oracle on small graphs.
pub fn brute_force_d_separated(graph: &GroundTruthGraph, x: usize, y: usize, z: &BTreeSet<usize>) -> bool {
    fn path_active(graph: &GroundTruthGraph, path: &[usize], z: &BTreeSet<usize>) -> bool {
        for w in path.windows(3) {
            let (a, m, b) = (w[0], w[1], w[2]);
            let collider = graph.has_edge(a, m) && graph.has_edge(b, m);
            if collider {
                let mut opened = z.contains(&m);
                if !opened {
                    opened = graph.descendants(m).iter().any(|d| z.contains(d));
                }
                if !opened {
                    return false;
                }
            } else if z.contains(&m) {
                return false;
            }
        }
        true
    }

    fn dfs(
        graph: &GroundTruthGraph,
        current: usize,
        target: usize,
        z: &BTreeSet<usize>,
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
    ) -> bool {
        if current == target {
            return path_active(graph, path, z);
        }
        for next in 0..graph.n_nodes() {
            if !on_path[next] && graph.adjacent(current, next) {
                path.push(next);
                on_path[next] = true;
                if dfs(graph, next, target, z, path, on_path) {
                    return true;
                }
                on_path[next] = false;
                path.pop();
            }
        }
        false
    }

    let mut path = vec![x];
    let mut on_path = vec![false; graph.n_nodes()];
    on_path[x] = true;
    !dfs(graph, x, y, z, &mut path, &mut on_path)
}

/// Extract class-balanced labeled triplets from a ground-truth DAG.
///
/// Dependent triplets pair adjacent nodes with a random conditioning set
/// drawn from the non-descendants of both endpoints. Independent triplets
/// pair non-adjacent nodes with the union of their parent sets.
pub fn extract_triplets(
    graph: &GroundTruthGraph,
    n_ci: usize,
    n_dep: usize,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let n = graph.n_nodes();
    let mut rng = rng_from(seed, 0x73D1);

    let mut independent = Vec::new();
    let mut dependent_pairs = Vec::new();
    for x in 0..n {
        for y in x + 1..n {
            if graph.adjacent(x, y) {
                dependent_pairs.push((x, y));
            } else {
                let mut z: BTreeSet<usize> = graph.parents(x).union(graph.parents(y)).copied().collect();
                z.remove(&x);
                z.remove(&y);
                independent.push(Triplet {
                    x,
                    y,
                    z: z.into_iter().collect(),
                    label: Hypothesis::H0,
                });
            }
        }
    }

    if independent.len() < n_ci {
        return Err(Error::InsufficientTriplets {
            requested: n_ci,
            found: independent.len(),
        });
    }
    if dependent_pairs.len() < n_dep {
        return Err(Error::InsufficientTriplets {
            requested: n_dep,
            found: dependent_pairs.len(),
        });
    }

    independent.shuffle(&mut rng);
    independent.truncate(n_ci);

    dependent_pairs.shuffle(&mut rng);
    dependent_pairs.truncate(n_dep);
    let mut out = independent;
    for (x, y) in dependent_pairs {
        let blocked: BTreeSet<usize> = graph
            .descendants(x)
            .union(&graph.descendants(y))
            .copied()
            .collect();
        let z: Vec<usize> = (0..n)
            .filter(|&v| v != x && v != y && !blocked.contains(&v) && rng.gen_bool(0.5))
            .collect();
        out.push(Triplet {
            x,
            y,
            z,
            label: Hypothesis::H1,
        });
    }
    Ok(out)
}

/// Random DAG over `n_nodes` with independent edges in topological order.
pub fn random_dag(n_nodes: usize, edge_prob: f64, seed: u64) -> GroundTruthGraph {
    let mut rng = rng_from(seed, 0xDA61);
    let names = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in i + 1..n_nodes {
            if rng.gen_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    GroundTruthGraph::new(names, &edges).expect("topological construction is acyclic")
}
