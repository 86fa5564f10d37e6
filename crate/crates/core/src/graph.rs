//! Weighted co-occurrence graph and its two-stage reduction.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::corpus::{EntityRef, EntityType, RecordError};
use crate::index::LinkAggregate;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_NODES: usize = 300;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed pair key `{key}`: {source}")]
    MalformedKey {
        key: String,
        #[source]
        source: RecordError,
    },
    #[error("max_nodes must be at least 2, got {0}")]
    InvalidCap(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeData<S> {
    pub entity: EntityRef,
    /// Sum of incident aggregated strengths at build time; filtering never changes it.
    pub weight: S,
}

/// Undirected weighted graph keyed by `id###label` node ids.
/// Edges are stored once, under `(lo, hi)` with `lo < hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph<S> {
    entity_type: EntityType,
    nodes: BTreeMap<String, NodeData<S>>,
    edges: BTreeMap<(String, String), S>,
}

/// Index-based view of a graph with nodes in id order.
#[derive(Debug, Clone)]
pub struct Adjacency<S> {
    pub ids: Vec<String>,
    pub neighbors: Vec<Vec<(usize, S)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterConfig {
    pub max_nodes: usize,
}

impl FilterConfig {
    pub fn new(max_nodes: usize) -> Result<Self, GraphError> {
        if max_nodes < 2 {
            return Err(GraphError::InvalidCap(max_nodes));
        }
        Ok(FilterConfig { max_nodes })
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { max_nodes: DEFAULT_MAX_NODES }
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl<S: Scalar> NetworkGraph<S> {
    pub fn new(entity_type: EntityType) -> Self {
        NetworkGraph { entity_type, nodes: BTreeMap::new(), edges: BTreeMap::new() }
    }

    pub fn entity_type(&self) -> EntityType {
        self.entity_type
    }

    /// Adds `strength` to the edge between two entities, creating nodes as needed,
    /// and adds it to both endpoint weights. Self-loops are ignored.
    pub fn add_link(&mut self, a: EntityRef, b: EntityRef, strength: S) {
        if a.id == b.id {
            return;
        }
        let (ka, kb) = (a.serialized(), b.serialized());
        for (k, e) in [(ka.clone(), a), (kb.clone(), b)] {
            let node = self.nodes.entry(k).or_insert(NodeData { entity: e, weight: S::zero() });
            node.weight = node.weight + strength;
        }
        let e = self.edges.entry(ordered(&ka, &kb)).or_insert_with(S::zero);
        *e = *e + strength;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &BTreeMap<String, NodeData<S>> {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&NodeData<S>> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Edges as `((lo, hi), strength)` in key order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, S)> + '_ {
        self.edges.iter().map(|((a, b), s)| (a.as_str(), b.as_str(), *s))
    }

    pub fn strength(&self, a: &str, b: &str) -> Option<S> {
        self.edges.get(&ordered(a, b)).copied()
    }

    pub fn total_strength(&self) -> S {
        self.edges.values().copied().sum()
    }

    pub fn degrees(&self) -> BTreeMap<&str, usize> {
        let mut deg: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (a, b) in self.edges.keys() {
            *deg.get_mut(a.as_str()).expect("endpoint exists") += 1;
            *deg.get_mut(b.as_str()).expect("endpoint exists") += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Adjacency<S> {
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut neighbors = vec![Vec::new(); ids.len()];
        for ((a, b), s) in &self.edges {
            let (i, j) = (pos[a.as_str()], pos[b.as_str()]);
            neighbors[i].push((j, *s));
            neighbors[j].push((i, *s));
        }
        for n in &mut neighbors {
            n.sort_by_key(|&(j, _)| j);
        }
        Adjacency { ids, neighbors }
    }

    /// Subgraph induced by `keep`; node data is copied unchanged.
    pub fn induced(&self, keep: &BTreeSet<&str>) -> Self {
        NetworkGraph {
            entity_type: self.entity_type,
            nodes: self
                .nodes
                .iter()
                .filter(|(k, _)| keep.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|((a, b), _)| keep.contains(a.as_str()) && keep.contains(b.as_str()))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Connected components, each sorted by node id, listed by smallest member.
    pub fn components(&self) -> Vec<Vec<String>> {
        let adj = self.adjacency();
        let mut seen = vec![false; adj.ids.len()];
        let mut out = Vec::new();
        for start in 0..adj.ids.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut members = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &adj.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members.into_iter().map(|i| adj.ids[i].clone()).collect());
        }
        out
    }
}

/// One node per distinct half, one edge per key with strength = doc_count.
pub fn build_graph<S: Scalar>(aggs: &[LinkAggregate], entity_type: EntityType) -> Result<NetworkGraph<S>, GraphError> {
    let mut g = NetworkGraph::new(entity_type);
    for agg in aggs {
        let (a, b) = agg
            .key
            .endpoints(entity_type)
            .map_err(|source| GraphError::MalformedKey { key: agg.key.to_string(), source })?;
        if a.id == b.id {
            return Err(GraphError::MalformedKey {
                key: agg.key.to_string(),
                source: RecordError::Invalid("self-pair".into()),
            });
        }
        g.add_link(a, b, S::from_count(agg.doc_count as usize));
    }
    Ok(g)
}

/// Removes the smallest component (ties: smallest member id) while the graph
/// exceeds the cap and has more than one component.
pub fn filter_components<S: Scalar>(g: &NetworkGraph<S>, cfg: &FilterConfig) -> NetworkGraph<S> {
    let mut comps = g.components();
    comps.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a[0].cmp(&b[0])));
    let mut remaining = g.node_count();
    let mut drop = 0;
    while remaining > cfg.max_nodes && comps.len() - drop > 1 {
        remaining -= comps[drop].len();
        drop += 1;
    }
    if drop == 0 {
        return g.clone();
    }
    let keep: BTreeSet<&str> = comps[drop..].iter().flatten().map(String::as_str).collect();
    g.induced(&keep)
}

/// Unnormalized shortest-path betweenness with hop-count paths (Brandes).
/// Each unordered endpoint pair contributes once.
pub fn betweenness<S: Scalar>(g: &NetworkGraph<S>) -> BTreeMap<String, S> {
    let adj = g.adjacency();
    let n = adj.ids.len();
    let mut centrality = vec![S::zero(); n];
    let mut sigma = vec![S::zero(); n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![S::zero(); n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);

    for s in 0..n {
        order.clear();
        for v in 0..n {
            sigma[v] = S::zero();
            dist[v] = usize::MAX;
            delta[v] = S::zero();
            preds[v].clear();
        }
        sigma[s] = S::one();
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(w, _) in &adj.neighbors[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] = sigma[w] + sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = order.pop() {
            for &v in &preds[w] {
                delta[v] = delta[v] + sigma[v] / sigma[w] * (S::one() + delta[w]);
            }
            if w != s {
                centrality[w] = centrality[w] + delta[w];
            }
        }
    }

    let half = S::lit(0.5);
    adj.ids.into_iter().zip(centrality).map(|(id, c)| (id, c * half)).collect()
}

/// Keeps the `max_nodes` highest-betweenness nodes (ties: weight descending,
/// then id), drops isolated nodes and keeps the largest remaining component.
pub fn filter_betweenness<S: Scalar>(g: &NetworkGraph<S>, cfg: &FilterConfig) -> NetworkGraph<S> {
    if g.node_count() <= cfg.max_nodes {
        return g.clone();
    }
    let bc = betweenness(g);
    let mut ranked: Vec<(&str, S, S)> =
        g.nodes.iter().map(|(k, d)| (k.as_str(), bc[k], d.weight)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.0.cmp(b.0))
    });
    let keep: BTreeSet<&str> = ranked.iter().take(cfg.max_nodes).map(|r| r.0).collect();
    let sub = g.induced(&keep);

    let comps = sub.components();
    let Some(best) = comps
        .iter()
        .filter(|c| c.len() > 1)
        .min_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])))
    else {
        return NetworkGraph::new(g.entity_type);
    };
    if best.len() == sub.node_count() {
        return sub;
    }
    let keep: BTreeSet<&str> = best.iter().map(String::as_str).collect();
    sub.induced(&keep)
}
