//! Louvain community detection and weighted modularity.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::NetworkGraph;
use crate::scalar::Scalar;

pub const DEFAULT_RESOLUTION: f64 = 1.0;

const MAX_PASSES: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommunityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graph has zero total edge weight")]
    ZeroWeight,
    #[error("partition does not cover nodes: {0:?}")]
    NotTotal(Vec<String>),
}

/// Node → cluster assignment with clusters numbered `1..=C` by decreasing
/// size (ties: smallest member id first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: BTreeMap<String, usize>,
    cluster_count: usize,
}

impl Partition {
    /// Normalizes arbitrary group labels into the canonical numbering.
    pub fn from_groups<K: Ord + Clone>(groups: impl IntoIterator<Item = (String, K)>) -> Partition {
        let mut members: BTreeMap<K, Vec<String>> = BTreeMap::new();
        for (node, k) in groups {
            members.entry(k).or_default().push(node);
        }
        let mut clusters: Vec<Vec<String>> = members
            .into_values()
            .map(|mut m| {
                m.sort();
                m
            })
            .collect();
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
        let cluster_count = clusters.len();
        let assignment = clusters
            .into_iter()
            .enumerate()
            .flat_map(|(c, m)| m.into_iter().map(move |n| (n, c + 1)))
            .collect();
        Partition { assignment, cluster_count }
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn cluster_of(&self, node: &str) -> Option<usize> {
        self.assignment.get(node).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    /// Member lists indexed by `cluster_id - 1`.
    pub fn clusters(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (n, &c) in &self.assignment {
            out[c - 1].push(n.as_str());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Weighted Newman modularity `Σ_c [Σin/2m − (Σtot/2m)²]`.
pub fn modularity<S: Scalar>(g: &NetworkGraph<S>, p: &Partition) -> Result<S, CommunityError> {
    modularity_with_resolution(g, p, S::one())
}

pub fn modularity_with_resolution<S: Scalar>(
    g: &NetworkGraph<S>,
    p: &Partition,
    resolution: S,
) -> Result<S, CommunityError> {
    let adj = g.adjacency();
    let missing: Vec<String> = adj.ids.iter().filter(|id| p.cluster_of(id).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(CommunityError::NotTotal(missing));
    }
    let comm: Vec<usize> = adj.ids.iter().map(|id| p.cluster_of(id).expect("checked")).collect();
    let c = p.cluster_count().max(comm.iter().copied().max().unwrap_or(0));
    let mut inner = vec![S::zero(); c + 1];
    let mut tot = vec![S::zero(); c + 1];
    let mut two_m = S::zero();
    // Identical summation order for Σin, Σtot and 2m keeps the one-cluster case exact.
    for (i, nb) in adj.neighbors.iter().enumerate() {
        let mut k = S::zero();
        let mut k_in = S::zero();
        for &(j, w) in nb {
            k = k + w;
            if comm[j] == comm[i] {
                k_in = k_in + w;
            }
        }
        inner[comm[i]] = inner[comm[i]] + k_in;
        tot[comm[i]] = tot[comm[i]] + k;
        two_m = two_m + k;
    }
    if two_m <= S::zero() {
        return Err(CommunityError::ZeroWeight);
    }
    Ok((1..=c)
        .map(|ci| {
            let share = tot[ci] / two_m;
            inner[ci] / two_m - resolution * share * share
        })
        .fold(S::zero(), |a, b| a + b))
}

/// Working graph for one aggregation level.
struct Level<S> {
    neighbors: Vec<Vec<(usize, S)>>,
    strength: Vec<S>,
    self_loops: Vec<S>,
}

impl<S: Scalar> Level<S> {
    fn len(&self) -> usize {
        self.strength.len()
    }

    /// Local-move phase. Returns the community of each node, or `None` when
    /// no node changed community.
    fn local_moves(&self, two_m: S, resolution: S, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.strength.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut link = vec![S::zero(); n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;
        for _ in 0..MAX_PASSES {
            let mut moved = false;
            for &i in &order {
                let ci = comm[i];
                let ki = self.strength[i];
                for &(j, w) in &self.neighbors[i] {
                    let cj = comm[j];
                    if !seen[cj] {
                        seen[cj] = true;
                        touched.push(cj);
                    }
                    link[cj] = link[cj] + w;
                }
                tot[ci] = tot[ci] - ki;
                let gain = |c: usize, link_c: S| link_c - resolution * tot[c] * ki / two_m;
                let stay = gain(ci, link[ci]);
                touched.sort_unstable();
                let mut best = ci;
                let mut best_gain = stay;
                for &c in touched.iter().filter(|&&c| c != ci) {
                    let g = gain(c, link[c]);
                    if g > best_gain {
                        best = c;
                        best_gain = g;
                    }
                }
                let tol = S::epsilon() * S::lit(64.0) * (S::one() + ki);
                if best != ci && best_gain - stay <= tol {
                    best = ci;
                }
                tot[best] = tot[best] + ki;
                if best != ci {
                    comm[i] = best;
                    moved = true;
                    any_move = true;
                }
                for &c in &touched {
                    link[c] = S::zero();
                    seen[c] = false;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        any_move.then_some(comm)
    }

    /// Collapses communities into super-nodes numbered by smallest member.
    fn aggregate(&self, comm: &[usize]) -> (Level<S>, Vec<usize>) {
        let mut renumber: HashMap<usize, usize> = HashMap::new();
        let mut mapping = Vec::with_capacity(comm.len());
        for &c in comm {
            let next = renumber.len();
            mapping.push(*renumber.entry(c).or_insert(next));
        }
        let k = renumber.len();
        let mut strength = vec![S::zero(); k];
        let mut self_loops = vec![S::zero(); k];
        let mut between: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for i in 0..self.len() {
            let ci = mapping[i];
            strength[ci] = strength[ci] + self.strength[i];
            self_loops[ci] = self_loops[ci] + self.self_loops[i];
            for &(j, w) in &self.neighbors[i] {
                if j <= i {
                    continue;
                }
                let cj = mapping[j];
                if ci == cj {
                    self_loops[ci] = self_loops[ci] + w;
                } else {
                    let e = between.entry((ci.min(cj), ci.max(cj))).or_insert_with(S::zero);
                    *e = *e + w;
                }
            }
        }
        let mut neighbors = vec![Vec::new(); k];
        for ((a, b), w) in between {
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for nb in &mut neighbors {
            nb.sort_by_key(|&(j, _)| j);
        }
        (Level { neighbors, strength, self_loops }, mapping)
    }
}

/// Independent Louvain runs per call; the best modularity wins.
pub const LOUVAIN_RESTARTS: u64 = 8;

/// Multi-level Louvain, restarted [`LOUVAIN_RESTARTS`] times from seeds
/// derived from `seed`. Keeps the highest-modularity partition (ties: the
/// earliest run), normalized.
pub fn louvain<S: Scalar>(g: &NetworkGraph<S>, resolution: S, seed: u64) -> Result<Partition, CommunityError> {
    let mut best: Option<(S, Partition)> = None;
    for run in 0..LOUVAIN_RESTARTS {
        let p = louvain_once(g, resolution, splitmix(seed.wrapping_add(run)))?;
        let q = modularity_with_resolution(g, &p, resolution)?;
        if best.as_ref().is_none_or(|(bq, _)| q > *bq) {
            best = Some((q, p));
        }
    }
    Ok(best.expect("at least one run").1)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One multi-level Louvain run. Nodes are visited in id order shuffled by a
/// seeded RNG at every level.
pub fn louvain_once<S: Scalar>(g: &NetworkGraph<S>, resolution: S, seed: u64) -> Result<Partition, CommunityError> {
    if g.is_empty() {
        return Err(CommunityError::EmptyGraph);
    }
    let adj = g.adjacency();
    let strength: Vec<S> = adj.neighbors.iter().map(|nb| nb.iter().map(|&(_, w)| w).sum()).collect();
    let two_m: S = strength.iter().copied().sum();
    if two_m <= S::zero() {
        return Err(CommunityError::ZeroWeight);
    }
    let n = adj.ids.len();
    let mut level = Level { neighbors: adj.neighbors, strength, self_loops: vec![S::zero(); n] };
    let mut membership: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    while let Some(comm) = level.local_moves(two_m, resolution, &mut rng) {
        let (next, mapping) = level.aggregate(&comm);
        for m in membership.iter_mut() {
            *m = mapping[*m];
        }
        if next.len() == level.len() {
            break;
        }
        level = next;
    }

    Ok(Partition::from_groups(adj.ids.into_iter().zip(membership)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityRef, EntityType};

    fn t(id: &str) -> EntityRef {
        EntityRef::new(EntityType::Topic, id, "").unwrap()
    }

    fn graph(edges: &[(&str, &str, f64)]) -> NetworkGraph<f64> {
        let mut g = NetworkGraph::new(EntityType::Topic);
        for &(a, b, s) in edges {
            g.add_link(t(a), t(b), s);
        }
        g
    }

    fn part(groups: &[(&str, usize)]) -> Partition {
        Partition::from_groups(groups.iter().map(|(n, c)| (format!("{n}###"), *c)))
    }

    fn two_triangles(bridge: bool) -> NetworkGraph<f64> {
        let mut e = vec![("a", "b", 1.0), ("b", "c", 1.0), ("a", "c", 1.0), ("d", "e", 1.0), ("e", "f", 1.0), ("d", "f", 1.0)];
        if bridge {
            e.push(("c", "d", 1.0));
        }
        graph(&e)
    }

    #[test]
    fn normalization_orders_by_size_then_member() {
        let p = part(&[("z", 7), ("y", 7), ("a", 3), ("m", 9), ("n", 9)]);
        assert_eq!(p.cluster_count(), 3);
        assert_eq!(p.cluster_of("m###"), Some(1));
        assert_eq!(p.cluster_of("y###"), Some(2));
        assert_eq!(p.cluster_of("a###"), Some(3));
    }

    #[test]
    fn restarts_escape_the_merge_trap() {
        // one visiting order merges all four nodes; Q* = 7/242 for {a,c} {b,d}
        let g = graph(&[("a", "b", 4.0), ("a", "c", 4.0), ("a", "d", 1.0), ("b", "d", 2.0)]);
        let trapped = (0..64).filter(|&s| louvain_once(&g, 1.0, s).unwrap().cluster_count() == 1).count();
        assert!(trapped > 0);
        for seed in 0..64 {
            let q = modularity(&g, &louvain(&g, 1.0, seed).unwrap()).unwrap();
            assert!((q - 7.0 / 242.0).abs() < 1e-12, "seed {seed}: {q}");
        }
    }

    #[test]
    fn one_cluster_is_zero() {
        let g = two_triangles(true);
        let p = Partition::from_groups(g.nodes().keys().map(|k| (k.clone(), 0)));
        assert_eq!(modularity(&g, &p).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_triangles_half() {
        let g = two_triangles(false);
        let p = part(&[("a", 0), ("b", 0), ("c", 0), ("d", 1), ("e", 1), ("f", 1)]);
        assert!((modularity(&g, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn k4_split_in_pairs_is_negative() {
        let g = graph(&[("a", "b", 1.0), ("a", "c", 1.0), ("a", "d", 1.0), ("b", "c", 1.0), ("b", "d", 1.0), ("c", "d", 1.0)]);
        let p = part(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)]);
        // 2 × (2/12 − (6/12)²) = −1/6
        assert!((modularity(&g, &p).unwrap() + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn modularity_errors() {
        let g = two_triangles(false);
        assert!(matches!(modularity(&g, &part(&[("a", 0)])), Err(CommunityError::NotTotal(_))));
        let mut g0 = NetworkGraph::<f64>::new(EntityType::Topic);
        g0.add_link(t("a"), t("b"), 0.0);
        let p = part(&[("a", 0), ("b", 0)]);
        assert_eq!(modularity(&g0, &p), Err(CommunityError::ZeroWeight));
        assert_eq!(louvain(&g0, 1.0, 0), Err(CommunityError::ZeroWeight));
        assert_eq!(louvain(&NetworkGraph::<f64>::new(EntityType::Topic), 1.0, 0), Err(CommunityError::EmptyGraph));
    }

    #[test]
    fn bridge_graph_recovers_triangles() {
        let g = two_triangles(true);
        for seed in 0..20 {
            let p = louvain(&g, 1.0, seed).unwrap();
            assert_eq!(p.cluster_count(), 2, "seed {seed}");
            assert_eq!(p.cluster_of("a###"), p.cluster_of("c###"));
            assert_eq!(p.cluster_of("d###"), p.cluster_of("f###"));
            assert_ne!(p.cluster_of("a###"), p.cluster_of("d###"));
        }
    }

    #[test]
    fn single_edge_merges() {
        let p = louvain(&graph(&[("a", "b", 1.0)]), 1.0, 3).unwrap();
        assert_eq!(p.cluster_count(), 1);
    }

    #[test]
    fn isolated_edges_stay_apart() {
        let p = louvain(&graph(&[("a", "b", 1.0), ("c", "d", 2.0), ("e", "f", 1.0)]), 1.0, 9).unwrap();
        assert_eq!(p.cluster_count(), 3);
        assert_eq!(p.cluster_of("a###"), Some(1));
        assert_eq!(p.cluster_of("c###"), Some(2));
    }

    #[test]
    fn deterministic_and_f32() {
        let g = two_triangles(true);
        assert_eq!(louvain(&g, 1.0, 5).unwrap(), louvain(&g, 1.0, 5).unwrap());
        let mut g32 = NetworkGraph::<f32>::new(EntityType::Topic);
        for (a, b, w) in [("a", "b", 1.0), ("b", "c", 1.0), ("a", "c", 1.0), ("c", "d", 1.0), ("d", "e", 1.0), ("e", "f", 1.0), ("d", "f", 1.0)] {
            g32.add_link(t(a), t(b), w);
        }
        assert_eq!(louvain(&g32, 1.0, 5).unwrap(), louvain(&g, 1.0, 5).unwrap());
    }
}
