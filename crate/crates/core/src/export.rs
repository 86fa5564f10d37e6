//! VOSviewer-Online JSON export and validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::communities::Partition;
use crate::enrich::ClusterInfo;
use crate::graph::NetworkGraph;
use crate::layout::LayoutResult;
use crate::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExportError {
    #[error("layout is missing nodes: {0:?}")]
    MissingLayout(Vec<String>),
    #[error("partition is missing nodes: {0:?}")]
    MissingCluster(Vec<String>),
    #[error("non-finite coordinate for {0}")]
    NonFinite(String),
}

// Integral values print as integers so that files diff cleanly against
// hand-written VOSviewer maps.
fn number<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    const EXACT: f64 = 9_007_199_254_740_992.0;
    if v.fract() == 0.0 && v.abs() < EXACT {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemWeights {
    #[serde(rename = "Links")]
    pub links: u64,
    #[serde(rename = "Total link strength", serialize_with = "number")]
    pub total_link_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    #[serde(rename = "Citation score", serialize_with = "number")]
    pub citation_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VosItem {
    pub id: String,
    pub label: String,
    #[serde(serialize_with = "number")]
    pub x: f64,
    #[serde(serialize_with = "number")]
    pub y: f64,
    pub cluster: usize,
    pub weights: ItemWeights,
    pub scores: ItemScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VosLink {
    pub source_id: String,
    pub target_id: String,
    #[serde(serialize_with = "number")]
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VosCluster {
    pub cluster: usize,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VosNetwork {
    pub items: Vec<VosItem>,
    pub links: Vec<VosLink>,
    pub clusters: Vec<VosCluster>,
}

/// A VOSviewer map file: `{"network": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VosDocument {
    pub network: VosNetwork,
}

impl VosDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("VosDocument serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Builds the document. `infos` supplies cluster names and citation scores;
/// clusters without an entry get an empty name and a zero score.
pub fn to_vosviewer<S: Scalar>(
    g: &NetworkGraph<S>,
    layout: &LayoutResult<S>,
    partition: &Partition,
    infos: &[ClusterInfo],
) -> Result<VosDocument, ExportError> {
    let missing = |has: &dyn Fn(&str) -> bool| -> Vec<String> {
        g.nodes().keys().filter(|id| !has(id)).cloned().collect()
    };
    let no_pos = missing(&|id| layout.get(id).is_some());
    if !no_pos.is_empty() {
        return Err(ExportError::MissingLayout(no_pos));
    }
    let no_cluster = missing(&|id| partition.cluster_of(id).is_some());
    if !no_cluster.is_empty() {
        return Err(ExportError::MissingCluster(no_cluster));
    }

    let info: BTreeMap<usize, &ClusterInfo> = infos.iter().map(|i| (i.cluster_id, i)).collect();
    let degrees = g.degrees();
    let mut items = Vec::with_capacity(g.node_count());
    for (id, node) in g.nodes() {
        let (x, y) = layout.get(id).expect("checked above");
        let (x, y) = (x.as_f64(), y.as_f64());
        if !x.is_finite() || !y.is_finite() {
            return Err(ExportError::NonFinite(id.clone()));
        }
        let cluster = partition.cluster_of(id).expect("checked above");
        items.push(VosItem {
            id: id.clone(),
            label: node.entity.label.clone(),
            x,
            y,
            cluster,
            weights: ItemWeights {
                links: degrees.get(id.as_str()).copied().unwrap_or(0) as u64,
                total_link_strength: node.weight.as_f64(),
            },
            scores: ItemScores { citation_score: info.get(&cluster).map_or(0.0, |i| i.citation_score) },
        });
    }
    let links = g
        .edges()
        .map(|(a, b, w)| VosLink { source_id: a.to_string(), target_id: b.to_string(), strength: w.as_f64() })
        .collect();
    let clusters = (1..=partition.cluster_count())
        .map(|c| VosCluster { cluster: c, label: info.get(&c).map(|i| i.name.clone()).unwrap_or_default() })
        .collect();
    Ok(VosDocument { network: VosNetwork { items, links, clusters } })
}

/// Lists every structural problem in a VOSviewer JSON text. Empty means valid.
pub fn validate(json: &str) -> Vec<String> {
    let root: Value = match serde_json::from_str(json) {
        Ok(v) => v,
        Err(e) => return vec![format!("not valid JSON: {e}")],
    };
    let Some(network) = root.get("network").and_then(Value::as_object) else {
        return vec!["missing object `network`".into()];
    };
    let mut out = Vec::new();
    let items = network.get("items").and_then(Value::as_array);
    let links = network.get("links").and_then(Value::as_array);
    if items.is_none() {
        out.push("missing array `network.items`".into());
    }
    if links.is_none() {
        out.push("missing array `network.links`".into());
    }

    let mut ids = BTreeSet::new();
    let mut clusters = BTreeSet::new();
    for (i, item) in items.into_iter().flatten().enumerate() {
        let at = format!("items[{i}]");
        match item.get("id").and_then(Value::as_str) {
            Some(id) if !id.is_empty() => {
                if !ids.insert(id.to_string()) {
                    out.push(format!("{at}: duplicate id {id:?}"));
                }
            }
            _ => out.push(format!("{at}: missing string `id`")),
        }
        if item.get("label").and_then(Value::as_str).is_none() {
            out.push(format!("{at}: missing string `label`"));
        }
        for axis in ["x", "y"] {
            match item.get(axis).and_then(Value::as_f64) {
                Some(v) if v.is_finite() => {}
                Some(_) => out.push(format!("{at}: `{axis}` is not finite")),
                None => out.push(format!("{at}: missing number `{axis}`")),
            }
        }
        match item.get("cluster").and_then(Value::as_u64) {
            Some(c) if c >= 1 => {
                clusters.insert(c);
            }
            _ => out.push(format!("{at}: `cluster` must be an integer >= 1")),
        }
        let weights = item.get("weights");
        if weights.and_then(|w| w.get("Links")).and_then(Value::as_u64).is_none() {
            out.push(format!("{at}: missing integer `weights.Links`"));
        }
        if weights.and_then(|w| w.get("Total link strength")).and_then(Value::as_f64).is_none() {
            out.push(format!("{at}: missing number `weights.Total link strength`"));
        }
        if item.get("scores").and_then(|s| s.get("Citation score")).and_then(Value::as_f64).is_none() {
            out.push(format!("{at}: missing number `scores.Citation score`"));
        }
    }

    for (i, link) in links.into_iter().flatten().enumerate() {
        let at = format!("links[{i}]");
        for end in ["source_id", "target_id"] {
            match link.get(end).and_then(Value::as_str) {
                Some(id) if ids.contains(id) => {}
                Some(id) => out.push(format!("{at}: `{end}` {id:?} is not an item")),
                None => out.push(format!("{at}: missing string `{end}`")),
            }
        }
        match link.get("strength").and_then(Value::as_f64) {
            Some(s) if s.is_finite() && s > 0.0 => {}
            _ => out.push(format!("{at}: `strength` must be a positive number")),
        }
    }

    if let Some(&max) = clusters.last() {
        if max != clusters.len() as u64 {
            let gaps: Vec<u64> = (1..=max).filter(|c| !clusters.contains(c)).collect();
            out.push(format!("cluster ids are not contiguous from 1: missing {gaps:?}"));
        }
    }
    if let Some(entries) = network.get("clusters") {
        match entries.as_array() {
            Some(entries) => {
                for (i, c) in entries.iter().enumerate() {
                    match c.get("cluster").and_then(Value::as_u64) {
                        Some(id) if clusters.contains(&id) => {}
                        _ => out.push(format!("clusters[{i}]: unknown cluster")),
                    }
                    if c.get("label").and_then(Value::as_str).is_none() {
                        out.push(format!("clusters[{i}]: missing string `label`"));
                    }
                }
            }
            None => out.push("`network.clusters` must be an array".into()),
        }
    }
    out
}
