//! End-to-end map construction for one request.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::communities::{self, CommunityError, Partition, DEFAULT_RESOLUTION};
use crate::corpus::{EntityType, Publication};
use crate::enrich::{self, ClusterInfo, LabelClient, LabelSource, DEFAULT_TOPIC_PUBLICATIONS};
use crate::export::{self, ExportError, VosDocument};
use crate::graph::{self, FilterConfig, GraphError, DEFAULT_MAX_NODES};
use crate::index::{CorpusIndex, QuerySpec, DEFAULT_TOP_LINKS};
use crate::layout::{self, LayoutError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelingMode {
    Llm,
    #[default]
    Fallback,
    Off,
}

impl std::str::FromStr for LabelingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(LabelingMode::Llm),
            "fallback" => Ok(LabelingMode::Fallback),
            "off" => Ok(LabelingMode::Off),
            other => Err(format!("unknown labeling mode {other:?} (expected llm, fallback or off)")),
        }
    }
}

impl LabelingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelingMode::Llm => "llm",
            LabelingMode::Fallback => "fallback",
            LabelingMode::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkRequest {
    pub q: String,
    pub model: EntityType,
    pub max_nodes: usize,
    pub top_links: usize,
    pub perimeter_id: Option<String>,
    pub seed: Option<u64>,
    pub labeling: LabelingMode,
}

impl Default for NetworkRequest {
    fn default() -> Self {
        NetworkRequest {
            q: String::new(),
            model: EntityType::Topic,
            max_nodes: DEFAULT_MAX_NODES,
            top_links: DEFAULT_TOP_LINKS,
            perimeter_id: None,
            seed: None,
            labeling: LabelingMode::default(),
        }
    }
}

impl NetworkRequest {
    pub fn new(q: impl Into<String>) -> Self {
        NetworkRequest { q: q.into(), ..Default::default() }
    }

    /// The explicit seed, or one derived from the request fields that shape
    /// the map. Labeling mode is left out so it never moves nodes.
    pub fn effective_seed(&self) -> u64 {
        if let Some(seed) = self.seed {
            return seed;
        }
        let canonical = serde_json::json!([
            self.q,
            self.model.as_str(),
            self.max_nodes,
            self.top_links,
            self.perimeter_id,
        ]);
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

/// Wall-clock duration of each stage, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings(pub Vec<(&'static str, Duration)>);

impl StageTimings {
    fn record<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push((stage, start.elapsed()));
        out
    }

    pub fn total(&self) -> Duration {
        self.0.iter().map(|(_, d)| *d).sum()
    }

    /// `Server-Timing` header value.
    pub fn header_value(&self) -> String {
        let parts: Vec<String> =
            self.0.iter().map(|(name, d)| format!("{name};dur={:.3}", d.as_secs_f64() * 1e3)).collect();
        parts.join(", ")
    }

    /// Milliseconds per stage.
    pub fn as_millis(&self) -> BTreeMap<String, f64> {
        self.0.iter().map(|(name, d)| (name.to_string(), d.as_secs_f64() * 1e3)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub matched_docs: usize,
    pub aggregated_links: usize,
    pub nodes_built: usize,
    pub nodes_after_components: usize,
    pub nodes_after_betweenness: usize,
    pub edges: usize,
    pub clusters: usize,
    pub modularity: f64,
    pub seed: u64,
    pub labeling: LabelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

/// Response body: a VOSviewer document with diagnostics alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkResponse {
    #[serde(flatten)]
    pub document: VosDocument,
    pub diagnostics: Diagnostics,
}

impl NetworkResponse {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("response serializes")
    }
}

/// Everything a request needs besides its own parameters.
pub struct PipelineContext<'a> {
    pub index: &'a CorpusIndex,
    /// Used when the request asks for `llm` labeling; `None` falls back.
    pub label_client: Option<&'a dyn LabelClient>,
    pub current_year: i32,
}

/// Runs the pipeline. `perimeter` is the resolved publication set, if the
/// request names one.
pub fn run_pipeline(
    ctx: &PipelineContext<'_>,
    req: &NetworkRequest,
    perimeter: Option<&BTreeSet<String>>,
) -> Result<(NetworkResponse, StageTimings), PipelineError> {
    let filter = FilterConfig::new(req.max_nodes)?;
    let seed = req.effective_seed();
    let mut timings = StageTimings::default();

    let spec = QuerySpec {
        text: req.q.clone(),
        entity_type: req.model,
        top_links: req.top_links,
        perimeter: perimeter.cloned(),
    };
    let matched = timings.record("query", || ctx.index.match_query(&spec));
    let aggs = timings.record("aggregate", || ctx.index.aggregate_links(&matched, req.model, req.top_links));
    let built = timings.record("build", || graph::build_graph::<f64>(&aggs, req.model))?;
    let by_components = timings.record("filter_components", || graph::filter_components(&built, &filter));
    let g = timings.record("filter_betweenness", || graph::filter_betweenness(&by_components, &filter));

    let mut diagnostics = Diagnostics {
        matched_docs: matched.len(),
        aggregated_links: aggs.len(),
        nodes_built: built.node_count(),
        nodes_after_components: by_components.node_count(),
        nodes_after_betweenness: g.node_count(),
        edges: g.edge_count(),
        clusters: 0,
        modularity: 0.0,
        seed,
        labeling: match req.labeling {
            LabelingMode::Off => LabelSource::Off,
            LabelingMode::Llm if ctx.label_client.is_some() => LabelSource::Llm,
            _ => LabelSource::Fallback,
        },
        timings_ms: None,
    };
    if g.is_empty() {
        return Ok((NetworkResponse { document: VosDocument::default(), diagnostics }, timings));
    }

    let positions = timings.record("layout", || layout::run_layout(&g, &layout::infer_settings(g.node_count(), seed)))?;
    let partition = timings.record("cluster", || communities::louvain(&g, DEFAULT_RESOLUTION, seed))?;
    diagnostics.clusters = partition.cluster_count();
    diagnostics.modularity = communities::modularity(&g, &partition)?;

    let ranked = ctx.index.top_publications(&matched, usize::MAX);
    let (infos, source) = timings.record("label", || describe_clusters(ctx, req, &partition, &ranked));
    diagnostics.labeling = source;
    let document = timings.record("export", || export::to_vosviewer(&g, &positions, &partition, &infos))?;
    Ok((NetworkResponse { document, diagnostics }, timings))
}

fn describe_clusters(
    ctx: &PipelineContext<'_>,
    req: &NetworkRequest,
    partition: &Partition,
    ranked: &[&Publication],
) -> (Vec<ClusterInfo>, LabelSource) {
    let assigned = enrich::assign_publications(partition, ranked, req.model);
    let lists = enrich::topic_lists(&assigned, ranked, DEFAULT_TOPIC_PUBLICATIONS);
    let (names, source) = match req.labeling {
        LabelingMode::Off => (BTreeMap::new(), LabelSource::Off),
        LabelingMode::Fallback => enrich::label_clusters(&lists, None),
        LabelingMode::Llm => enrich::label_clusters(&lists, ctx.label_client),
    };
    let by_id: BTreeMap<&str, &Publication> = ranked.iter().map(|p| (p.pub_id.as_str(), *p)).collect();
    let infos = assigned
        .iter()
        .map(|(&cluster_id, ids)| {
            let score = enrich::citation_score(ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()), ctx.current_year);
            ClusterInfo {
                cluster_id,
                name: names.get(&cluster_id).cloned().unwrap_or_default(),
                citation_score: score.score,
                publication_count: score.publication_count,
                recent_citations: score.recent_citations,
            }
        })
        .collect();
    (infos, source)
}
