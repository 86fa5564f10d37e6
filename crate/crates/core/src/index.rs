//! In-memory inverted index with terms-aggregation over precomputed pair keys.
//!
//! Documents are stored sorted by `pub_id`, so every derived structure is
//! independent of the order records were supplied in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compute_pairs, parse_publication, passes_author_filter, EntityType, PairKey, Publication};

pub const DEFAULT_TOP_LINKS: usize = 2000;
pub const DEFAULT_TOP_PUBLICATIONS: usize = 2000;

const TITLE_WEIGHT: u64 = 3;
const ABSTRACT_WEIGHT: u64 = 1;
const ENTITY_WEIGHT: u64 = 2;

const SNAPSHOT_MAGIC: &[u8; 8] = b"NETMAPIX";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate pub_id `{0}`")]
    DuplicateId(String),
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A pair key with the number of matched documents carrying it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkAggregate {
    pub key: PairKey,
    pub doc_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    /// Empty text matches every document.
    pub text: String,
    pub entity_type: EntityType,
    pub top_links: usize,
    pub perimeter: Option<BTreeSet<String>>,
}

impl QuerySpec {
    pub fn new(text: impl Into<String>) -> Self {
        QuerySpec {
            text: text.into(),
            entity_type: EntityType::Topic,
            top_links: DEFAULT_TOP_LINKS,
            perimeter: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IndexConfig {
    pub max_authors: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { max_authors: crate::corpus::DEFAULT_MAX_AUTHORS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hit {
    doc: u32,
    score: u64,
}

/// Documents matching a query, with relevance scores. Sorted by document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matched {
    hits: Vec<Hit>,
}

impl Matched {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// `(pub_id, score)` pairs in `pub_id` order.
    pub fn scored<'a>(&'a self, ix: &'a CorpusIndex) -> impl Iterator<Item = (&'a str, u64)> + 'a {
        self.hits.iter().map(|h| (ix.docs[h.doc as usize].pub_id.as_str(), h.score))
    }

    pub fn pub_ids<'a>(&'a self, ix: &'a CorpusIndex) -> impl Iterator<Item = &'a str> + 'a {
        self.scored(ix).map(|(id, _)| id)
    }
}

#[derive(Debug, Default)]
pub struct CorpusIndex {
    docs: Vec<Publication>,
    by_id: HashMap<String, u32>,
    postings: HashMap<String, Vec<(u32, u64)>>,
    pair_keys: Vec<(EntityType, PairKey)>,
    pair_lookup: HashMap<(EntityType, PairKey), u32>,
    pair_postings: Vec<Vec<u32>>,
    doc_pairs: Vec<BTreeMap<EntityType, Vec<u32>>>,
    entity_postings: HashMap<(EntityType, String), Vec<u32>>,
}

/// Lowercases and splits on non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn weighted_terms(p: &Publication) -> BTreeMap<String, u64> {
    let mut terms = BTreeMap::new();
    for t in tokenize(&p.title) {
        *terms.entry(t).or_default() += TITLE_WEIGHT;
    }
    if let Some(a) = &p.abstract_text {
        for t in tokenize(a) {
            *terms.entry(t).or_default() += ABSTRACT_WEIGHT;
        }
    }
    for list in p.entities.values() {
        for e in list {
            for t in tokenize(&e.label) {
                *terms.entry(t).or_default() += ENTITY_WEIGHT;
            }
        }
    }
    terms
}

/// Builds the index. Records above the author limit are dropped.
pub fn build_index<I>(records: I, cfg: &IndexConfig) -> Result<CorpusIndex, IndexError>
where
    I: IntoIterator<Item = Publication>,
{
    let mut docs: Vec<Publication> =
        records.into_iter().filter(|p| passes_author_filter(p, cfg.max_authors)).collect();
    docs.sort_by(|a, b| a.pub_id.cmp(&b.pub_id));
    if let Some(w) = docs.windows(2).find(|w| w[0].pub_id == w[1].pub_id) {
        return Err(IndexError::DuplicateId(w[0].pub_id.clone()));
    }

    let mut ix = CorpusIndex::default();
    for (doc, p) in docs.iter().enumerate() {
        let doc = doc as u32;
        ix.by_id.insert(p.pub_id.clone(), doc);
        for (term, w) in weighted_terms(p) {
            ix.postings.entry(term).or_default().push((doc, w));
        }
        let mut per_type = BTreeMap::new();
        for (&t, list) in &p.entities {
            for e in list {
                ix.entity_postings.entry((t, e.id.clone())).or_default().push(doc);
            }
            let mut ids = Vec::new();
            for key in compute_pairs(p, t) {
                let next = ix.pair_keys.len() as u32;
                let id = *ix.pair_lookup.entry((t, key.clone())).or_insert_with(|| {
                    ix.pair_keys.push((t, key));
                    ix.pair_postings.push(Vec::new());
                    next
                });
                ix.pair_postings[id as usize].push(doc);
                ids.push(id);
            }
            if !ids.is_empty() {
                per_type.insert(t, ids);
            }
        }
        ix.doc_pairs.push(per_type);
    }
    ix.docs = docs;
    Ok(ix)
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Publication] {
        &self.docs
    }

    pub fn get(&self, pub_id: &str) -> Option<&Publication> {
        self.by_id.get(pub_id).map(|&d| &self.docs[d as usize])
    }

    /// Ids of stored publications whose pairs of type `t` include `key`.
    pub fn pair_postings(&self, t: EntityType, key: &PairKey) -> Vec<&str> {
        let Some(&id) = self.pair_lookup.get(&(t, key.clone())) else { return Vec::new() };
        self.pair_postings[id as usize].iter().map(|&d| self.docs[d as usize].pub_id.as_str()).collect()
    }

    /// Ids of stored publications carrying entity `id` of type `t`.
    pub fn entity_postings(&self, t: EntityType, id: &str) -> Vec<&str> {
        self.entity_postings
            .get(&(t, id.to_string()))
            .map(|docs| docs.iter().map(|&d| self.docs[d as usize].pub_id.as_str()).collect())
            .unwrap_or_default()
    }

    /// AND-matches the query tokens, restricted to the perimeter when present.
    pub fn match_query(&self, q: &QuerySpec) -> Matched {
        let tokens: BTreeSet<String> = tokenize(&q.text).collect();
        let allowed: Option<Vec<u32>> = q.perimeter.as_ref().map(|ids| {
            let mut docs: Vec<u32> = ids.iter().filter_map(|id| self.by_id.get(id).copied()).collect();
            docs.sort_unstable();
            docs
        });

        let mut hits: Vec<Hit> = if tokens.is_empty() {
            (0..self.docs.len() as u32).map(|doc| Hit { doc, score: 0 }).collect()
        } else {
            let mut lists = Vec::with_capacity(tokens.len());
            for t in &tokens {
                match self.postings.get(t) {
                    Some(list) => lists.push(list.as_slice()),
                    None => return Matched::default(),
                }
            }
            lists.sort_by_key(|l| l.len());
            let mut acc: Vec<Hit> = lists[0].iter().map(|&(doc, score)| Hit { doc, score }).collect();
            for list in &lists[1..] {
                acc = intersect_scored(&acc, list);
                if acc.is_empty() {
                    break;
                }
            }
            acc
        };

        if let Some(allowed) = allowed {
            hits.retain(|h| allowed.binary_search(&h.doc).is_ok());
        }
        Matched { hits }
    }

    /// Terms aggregation over the matched documents' precomputed pairs:
    /// doc_count descending, key ascending, truncated to `top_k`.
    pub fn aggregate_links(&self, matched: &Matched, t: EntityType, top_k: usize) -> Vec<LinkAggregate> {
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for h in &matched.hits {
            if let Some(ids) = self.doc_pairs[h.doc as usize].get(&t) {
                for &id in ids {
                    *counts.entry(id).or_default() += 1;
                }
            }
        }
        let mut aggs: Vec<LinkAggregate> = counts
            .into_iter()
            .map(|(id, doc_count)| LinkAggregate { key: self.pair_keys[id as usize].1.clone(), doc_count })
            .collect();
        aggs.sort_by(|a, b| b.doc_count.cmp(&a.doc_count).then_with(|| a.key.cmp(&b.key)));
        aggs.truncate(top_k);
        aggs
    }

    /// Matched publications by score descending, then `pub_id` ascending.
    pub fn top_publications(&self, matched: &Matched, limit: usize) -> Vec<&Publication> {
        let mut hits = matched.hits.clone();
        // docs are sorted by pub_id, so doc order is the pub_id tie-break.
        hits.sort_by(|a, b| b.score.cmp(&a.score).then(a.doc.cmp(&b.doc)));
        hits.into_iter().take(limit).map(|h| &self.docs[h.doc as usize]).collect()
    }

    /// Writes a versioned snapshot: magic, format version, payload length, JSONL records.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut payload = String::new();
        for p in &self.docs {
            payload.push_str(&p.to_json_line());
            payload.push('\n');
        }
        let mut f = fs::File::create(path)?;
        f.write_all(SNAPSHOT_MAGIC)?;
        f.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        f.write_all(&(payload.len() as u64).to_le_bytes())?;
        f.write_all(payload.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, cfg: &IndexConfig) -> Result<CorpusIndex, IndexError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(IndexError::Snapshot("bad magic header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::Snapshot(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload = bytes
            .get(20..20 + len)
            .ok_or_else(|| IndexError::Snapshot("truncated payload".into()))?;
        let text = std::str::from_utf8(payload).map_err(|e| IndexError::Snapshot(e.to_string()))?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let p = parse_publication(line)
                .map_err(|e| IndexError::Snapshot(format!("record {}: {e}", i + 1)))?;
            docs.push(p);
        }
        build_index(docs, cfg)
    }
}

fn intersect_scored(acc: &[Hit], list: &[(u32, u64)]) -> Vec<Hit> {
    let mut out = Vec::with_capacity(acc.len().min(list.len()));
    let (mut i, mut j) = (0, 0);
    while i < acc.len() && j < list.len() {
        match acc[i].doc.cmp(&list[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(Hit { doc: acc[i].doc, score: acc[i].score + list[j].1 });
                i += 1;
                j += 1;
            }
        }
    }
    out
}
