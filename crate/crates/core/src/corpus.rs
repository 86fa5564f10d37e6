//! Publication data model, JSONL ingest and per-publication pair keys.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between an entity id and its label.
pub const ENTITY_SEP: &str = "###";
/// Separator between the two halves of a pair key.
pub const PAIR_SEP: &str = "---";

pub const DEFAULT_MAX_AUTHORS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Topic,
    Author,
    Institution,
    Laboratory,
    Software,
    Funding,
    Country,
}

impl EntityType {
    pub const ALL: [EntityType; 7] = [
        EntityType::Topic,
        EntityType::Author,
        EntityType::Institution,
        EntityType::Laboratory,
        EntityType::Software,
        EntityType::Funding,
        EntityType::Country,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Topic => "topic",
            EntityType::Author => "author",
            EntityType::Institution => "institution",
            EntityType::Laboratory => "laboratory",
            EntityType::Software => "software",
            EntityType::Funding => "funding",
            EntityType::Country => "country",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown entity type `{0}`")]
pub struct UnknownEntityType(pub String);

impl FromStr for EntityType {
    type Err = UnknownEntityType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownEntityType(s.to_string()))
    }
}

/// A disambiguated entity, serialized as `id###label`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityRef {
    pub entity_type: EntityType,
    pub id: String,
    pub label: String,
}

impl EntityRef {
    pub fn new(
        entity_type: EntityType,
        id: impl Into<String>,
        label: impl Into<String>,
    ) -> Result<Self, RecordError> {
        let id = id.into();
        let label = label.into();
        check_id(&id)?;
        check_label(&label)?;
        Ok(EntityRef { entity_type, id, label })
    }

    /// The `id###label` form used as node id and as pair-key half.
    pub fn serialized(&self) -> String {
        format!("{}{ENTITY_SEP}{}", self.id, self.label)
    }

    /// Parses an `id###label` half.
    pub fn parse(entity_type: EntityType, s: &str) -> Result<Self, RecordError> {
        let (id, label) = s
            .split_once(ENTITY_SEP)
            .ok_or_else(|| RecordError::Invalid(format!("`{s}` lacks the `{ENTITY_SEP}` separator")))?;
        EntityRef::new(entity_type, id, label)
    }
}

fn check_id(id: &str) -> Result<(), RecordError> {
    if id.is_empty() {
        return Err(RecordError::Invalid("entity id is empty".into()));
    }
    // A leading '-' would make the pair separator ambiguous.
    if id.starts_with('-') || id.contains(ENTITY_SEP) || id.contains(PAIR_SEP) {
        return Err(RecordError::Invalid(format!("entity id `{id}` contains a reserved separator")));
    }
    Ok(())
}

fn check_label(label: &str) -> Result<(), RecordError> {
    if label.contains(ENTITY_SEP) || label.contains(PAIR_SEP) {
        return Err(RecordError::Invalid(format!(
            "entity label `{label}` contains a reserved separator"
        )));
    }
    Ok(())
}

/// A canonical co-occurrence key `A###labelA---B###labelB` with `A###labelA < B###labelB`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairKey(String);

impl PairKey {
    /// Builds the canonical key for two entities; `None` for a self-pair.
    pub fn new(a: &EntityRef, b: &EntityRef) -> Option<PairKey> {
        if a.id == b.id {
            return None;
        }
        let (x, y) = (a.serialized(), b.serialized());
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        Some(PairKey(format!("{lo}{PAIR_SEP}{hi}")))
    }

    pub fn parse(s: &str) -> Result<PairKey, RecordError> {
        let key = PairKey(s.to_string());
        let (lo, hi) = key.halves()?;
        let a = EntityRef::parse(EntityType::Topic, lo)?;
        let b = EntityRef::parse(EntityType::Topic, hi)?;
        if a.id == b.id {
            return Err(RecordError::Invalid(format!("`{s}` is a self-pair")));
        }
        if lo >= hi {
            return Err(RecordError::Invalid(format!("`{s}` halves are not in canonical order")));
        }
        Ok(key)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The two serialized halves. Ids never start with '-' and labels never
    /// contain `---`, so the last separator occurrence is the split point.
    pub fn halves(&self) -> Result<(&str, &str), RecordError> {
        let pos = self
            .0
            .rfind(PAIR_SEP)
            .ok_or_else(|| RecordError::Invalid(format!("`{}` lacks the `{PAIR_SEP}` separator", self.0)))?;
        Ok((&self.0[..pos], &self.0[pos + PAIR_SEP.len()..]))
    }

    pub fn endpoints(&self, entity_type: EntityType) -> Result<(EntityRef, EntityRef), RecordError> {
        let (lo, hi) = self.halves()?;
        Ok((EntityRef::parse(entity_type, lo)?, EntityRef::parse(entity_type, hi)?))
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One enriched bibliographic record.
#[derive(Debug, Clone, PartialEq)]
pub struct Publication {
    pub pub_id: String,
    pub title: String,
    pub abstract_text: Option<String>,
    pub year: i32,
    pub entities: BTreeMap<EntityType, Vec<EntityRef>>,
    pub citations_by_year: BTreeMap<i32, u64>,
    pub author_count: usize,
}

impl Publication {
    pub fn entities_of(&self, t: EntityType) -> &[EntityRef] {
        self.entities.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Serializes back to the JSONL record schema.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&RawPublication::from(self)).expect("publication serializes")
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("duplicate pub_id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawEntity {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawPublication {
    #[serde(default)]
    pub_id: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default, rename = "abstract", skip_serializing_if = "Option::is_none")]
    abstract_text: Option<String>,
    #[serde(default)]
    year: Option<i32>,
    #[serde(default)]
    entities: BTreeMap<String, Vec<RawEntity>>,
    #[serde(default)]
    citations_by_year: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    author_count: Option<usize>,
}

impl From<&Publication> for RawPublication {
    fn from(p: &Publication) -> Self {
        RawPublication {
            pub_id: Some(p.pub_id.clone()),
            title: Some(p.title.clone()),
            abstract_text: p.abstract_text.clone(),
            year: Some(p.year),
            entities: p
                .entities
                .iter()
                .map(|(t, list)| {
                    let raw = list
                        .iter()
                        .map(|e| RawEntity { id: Some(e.id.clone()), label: Some(e.label.clone()) })
                        .collect();
                    (t.as_str().to_string(), raw)
                })
                .collect(),
            citations_by_year: p.citations_by_year.iter().map(|(y, c)| (y.to_string(), *c)).collect(),
            author_count: Some(p.author_count),
        }
    }
}

/// Counts produced while parsing a single record.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RecordStats {
    pub skipped_missing_pid: usize,
    pub duplicate_entities: usize,
}

/// Parses and validates one JSONL record.
pub fn parse_publication(line: &str) -> Result<Publication, RecordError> {
    parse_publication_with_stats(line).map(|(p, _)| p)
}

pub fn parse_publication_with_stats(line: &str) -> Result<(Publication, RecordStats), RecordError> {
    let raw: RawPublication = serde_json::from_str(line)?;
    let pub_id = raw.pub_id.filter(|s| !s.is_empty()).ok_or(RecordError::Missing("pub_id"))?;
    let year = raw.year.ok_or(RecordError::Missing("year"))?;
    let mut stats = RecordStats::default();

    let mut entities = BTreeMap::new();
    for (type_name, list) in raw.entities {
        // Entity models this engine does not map are ignored like any unknown field.
        let Ok(t) = type_name.parse::<EntityType>() else { continue };
        let mut seen = BTreeSet::new();
        let mut refs = Vec::with_capacity(list.len());
        for e in list {
            let Some(id) = e.id.filter(|id| !id.is_empty()) else {
                stats.skipped_missing_pid += 1;
                continue;
            };
            if !seen.insert(id.clone()) {
                stats.duplicate_entities += 1;
                continue;
            }
            refs.push(EntityRef::new(t, id, e.label.unwrap_or_default())?);
        }
        entities.insert(t, refs);
    }

    let listed_authors = entities.get(&EntityType::Author).map_or(0, Vec::len);
    let author_count = raw.author_count.unwrap_or(listed_authors);
    if author_count < listed_authors {
        return Err(RecordError::Invalid(format!(
            "author_count {author_count} is below the {listed_authors} listed authors"
        )));
    }

    let mut citations_by_year = BTreeMap::new();
    for (y, c) in raw.citations_by_year {
        let y: i32 = y
            .trim()
            .parse()
            .map_err(|_| RecordError::Invalid(format!("citations_by_year key `{y}` is not a year")))?;
        citations_by_year.insert(y, c);
    }

    Ok((
        Publication {
            pub_id,
            title: raw.title.unwrap_or_default(),
            abstract_text: raw.abstract_text,
            year,
            entities,
            citations_by_year,
            author_count,
        },
        stats,
    ))
}

/// Hyperauthorship filter; the bound is inclusive.
pub fn passes_author_filter(p: &Publication, max_authors: usize) -> bool {
    p.author_count <= max_authors
}

/// All unordered pairs of distinct entities of type `t`, sorted ascending.
pub fn compute_pairs(p: &Publication, t: EntityType) -> Vec<PairKey> {
    let list = p.entities_of(t);
    let mut keys = Vec::with_capacity(list.len() * list.len().saturating_sub(1) / 2);
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            if let Some(k) = PairKey::new(a, b) {
                keys.push(k);
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Rewrites every label to the most frequent label seen for its id
/// (ties: lexicographically smallest label).
pub fn merge_labels(pubs: &mut [Publication]) {
    let mut freq: HashMap<(EntityType, String), BTreeMap<String, usize>> = HashMap::new();
    for p in pubs.iter() {
        for (t, list) in &p.entities {
            for e in list {
                *freq.entry((*t, e.id.clone())).or_default().entry(e.label.clone()).or_default() += 1;
            }
        }
    }
    let canonical: HashMap<(EntityType, String), String> = freq
        .into_iter()
        .map(|(k, labels)| {
            let best = labels
                .into_iter()
                .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then_with(|| lb.cmp(la)))
                .map(|(l, _)| l)
                .unwrap_or_default();
            (k, best)
        })
        .collect();
    for p in pubs.iter_mut() {
        for (t, list) in p.entities.iter_mut() {
            for e in list.iter_mut() {
                if let Some(l) = canonical.get(&(*t, e.id.clone())) {
                    e.label.clone_from(l);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestConfig {
    pub max_authors: usize,
    pub merge_labels: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_authors: DEFAULT_MAX_AUTHORS, merge_labels: false }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub filtered_hyperauthorship: usize,
    pub skipped_entities_missing_pid: usize,
    pub duplicate_entities: usize,
}

/// Reads a JSONL corpus, applying the author filter and optional label merging.
/// Blank lines are ignored; the first malformed record aborts with its line number.
pub fn read_corpus<R: BufRead>(
    reader: R,
    cfg: &IngestConfig,
) -> Result<(Vec<Publication>, IngestReport), CorpusError> {
    let mut report = IngestReport::default();
    let mut pubs = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let (p, stats) =
            parse_publication_with_stats(&line).map_err(|source| CorpusError::Record { line: i + 1, source })?;
        report.skipped_entities_missing_pid += stats.skipped_missing_pid;
        report.duplicate_entities += stats.duplicate_entities;
        if !passes_author_filter(&p, cfg.max_authors) {
            report.filtered_hyperauthorship += 1;
            continue;
        }
        if !ids.insert(p.pub_id.clone()) {
            return Err(CorpusError::DuplicateId(p.pub_id));
        }
        report.accepted += 1;
        pubs.push(p);
    }
    if cfg.merge_labels {
        merge_labels(&mut pubs);
    }
    Ok((pubs, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic(id: &str, label: &str) -> EntityRef {
        EntityRef::new(EntityType::Topic, id, label).unwrap()
    }

    fn with_topics(topics: &[(&str, &str)]) -> Publication {
        let mut entities = BTreeMap::new();
        entities.insert(EntityType::Topic, topics.iter().map(|(i, l)| topic(i, l)).collect());
        Publication {
            pub_id: "p".into(),
            title: String::new(),
            abstract_text: None,
            year: 2020,
            entities,
            citations_by_year: BTreeMap::new(),
            author_count: 0,
        }
    }

    #[test]
    fn minimal_record() {
        let p = parse_publication(
            r#"{"pub_id":"p1","year":2020,"title":"t","entities":{"topic":[{"id":"Q1","label":"x"}]}}"#,
        )
        .unwrap();
        assert_eq!(p.entities_of(EntityType::Topic).len(), 1);
        assert!(p.citations_by_year.is_empty());
        assert_eq!(p.author_count, 0);
    }

    #[test]
    fn missing_required_fields() {
        assert!(matches!(
            parse_publication(r#"{"year":2020,"title":"t"}"#),
            Err(RecordError::Missing("pub_id"))
        ));
        assert!(matches!(parse_publication(r#"{"pub_id":"a"}"#), Err(RecordError::Missing("year"))));
        assert!(matches!(parse_publication("{not json"), Err(RecordError::Json(_))));
    }

    #[test]
    fn citations_and_unknown_fields() {
        let p = parse_publication(
            r#"{"pub_id":"p1","year":2020,"doi":"10.1/x","citations_by_year":{"2023":3},"entities":{"dataset":[{"id":"d"}]}}"#,
        )
        .unwrap();
        assert_eq!(p.citations_by_year[&2023], 3);
        assert!(p.entities.is_empty());
    }

    #[test]
    fn missing_pid_and_duplicates_are_counted() {
        let (p, stats) = parse_publication_with_stats(
            r#"{"pub_id":"p1","year":2020,"entities":{"topic":[{"label":"nopid"},{"id":"","label":"e"},{"id":"Q1","label":"a"},{"id":"Q1","label":"b"}]}}"#,
        )
        .unwrap();
        assert_eq!(p.entities_of(EntityType::Topic), &[topic("Q1", "a")]);
        assert_eq!(stats.skipped_missing_pid, 2);
        assert_eq!(stats.duplicate_entities, 1);
    }

    #[test]
    fn author_count_defaults_and_bounds() {
        let p = parse_publication(
            r#"{"pub_id":"p","year":1,"entities":{"author":[{"id":"a1","label":"A"},{"id":"a2","label":"B"}]}}"#,
        )
        .unwrap();
        assert_eq!(p.author_count, 2);
        assert!(parse_publication(
            r#"{"pub_id":"p","year":1,"author_count":1,"entities":{"author":[{"id":"a1"},{"id":"a2"}]}}"#
        )
        .is_err());
    }

    #[test]
    fn reserved_separators_rejected() {
        assert!(EntityRef::new(EntityType::Topic, "Q###1", "x").is_err());
        assert!(EntityRef::new(EntityType::Topic, "Q1", "a---b").is_err());
        assert!(EntityRef::new(EntityType::Topic, "-Q1", "x").is_err());
        assert!(EntityRef::new(EntityType::Topic, "Q1", "").is_ok());
    }

    #[test]
    fn author_filter_boundary() {
        let mut p = with_topics(&[]);
        p.author_count = 5;
        assert!(passes_author_filter(&p, 20));
        p.author_count = 3000;
        assert!(!passes_author_filter(&p, 20));
        p.author_count = 20;
        assert!(passes_author_filter(&p, 20));
    }

    #[test]
    fn pairs_of_three_topics() {
        let p = with_topics(&[("T3", "c"), ("T1", "a"), ("T2", "b")]);
        let keys: Vec<_> = compute_pairs(&p, EntityType::Topic).iter().map(|k| k.to_string()).collect();
        assert_eq!(keys, ["T1###a---T2###b", "T1###a---T3###c", "T2###b---T3###c"]);
        assert!(compute_pairs(&with_topics(&[("T1", "a")]), EntityType::Topic).is_empty());
        assert!(compute_pairs(&p, EntityType::Author).is_empty());
    }

    #[test]
    fn canonical_order_matches_listing() {
        let p = with_topics(&[("Q7942", "climate change"), ("Q15305550", "carbon sequestration")]);
        let keys = compute_pairs(&p, EntityType::Topic);
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].as_str(), "Q15305550###carbon sequestration---Q7942###climate change");
    }

    #[test]
    fn labels_are_verbatim() {
        let a = with_topics(&[("Q15305550", "carbon sequestration"), ("Q7942", "climate change")]);
        let b = with_topics(&[("Q15305550", "Carbon sequestration"), ("Q7942", "Climate change")]);
        assert_ne!(compute_pairs(&a, EntityType::Topic), compute_pairs(&b, EntityType::Topic));
    }

    #[test]
    fn pair_key_split_with_trailing_dash_label() {
        let k = PairKey::new(&topic("Q1", "x-"), &topic("Q2", "y")).unwrap();
        let (a, b) = k.endpoints(EntityType::Topic).unwrap();
        assert_eq!((a.label.as_str(), b.id.as_str()), ("x-", "Q2"));
        assert_eq!(PairKey::parse(k.as_str()).unwrap(), k);
        assert!(PairKey::parse("Q2###y---Q1###x").is_err());
        assert!(PairKey::parse("Q1###y---Q1###x").is_err());
        assert!(PairKey::parse("nonsense").is_err());
    }

    #[test]
    fn merge_labels_picks_most_frequent() {
        let mut pubs = vec![
            with_topics(&[("Q1", "Carbon"), ("Q2", "b")]),
            with_topics(&[("Q1", "carbon")]),
            with_topics(&[("Q1", "carbon")]),
        ];
        merge_labels(&mut pubs);
        assert!(pubs.iter().all(|p| p.entities_of(EntityType::Topic)[0].label == "carbon"));
    }

    #[test]
    fn read_corpus_reports_and_line_numbers() {
        let text = concat!(
            r#"{"pub_id":"a","year":2020,"author_count":3}"#,
            "\n\n",
            r#"{"pub_id":"b","year":2020,"author_count":3000}"#,
            "\n",
            r#"{"pub_id":"c","year":2020,"entities":{"topic":[{"label":"x"}]}}"#,
            "\n"
        );
        let (pubs, report) = read_corpus(text.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(pubs.len(), 2);
        assert_eq!(report.accepted, 2);
        assert_eq!(report.filtered_hyperauthorship, 1);
        assert_eq!(report.skipped_entities_missing_pid, 1);

        let bad = "{\"pub_id\":\"a\",\"year\":1}\n{oops\n";
        match read_corpus(bad.as_bytes(), &IngestConfig::default()) {
            Err(CorpusError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "{\"pub_id\":\"a\",\"year\":1}\n{\"pub_id\":\"a\",\"year\":2}\n";
        assert!(matches!(read_corpus(dup.as_bytes(), &IngestConfig::default()), Err(CorpusError::DuplicateId(_))));
    }

    #[test]
    fn json_line_round_trip() {
        let p = parse_publication(
            r#"{"pub_id":"p1","year":2020,"title":"t","abstract":"ab","author_count":4,"citations_by_year":{"2021":2},"entities":{"topic":[{"id":"Q1","label":"x"}],"author":[{"id":"a","label":"A"}]}}"#,
        )
        .unwrap();
        assert_eq!(parse_publication(&p.to_json_line()).unwrap(), p);
    }
}
