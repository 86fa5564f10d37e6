//! Community labeling through a chat-completion model, with a deterministic
//! fallback, and per-cluster citation hotness.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::communities::Partition;
use crate::corpus::{EntityType, Publication};

pub const DEFAULT_TOPIC_PUBLICATIONS: usize = 2000;
pub const DEFAULT_MODEL: &str = "open-mistral-nemo";
pub const DEFAULT_BASE_URL: &str = "https://api.mistral.ai/v1";
pub const API_KEY_ENV: &str = "NETMAP_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "NETMAP_LLM_BASE_URL";
pub const MODEL_ENV: &str = "NETMAP_LLM_MODEL";

/// Instruction sent ahead of the topic lists.
pub const LABELING_PROMPT: &str = "You have been tasked with naming distinct fields of study for several \
communities of research publications. Below are lists of topics and their weights representing each \
community. Your goal is to provide a unique and descriptive name for each field of study that best \
encapsulates the essence of the topics within that community. Each should be unique and as short as \
possible. If the list of topic is empty, output a empty string. Output as JSON object with the list \
number and the single unique generated name.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityTopicList {
    pub cluster_id: usize,
    /// `(label, weight)` by weight descending, then label.
    pub topics: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub cluster_id: usize,
    pub name: String,
    pub citation_score: f64,
    pub publication_count: usize,
    pub recent_citations: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelingError {
    #[error("labeling service unavailable: {0}")]
    Unavailable(String),
    #[error("no JSON object found in labeling response")]
    ParseFailure,
}

/// Assigns each publication to the cluster holding the plurality of its
/// on-map entities of type `t` (ties: lowest cluster id). The returned map has
/// an entry for every cluster; lists keep the input (relevance) order.
pub fn assign_publications(p: &Partition, pubs: &[&Publication], t: EntityType) -> BTreeMap<usize, Vec<String>> {
    let mut out: BTreeMap<usize, Vec<String>> = (1..=p.cluster_count()).map(|c| (c, Vec::new())).collect();
    for publication in pubs {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for e in publication.entities_of(t) {
            if let Some(c) = p.cluster_of(&e.serialized()) {
                *votes.entry(c).or_default() += 1;
            }
        }
        // BTreeMap iterates ascending, and max_by keeps the last maximum: reverse so the lowest id wins.
        if let Some((&c, _)) = votes.iter().rev().max_by_key(|(_, &n)| n) {
            out.entry(c).or_default().push(publication.pub_id.clone());
        }
    }
    out
}

/// Topic label frequencies over the first `limit` publications of each cluster.
pub fn topic_lists(
    assignments: &BTreeMap<usize, Vec<String>>,
    pubs: &[&Publication],
    limit: usize,
) -> Vec<CommunityTopicList> {
    let by_id: HashMap<&str, &Publication> = pubs.iter().map(|p| (p.pub_id.as_str(), *p)).collect();
    assignments
        .iter()
        .map(|(&cluster_id, ids)| {
            let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
            for p in ids.iter().take(limit).filter_map(|id| by_id.get(id.as_str())) {
                for e in p.entities_of(EntityType::Topic) {
                    *freq.entry(e.label.as_str()).or_default() += 1;
                }
            }
            let mut topics: Vec<(String, u64)> = freq.into_iter().map(|(l, n)| (l.to_string(), n)).collect();
            topics.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            CommunityTopicList { cluster_id, topics }
        })
        .collect()
}

/// Renders one `listN = [Label (w), ...]` line.
pub fn format_topic_list(list: &CommunityTopicList) -> String {
    let body: Vec<String> = list.topics.iter().map(|(l, w)| format!("{l} ({w})")).collect();
    format!("list{} = [{}]", list.cluster_id, body.join(", "))
}

pub fn build_prompt(lists: &[CommunityTopicList]) -> String {
    let body: Vec<String> = lists.iter().map(format_topic_list).collect();
    format!("{LABELING_PROMPT}\n\n{}", body.join(",\n"))
}

/// Source of raw labeling responses.
pub trait LabelClient: Send + Sync {
    /// Sends the prompt and returns the model's reply text.
    fn request_labels(&self, prompt: &str) -> Result<String, LabelingError>;
}

/// Returns the assistant message when `raw` is a chat-completion envelope,
/// otherwise `raw` itself.
pub fn completion_text(raw: &str) -> String {
    serde_json::from_str::<Value>(raw)
        .ok()
        .and_then(|v| v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| raw.to_string())
}

#[derive(Debug, Clone)]
pub struct ChatClientConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        ChatClientConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            model: DEFAULT_MODEL.to_string(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_retries: 2,
            backoff: Duration::from_millis(250),
        }
    }
}

impl ChatClientConfig {
    /// Defaults overridden by the `NETMAP_LLM_*` environment variables.
    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        let d = ChatClientConfig::default();
        ChatClientConfig {
            base_url: var(BASE_URL_ENV).unwrap_or(d.base_url),
            model: var(MODEL_ENV).unwrap_or(d.model),
            api_key: var(API_KEY_ENV),
            ..d
        }
    }
}

/// OpenAI-style `/chat/completions` client with temperature 0.
pub struct HttpChatClient {
    cfg: ChatClientConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(cfg: ChatClientConfig) -> Result<Self, LabelingError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LabelingError::Unavailable(e.to_string()))?;
        Ok(HttpChatClient { cfg, http })
    }

    fn attempt(&self, body: &Value, key: &str) -> Result<String, (bool, String)> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let resp = self
            .http
            .post(url)
            .bearer_auth(key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, e.to_string()))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        Ok(text)
    }
}

impl LabelClient for HttpChatClient {
    fn request_labels(&self, prompt: &str) -> Result<String, LabelingError> {
        let key = self
            .cfg
            .api_key
            .as_deref()
            .ok_or_else(|| LabelingError::Unavailable(format!("{API_KEY_ENV} is not set")))?;
        let body = serde_json::json!({
            "model": self.cfg.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body, key) {
                Ok(text) => return Ok(completion_text(&text)),
                Err((retry, msg)) => {
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(LabelingError::Unavailable(last))
    }
}

/// Replays a stored response.
pub struct FixtureClient {
    raw: String,
}

impl FixtureClient {
    pub fn new(raw: impl Into<String>) -> Self {
        FixtureClient { raw: raw.into() }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(FixtureClient::new(std::fs::read_to_string(path)?))
    }
}

impl LabelClient for FixtureClient {
    fn request_labels(&self, _prompt: &str) -> Result<String, LabelingError> {
        Ok(completion_text(&self.raw))
    }
}

/// The first JSON object embedded in `text`, if any.
fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Maps `listN` keys to cluster `N` for the expected clusters. Keys outside
/// `expected`, and non-string values, are ignored.
pub fn parse_labels(raw: &str, expected: &[usize]) -> Result<BTreeMap<usize, String>, LabelingError> {
    let map = first_json_object(raw).ok_or(LabelingError::ParseFailure)?;
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let Some(n) = k.trim().strip_prefix("list").and_then(|n| n.trim().parse::<usize>().ok()) else {
            continue;
        };
        if let (true, Some(name)) = (expected.contains(&n), v.as_str()) {
            out.insert(n, name.trim().to_string());
        }
    }
    Ok(out)
}

/// Top-2 topic labels joined by " / "; empty lists give "".
pub fn fallback_labels(lists: &[CommunityTopicList]) -> BTreeMap<usize, String> {
    lists
        .iter()
        .map(|l| {
            let top: Vec<&str> = l.topics.iter().take(2).map(|(label, _)| label.as_str()).collect();
            (l.cluster_id, top.join(" / "))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Llm,
    Fallback,
    Off,
}

/// Names for every listed cluster. Clusters the model did not name, or all of
/// them when the call or parse fails, get the fallback name. The source is
/// `Llm` only if the model named at least one cluster.
pub fn label_clusters(
    lists: &[CommunityTopicList],
    client: Option<&dyn LabelClient>,
) -> (BTreeMap<usize, String>, LabelSource) {
    let fallback = fallback_labels(lists);
    let Some(client) = client else { return (fallback, LabelSource::Fallback) };
    if lists.is_empty() {
        return (fallback, LabelSource::Llm);
    }
    let expected: Vec<usize> = lists.iter().map(|l| l.cluster_id).collect();
    match client.request_labels(&build_prompt(lists)).and_then(|raw| parse_labels(&raw, &expected)) {
        Ok(mut names) if !names.is_empty() => {
            for (c, name) in fallback {
                names.entry(c).or_insert(name);
            }
            (names, LabelSource::Llm)
        }
        _ => (fallback, LabelSource::Fallback),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CitationScore {
    pub recent_citations: u64,
    pub publication_count: usize,
    pub score: f64,
}

/// Citations received in `current_year` and the year before, per publication.
pub fn citation_score<'a, I>(cluster_pubs: I, current_year: i32) -> CitationScore
where
    I: IntoIterator<Item = &'a Publication>,
{
    let mut recent = 0u64;
    let mut count = 0usize;
    for p in cluster_pubs {
        count += 1;
        for y in [current_year - 1, current_year] {
            recent += p.citations_by_year.get(&y).copied().unwrap_or(0);
        }
    }
    let score = if count == 0 { 0.0 } else { recent as f64 / count as f64 };
    CitationScore { recent_citations: recent, publication_count: count, score }
}

/// Current calendar year from the system clock (UTC).
pub fn system_year() -> i32 {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    civil_year(secs.div_euclid(86_400))
}

// Days since 1970-01-01 to proleptic Gregorian year.
fn civil_year(days: i64) -> i32 {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    (yoe + era * 400 + i64::from(month <= 2)) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityRef;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn publication(id: &str, topics: &[&str], cites: &[(i32, u64)]) -> Publication {
        let mut entities = BTreeMap::new();
        entities.insert(
            EntityType::Topic,
            topics.iter().map(|t| EntityRef::new(EntityType::Topic, format!("Q-{t}"), *t).unwrap()).collect(),
        );
        Publication {
            pub_id: id.into(),
            title: String::new(),
            abstract_text: None,
            year: 2020,
            entities,
            citations_by_year: cites.iter().copied().collect(),
            author_count: 1,
        }
    }

    fn list(id: usize, topics: &[(&str, u64)]) -> CommunityTopicList {
        CommunityTopicList { cluster_id: id, topics: topics.iter().map(|(l, w)| (l.to_string(), *w)).collect() }
    }

    fn partition(groups: &[(&str, usize)]) -> Partition {
        Partition::from_groups(groups.iter().map(|(t, c)| (format!("Q-{t}###{t}"), *c)))
    }

    #[test]
    fn plurality_assignment() {
        // cluster 1 = {a, b, x}, cluster 2 = {c, d}
        let p = partition(&[("a", 1), ("b", 1), ("x", 1), ("c", 2), ("d", 2)]);
        let pubs = [
            publication("p1", &["a", "b"], &[]),
            publication("p2", &["a", "c"], &[]),
            publication("p3", &["zzz"], &[]),
            publication("p4", &["c", "d", "a"], &[]),
        ];
        let refs: Vec<&Publication> = pubs.iter().collect();
        let got = assign_publications(&p, &refs, EntityType::Topic);
        assert_eq!(got[&1], ["p1", "p2"]);
        assert_eq!(got[&2], ["p4"]);
    }

    #[test]
    fn topic_counting_and_limit() {
        let pubs: Vec<Publication> = (0..8)
            .map(|i| {
                let topics: &[&str] = if i < 5 { &["Soil", "Carbon"] } else { &["Soil"] };
                publication(&format!("p{i}"), topics, &[])
            })
            .collect();
        let refs: Vec<&Publication> = pubs.iter().collect();
        let assigned = BTreeMap::from([(1, pubs.iter().map(|p| p.pub_id.clone()).collect()), (2, Vec::new())]);
        let lists = topic_lists(&assigned, &refs, 2000);
        assert_eq!(lists[0], list(1, &[("Soil", 8), ("Carbon", 5)]));
        assert_eq!(lists[1], list(2, &[]));
        let limited = topic_lists(&assigned, &refs, 6);
        assert_eq!(limited[0], list(1, &[("Soil", 6), ("Carbon", 5)]));
    }

    #[test]
    fn prompt_layout() {
        let prompt = build_prompt(&[list(1, &[("Soil", 8), ("Carbon Sequestration", 5)]), list(2, &[])]);
        assert!(prompt.starts_with(LABELING_PROMPT));
        assert!(prompt.ends_with("list1 = [Soil (8), Carbon Sequestration (5)],\nlist2 = []"));
    }

    #[test]
    fn parse_three_cluster_reply() {
        let raw = r#"{"list1":"Amazon Andosol Carbon Dynamics","list2":"Soil Carbon and Climate Change","list3":"South Pacific Ocean Carbon Cycling"}"#;
        let names = parse_labels(raw, &[1, 2, 3]).unwrap();
        assert_eq!(names[&2], "Soil Carbon and Climate Change");
        assert_eq!(names.len(), 3);
    }

    #[test]
    fn parse_embedded_and_partial() {
        let raw = "Sure! Here you go {broken\n```json\n{\"list2\": \"  B  \", \"list9\": \"x\", \"note\": 1}\n```";
        assert_eq!(parse_labels(raw, &[1, 2]).unwrap(), BTreeMap::from([(2, "B".to_string())]));
        assert_eq!(parse_labels("not json", &[1]), Err(LabelingError::ParseFailure));
        assert_eq!(parse_labels("[1, 2]", &[1]), Err(LabelingError::ParseFailure));
    }

    #[test]
    fn fallback_rules() {
        let names = fallback_labels(&[
            list(1, &[("Soil", 8), ("Carbon Sequestration", 5), ("Carbon", 5)]),
            list(2, &[]),
            list(3, &[("Only", 1)]),
        ]);
        assert_eq!(names[&1], "Soil / Carbon Sequestration");
        assert_eq!(names[&2], "");
        assert_eq!(names[&3], "Only");
    }

    struct Failing;
    impl LabelClient for Failing {
        fn request_labels(&self, _: &str) -> Result<String, LabelingError> {
            Err(LabelingError::Unavailable("down".into()))
        }
    }

    #[test]
    fn labeling_degrades_to_fallback() {
        let lists = [list(1, &[("A", 2)]), list(2, &[("B", 1)])];
        let (names, src) = label_clusters(&lists, Some(&Failing));
        assert_eq!((names[&1].as_str(), src), ("A", LabelSource::Fallback));
        let (names, src) = label_clusters(&lists, Some(&FixtureClient::new("garbage")));
        assert_eq!((names[&2].as_str(), src), ("B", LabelSource::Fallback));
        let (names, src) = label_clusters(&lists, Some(&FixtureClient::new(r#"{"list1":"Named"}"#)));
        assert_eq!((names[&1].as_str(), names[&2].as_str(), src), ("Named", "B", LabelSource::Llm));
    }

    #[test]
    fn envelope_unwrapping() {
        let env = r#"{"choices":[{"message":{"role":"assistant","content":"{\"list1\":\"X\"}"}}]}"#;
        assert_eq!(completion_text(env), r#"{"list1":"X"}"#);
        assert_eq!(completion_text("plain"), "plain");
    }

    #[test]
    fn citation_window() {
        let pubs = [publication("a", &[], &[(2024, 2), (2023, 1)]), publication("b", &[], &[(2024, 1)])];
        let s = citation_score(pubs.iter(), 2024);
        assert_eq!((s.recent_citations, s.publication_count, s.score), (4, 2, 2.0));
        let old = [publication("c", &[], &[(2021, 50)])];
        assert_eq!(citation_score(old.iter(), 2024).score, 0.0);
        assert_eq!(citation_score(std::iter::empty(), 2024).score, 0.0);
    }

    #[test]
    fn civil_calendar() {
        assert_eq!(civil_year(0), 1970);
        assert_eq!(civil_year(19_722), 2023); // 2023-12-31
        assert_eq!(civil_year(19_723), 2024);
        assert!(system_year() >= 2024);
    }

    fn serve_once(response: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut req = Vec::new();
            loop {
                let n = sock.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req).to_string();
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let len = text[..head_end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= head_end + 4 + len {
                        break;
                    }
                }
            }
            sock.write_all(response.as_bytes()).unwrap();
            String::from_utf8_lossy(&req).to_string()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn client(base_url: String, timeout_ms: u64) -> HttpChatClient {
        HttpChatClient::new(ChatClientConfig {
            base_url,
            api_key: Some("secret".into()),
            timeout: Duration::from_millis(timeout_ms),
            backoff: Duration::from_millis(10),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn http_round_trip() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"list2\": \"Soil Carbon and Climate Change\"}"}}]}"#;
        let resp: &'static str = Box::leak(
            format!("HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len())
                .into_boxed_str(),
        );
        let (url, handle) = serve_once(resp);
        let text = client(url, 5000).request_labels("prompt text").unwrap();
        assert!(text.contains(r#""list2": "Soil Carbon and Climate Change""#));
        let req = handle.join().unwrap();
        assert!(req.starts_with("POST /v1/chat/completions"));
        assert!(req.contains("Bearer secret"));
        assert!(req.contains("\"open-mistral-nemo\"") && req.contains("\"temperature\":0"));
    }

    #[test]
    fn unreachable_endpoint() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = client(format!("http://127.0.0.1:{port}"), 500).request_labels("p").unwrap_err();
        assert!(matches!(err, LabelingError::Unavailable(_)));
    }

    #[test]
    fn timeout_after_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hold = thread::spawn(move || {
            let mut socks = Vec::new();
            for _ in 0..3 {
                if let Ok((s, _)) = listener.accept() {
                    socks.push(s);
                }
            }
            thread::sleep(Duration::from_millis(300));
        });
        let started = std::time::Instant::now();
        let err = client(url, 100).request_labels("p").unwrap_err();
        assert!(matches!(err, LabelingError::Unavailable(_)));
        assert!(started.elapsed() >= Duration::from_millis(300));
        hold.join().unwrap();
    }

    #[test]
    fn non_success_status() {
        let (url, handle) = serve_once("HTTP/1.1 401 Unauthorized\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        assert!(matches!(client(url, 2000).request_labels("p"), Err(LabelingError::Unavailable(m)) if m.contains("401")));
        handle.join().unwrap();
    }

    #[test]
    fn missing_key_is_unavailable() {
        let c = HttpChatClient::new(ChatClientConfig { api_key: None, ..Default::default() }).unwrap();
        assert!(matches!(c.request_labels("p"), Err(LabelingError::Unavailable(_))));
    }
}
