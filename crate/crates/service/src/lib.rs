//! Service layer for network maps: the HTTP API and a perimeter registry.

pub mod perimeters;
pub mod server;

use std::path::Path;
use std::sync::Arc;

use netmap_core::enrich::{ChatClientConfig, FixtureClient, HttpChatClient, LabelClient};

/// Picks the labeling backend: a recorded fixture when given, otherwise the
/// chat endpoint if an API key is configured, otherwise none.
pub fn label_client(fixture: Option<&Path>) -> std::io::Result<Option<Arc<dyn LabelClient>>> {
    if let Some(path) = fixture {
        return Ok(Some(Arc::new(FixtureClient::from_file(path)?)));
    }
    let cfg = ChatClientConfig::from_env();
    if cfg.api_key.is_none() {
        return Ok(None);
    }
    Ok(HttpChatClient::new(cfg).ok().map(|c| Arc::new(c) as Arc<dyn LabelClient>))
}
