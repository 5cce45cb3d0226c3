//! Client for a remote entity-extraction service.
//!
//! Wire protocol: `POST` a JSON body `{"text": ...}` to the endpoint and
//! expect `{"entities": [{"text", "type", "begin_offset", "end_offset"}]}`
//! back, offsets in characters. Entities with unknown type strings are
//! dropped with a warning; spans that do not match the source text are a
//! protocol error.
//!
//! Failures are split into distinct variants so a data-generation pipeline
//! can fall back to the local gazetteer on transport problems. The client
//! speaks plain HTTP; one request is in flight per call, and callers may
//! parallelize calls freely.

use std::str::FromStr;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::entity::{EntitySpan, EntityType};

/// Remote extraction failures, one variant per failure class.
#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("could not reach extractor: {0}")]
    Network(String),
    #[error("extractor returned HTTP {0}")]
    Status(u16),
    #[error("extractor response malformed: {0}")]
    MalformedResponse(String),
    #[error("extractor did not answer within {0:?}")]
    Timeout(Duration),
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct WireEntity {
    text: String,
    #[serde(rename = "type")]
    etype: String,
    begin_offset: usize,
    end_offset: usize,
}

#[derive(Deserialize)]
struct ExtractResponse {
    entities: Vec<WireEntity>,
}

/// Sends `text` to the extraction service and returns validated entity
/// spans in response order.
pub fn remote_extract(
    text: &str,
    endpoint: &str,
    timeout: Duration,
) -> Result<Vec<EntitySpan>, RemoteError> {
    let agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .new_agent();
    let mut response = agent
        .post(endpoint)
        .send_json(ExtractRequest { text })
        .map_err(|e| map_error(e, timeout))?;
    let parsed: ExtractResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| map_error(e, timeout))?;

    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::with_capacity(parsed.entities.len());
    for entity in parsed.entities {
        let etype = match EntityType::from_str(&entity.etype) {
            Ok(t) => t,
            Err(_) => {
                warn!(
                    "dropping entity {:?}: unknown type {:?}",
                    entity.text, entity.etype
                );
                continue;
            }
        };
        let valid = entity.begin_offset < entity.end_offset
            && entity.end_offset <= chars.len()
            && chars[entity.begin_offset..entity.end_offset]
                .iter()
                .collect::<String>()
                == entity.text;
        if !valid {
            return Err(RemoteError::MalformedResponse(format!(
                "span {:?} [{}, {}) does not match the submitted text",
                entity.text, entity.begin_offset, entity.end_offset
            )));
        }
        spans.push(EntitySpan {
            text: entity.text,
            etype,
            start: entity.begin_offset,
            end: entity.end_offset,
        });
    }
    Ok(spans)
}

fn map_error(e: ureq::Error, timeout: Duration) -> RemoteError {
    match e {
        ureq::Error::StatusCode(code) => RemoteError::Status(code),
        ureq::Error::Timeout(_) => RemoteError::Timeout(timeout),
        ureq::Error::Json(e) => RemoteError::MalformedResponse(e.to_string()),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
            RemoteError::Timeout(timeout)
        }
        other => RemoteError::Network(other.to_string()),
    }
}
