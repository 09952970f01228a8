//! Flight API wire format: `{"response": [ {flight fields...}, ... ]}`.

use std::time::Duration;

use serde_json::Value;

use super::SimError;
use crate::model::{validate_position, FlightPosition};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApiPage {
    pub positions: Vec<FlightPosition>,
    pub dead_letter: u64,
}

/// Parses one API response body. Entries that fail validation are counted in
/// `dead_letter`; only a wrong top-level shape is an error.
pub fn parse_api_response(payload: &[u8]) -> Result<ApiPage, SimError> {
    let root: Value =
        serde_json::from_slice(payload).map_err(|e| SimError::MalformedEnvelope(format!("invalid JSON: {e}")))?;
    let Value::Object(mut envelope) = root else {
        return Err(SimError::MalformedEnvelope("top level is not an object".into()));
    };
    let entries = match envelope.remove("response") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(SimError::MalformedEnvelope("`response` is not an array".into())),
        None => return Err(SimError::MalformedEnvelope("missing `response`".into())),
    };
    let mut page = ApiPage::default();
    for entry in entries {
        match entry {
            Value::Object(m) => match validate_position(&m) {
                Ok(p) => page.positions.push(p),
                Err(e) => {
                    log::debug!("dead-lettered API entry: {e}");
                    page.dead_letter += 1;
                }
            },
            _ => page.dead_letter += 1,
        }
    }
    Ok(page)
}

/// Blocking client for a live flight endpoint returning the wire format above.
#[derive(Debug, Clone)]
pub struct ApiClient {
    url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl ApiClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<ApiClient, SimError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| SimError::Http(e.to_string()))?;
        Ok(ApiClient { url: url.into(), api_key, http })
    }

    pub fn fetch(&self) -> Result<ApiPage, SimError> {
        let mut req = self.http.get(&self.url);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| SimError::Http(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SimError::Http(format!("status {}", resp.status())));
        }
        let body = resp.bytes().map_err(|e| SimError::Http(e.to_string()))?;
        parse_api_response(&body)
    }
}
