//! Blocking client for the query API.

use std::collections::BTreeMap;
use std::time::Duration;

use reqwest::blocking::Response;
use serde::de::DeserializeOwned;
use thiserror::Error;

use fleetlens_core::store::{PlateProfile, SearchPage};
use fleetlens_core::{Query, Task, Taxonomy};

use crate::{search_params, CorrectionRequest, Health};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Client { base: base_url.trim_end_matches('/').to_string(), http })
    }

    fn decode<T: DeserializeOwned>(response: Result<Response, reqwest::Error>) -> Result<T, ClientError> {
        let response = response.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ClientError::Status { status, body });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send())
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        self.get("/v1/health")
    }

    pub fn search(&self, query: &Query) -> Result<SearchPage, ClientError> {
        let qs: String = form_urlencoded::Serializer::new(String::new()).extend_pairs(search_params(query)).finish();
        self.get(&format!("/v1/search?{qs}"))
    }

    pub fn plate(&self, plate_id: &str) -> Result<PlateProfile, ClientError> {
        let encoded: String = form_urlencoded::byte_serialize(plate_id.as_bytes()).collect();
        self.get(&format!("/v1/plates/{encoded}"))
    }

    pub fn correct(&self, request: &CorrectionRequest) -> Result<PlateProfile, ClientError> {
        Self::decode(self.http.post(format!("{}/v1/corrections", self.base)).json(request).send())
    }

    pub fn taxonomies(&self) -> Result<BTreeMap<Task, Taxonomy>, ClientError> {
        self.get("/v1/taxonomies")
    }
}
