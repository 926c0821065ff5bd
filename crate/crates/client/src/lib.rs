//! Async client for the recommendation and scoring service.

use std::collections::BTreeMap;

use grec_core::api::{
    CartRecommendRequest, ErrorBody, ItemInfo, RecommendRequest, RecommendResponse, ScoresAccepted, ViolationsBody,
};
use grec_core::catalog::Cart;
use grec_core::ohseval::{Aggregation, EvaluationSheet, ScoreSubmission, Violation};
use grec_core::retrieval::Recommendation;
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Status { status: u16, message: String },
    #[error("invalid base url {0:?}")]
    BaseUrl(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Outcome of a score submission: stored, or rejected with every violation.
#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    Accepted(ScoresAccepted),
    Rejected(Vec<Violation>),
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self> {
        let base = base_url.trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::BaseUrl(base_url.to_owned()));
        }
        Ok(Self { base: base.to_owned(), http: reqwest::Client::new() })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn health(&self) -> Result<String> {
        let resp = check(self.http.get(self.url("/health")).send().await?).await?;
        Ok(resp.text().await?)
    }

    pub async fn item(&self, id: &str) -> Result<ItemInfo> {
        self.get_json(&format!("/items/{}", encode(id))).await
    }

    pub async fn recommend(&self, req: &RecommendRequest) -> Result<Vec<Recommendation>> {
        let resp = check(self.http.post(self.url("/recommend")).json(req).send().await?).await?;
        Ok(resp.json::<RecommendResponse>().await?.results)
    }

    pub async fn recommend_item(&self, item_id: &str, k: usize, exclude: Vec<String>) -> Result<Vec<Recommendation>> {
        self.recommend(&RecommendRequest { item_id: Some(item_id.to_owned()), embedding: None, k, exclude }).await
    }

    pub async fn cart_recommend(&self, cart: &Cart, k: usize) -> Result<Vec<Recommendation>> {
        let body = CartRecommendRequest { cart: cart.clone(), k };
        let resp = check(self.http.post(self.url("/cart/recommend")).json(&body).send().await?).await?;
        Ok(resp.json::<RecommendResponse>().await?.results)
    }

    pub async fn sheets(&self) -> Result<Vec<String>> {
        self.get_json("/sheets").await
    }

    pub async fn sheet(&self, id: &str) -> Result<EvaluationSheet> {
        self.get_json(&format!("/sheets/{}", encode(id))).await
    }

    pub async fn submit_scores(&self, sheet_id: &str, submission: &ScoreSubmission) -> Result<SubmitOutcome> {
        let resp = self.http.post(self.url(&format!("/sheets/{}/scores", encode(sheet_id)))).json(submission).send().await?;
        if resp.status() == StatusCode::UNPROCESSABLE_ENTITY {
            return Ok(SubmitOutcome::Rejected(resp.json::<ViolationsBody>().await?.violations));
        }
        Ok(SubmitOutcome::Accepted(check(resp).await?.json().await?))
    }

    /// Aggregation with the sheet's own weights when `weights` is `None`.
    pub async fn aggregate(&self, sheet_id: &str, weights: Option<&BTreeMap<String, f64>>) -> Result<Aggregation> {
        let mut req = self.http.get(self.url(&format!("/sheets/{}/aggregate", encode(sheet_id))));
        if let Some(w) = weights {
            let spec: Vec<String> = w.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            req = req.query(&[("weights", spec.join(","))]);
        }
        Ok(check(req.send().await?).await?.json().await?)
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Ok(check(self.http.get(self.url(path)).send().await?).await?.json().await?)
    }
}

async fn check(resp: Response) -> Result<Response> {
    if resp.status().is_success() {
        return Ok(resp);
    }
    let status = resp.status().as_u16();
    let text = resp.text().await.unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
    Err(ClientError::Status { status, message })
}

fn encode(segment: &str) -> String {
    let mut out = String::with_capacity(segment.len());
    for b in segment.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
