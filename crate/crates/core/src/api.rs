//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::catalog::Cart;
use crate::ohseval::Violation;
use crate::retrieval::Recommendation;

/// `POST /recommend`. Exactly one of `item_id` or `embedding` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<String>,
}

/// `POST /cart/recommend`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartRecommendRequest {
    pub cart: Cart,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub results: Vec<Recommendation>,
}

/// `GET /items/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub id: String,
    pub image: String,
    pub image_url: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub has_embedding: bool,
}

/// Successful `POST /sheets/{id}/scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresAccepted {
    pub sheet_id: String,
    pub scorer_id: String,
    pub entries: usize,
}

/// Body of a 422 response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationsBody {
    pub violations: Vec<Violation>,
}

/// Body of 400 and 404 responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
