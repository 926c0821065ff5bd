//! Content-based fashion recommendation toolkit.
//!
//! The crate is embedding-agnostic: any model that writes per-item feature
//! vectors in the `EMB1` format (or CSV) can feed the retrieval and
//! personalization paths. A small reference classifier lives in [`toynet`]
//! for producing embeddings at desk scale and for exercising the training
//! losses in [`lossmetrics`].
//!
//! Modules:
//! - [`catalog`]: items, label vocabulary, carts, manifest and embedding files.
//! - [`lossmetrics`]: label weights, weighted cross-entropy, soft F1/IOU scaling, set metrics, Recall@K.
//! - [`toynet`]: one-hidden-layer multi-label classifier with analytic gradients.
//! - [`retrieval`]: normalized vector index and exact cosine top-k.
//! - [`personalize`]: rating-weighted cart vectors, cart splitting, cart recommendations.
//! - [`augment`]: foreground extraction, background compositing, standard augmentations.
//! - [`ohseval`]: evaluation sheets, human score validation and weighted aggregation.
//! - [`api`]: JSON bodies shared by the HTTP service and its client.

pub mod api;
pub mod augment;
pub mod catalog;
pub mod lossmetrics;
pub mod ohseval;
pub mod personalize;
pub mod retrieval;
pub mod toynet;

pub use catalog::{Cart, CartEntry, Catalog, CatalogItem, EmbeddingVector, LabelVocabulary};
pub use retrieval::{Recommendation, RecommendationList, VectorIndex};
