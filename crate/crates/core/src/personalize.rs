//! Cart-based personalization.
//!
//! A cart reduces to one query vector: the rating-weighted mean of the
//! members' raw embeddings. Mixed carts can first be split into uniform
//! sub-carts by clustering member embeddings.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::{Cart, CartEntry, Catalog, CatalogError, EmbeddingVector};
use crate::retrieval::{RecommendationList, RetrievalError, VectorIndex};

/// Lloyd iterations cap for [`KMeans`].
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum PersonalizeError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("cart rating mass is zero")]
    ZeroRatingMass,
    #[error("cannot split a cart of {size} items into {k} groups")]
    BadSplit { k: usize, size: usize },
}

/// Rating-weighted mean of a cart's member embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CartVector {
    pub values: EmbeddingVector,
    pub source_item_count: usize,
    pub total_rating_mass: f64,
}

/// `sum(r_i * v_i) / sum(r_i)` over raw (unnormalized) embeddings, in 64-bit.
pub fn cart_vector(cart: &Cart, catalog: &Catalog) -> Result<CartVector, PersonalizeError> {
    let mut acc: Vec<f64> = Vec::new();
    let mut mass = 0.0;
    for entry in cart.entries() {
        let v = catalog.embedding(&entry.id)?;
        if acc.is_empty() {
            acc = vec![0.0; v.dim()];
        }
        for (a, &x) in acc.iter_mut().zip(v.values()) {
            *a += entry.rating * f64::from(x);
        }
        mass += entry.rating;
    }
    if mass <= 0.0 {
        return Err(PersonalizeError::ZeroRatingMass);
    }
    let values = acc.iter().map(|&a| (a / mass) as f32).collect();
    Ok(CartVector {
        values: EmbeddingVector::new(values).ok_or(PersonalizeError::ZeroRatingMass)?,
        source_item_count: cart.len(),
        total_rating_mass: mass,
    })
}

/// Assigns each point to one of `k` groups. The fixed-k [`KMeans`] is the
/// shipped implementation; an automatic-k method can implement this trait.
pub trait CartSplitter {
    /// Returns one group index per point, each index in `0..k`, every group nonempty.
    fn assign(&self, points: &[Vec<f64>], k: usize) -> Vec<usize>;
}

/// Lloyd's algorithm, initialized from `k` distinct members drawn with `seed`.
#[derive(Debug, Clone, Copy)]
pub struct KMeans {
    pub seed: u64,
    pub max_iterations: usize,
}

impl KMeans {
    pub fn new(seed: u64) -> Self {
        Self { seed, max_iterations: MAX_ITERATIONS }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Moves points into empty clusters: each empty cluster takes the point
/// farthest from its current centroid among clusters with more than one member.
fn fill_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donor = (0..points.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .max_by(|&i, &j| {
                sq_dist(&points[i], &centroids[assign[i]])
                    .total_cmp(&sq_dist(&points[j], &centroids[assign[j]]))
                    .then(j.cmp(&i))
            })
            .expect("k <= n guarantees a cluster with spare members");
        assign[donor] = empty;
    }
}

fn means(points: &[Vec<f64>], assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = c.max(1) as f64;
        s.iter_mut().for_each(|v| *v /= c);
    }
    sums
}

impl CartSplitter for KMeans {
    fn assign(&self, points: &[Vec<f64>], k: usize) -> Vec<usize> {
        let n = points.len();
        assert!(k >= 1 && k <= n, "1 <= k <= n");
        let dim = points[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut init = rand::seq::index::sample(&mut rng, n, k).into_vec();
        init.sort_unstable();
        let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();

        let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        fill_empty(points, &centroids, &mut assign, k);
        for _ in 0..self.max_iterations {
            centroids = means(points, &assign, k, dim);
            let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
            fill_empty(points, &centroids, &mut next, k);
            if next == assign {
                break;
            }
            assign = next;
        }
        assign
    }
}

/// Splits a cart into `k` nonempty sub-carts that partition its entries.
/// Sub-carts are ordered by their first member's position in the input.
pub fn split_cart_with(
    cart: &Cart,
    catalog: &Catalog,
    k: usize,
    splitter: &impl CartSplitter,
) -> Result<Vec<Cart>, PersonalizeError> {
    if k == 0 || k > cart.len() {
        return Err(PersonalizeError::BadSplit { k, size: cart.len() });
    }
    let points = cart
        .entries()
        .iter()
        .map(|e| Ok(catalog.embedding(&e.id)?.values().iter().map(|&x| f64::from(x)).collect()))
        .collect::<Result<Vec<Vec<f64>>, CatalogError>>()?;
    if k == 1 {
        return Ok(vec![cart.clone()]);
    }
    let assign = splitter.assign(&points, k);
    let mut groups: Vec<Vec<CartEntry>> = vec![Vec::new(); k];
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for (entry, &g) in cart.entries().iter().zip(&assign) {
        if groups[g].is_empty() {
            order.push(g);
        }
        groups[g].push(entry.clone());
    }
    order
        .into_iter()
        .map(|g| Cart::new(cart.user_id(), std::mem::take(&mut groups[g])).map_err(PersonalizeError::from))
        .collect()
}

pub fn split_cart(cart: &Cart, catalog: &Catalog, k: usize, seed: u64) -> Result<Vec<Cart>, PersonalizeError> {
    split_cart_with(cart, catalog, k, &KMeans::new(seed))
}

/// Top-k items for the cart vector, never returning the cart's own items.
pub fn recommend_for_cart(
    cart: &Cart,
    catalog: &Catalog,
    index: &VectorIndex,
    k: usize,
) -> Result<RecommendationList, PersonalizeError> {
    let v = cart_vector(cart, catalog)?;
    let exclude: HashSet<String> = cart.item_ids().map(str::to_owned).collect();
    Ok(index.top_k(v.values.values(), k, Some(&exclude))?)
}
