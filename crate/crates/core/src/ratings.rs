//! Sparse user–item rating storage.
//!
//! Missing ratings are represented by absence. The observed set doubles as the
//! binary mask: an entry is "observed" iff a triple for it exists.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RatingTriple {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
}

impl RatingTriple {
    pub fn new(user: usize, item: usize, rating: u8) -> Self {
        Self { user, item, rating }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseRatingMatrix {
    n_users: usize,
    n_items: usize,
    r_max: u8,
    triples: Vec<RatingTriple>,
    // Indices into `triples`, each list sorted by the opposite coordinate.
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
}

impl SparseRatingMatrix {
    /// Validates and indexes a list of ratings.
    pub fn new(
        triples: Vec<RatingTriple>,
        n_users: usize,
        n_items: usize,
        r_max: u8,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triples.len());
        for t in &triples {
            if t.rating == 0 || t.rating > r_max {
                return Err(Error::InvalidRating(t.rating as i64));
            }
            if t.user >= n_users || t.item >= n_items {
                return Err(Error::OutOfBounds {
                    user: t.user,
                    item: t.item,
                    n_users,
                    n_items,
                });
            }
            if !seen.insert((t.user, t.item)) {
                return Err(Error::DuplicateEntry {
                    user: t.user,
                    item: t.item,
                });
            }
        }

        let mut by_user = vec![Vec::new(); n_users];
        let mut by_item = vec![Vec::new(); n_items];
        for (idx, t) in triples.iter().enumerate() {
            by_user[t.user].push(idx);
            by_item[t.item].push(idx);
        }
        for list in &mut by_user {
            list.sort_unstable_by_key(|&k| triples[k].item);
        }
        for list in &mut by_item {
            list.sort_unstable_by_key(|&k| triples[k].user);
        }

        Ok(Self {
            n_users,
            n_items,
            r_max,
            triples,
            by_user,
            by_item,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn r_max(&self) -> u8 {
        self.r_max
    }

    /// Number of observed entries.
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[RatingTriple] {
        &self.triples
    }

    pub fn iter(&self) -> impl Iterator<Item = &RatingTriple> {
        self.triples.iter()
    }

    /// Ratings of one user, ordered by item.
    pub fn user_ratings(&self, user: usize) -> impl Iterator<Item = &RatingTriple> {
        self.by_user[user].iter().map(move |&k| &self.triples[k])
    }

    /// Ratings of one item, ordered by user.
    pub fn item_ratings(&self, item: usize) -> impl Iterator<Item = &RatingTriple> {
        self.by_item[item].iter().map(move |&k| &self.triples[k])
    }

    pub fn get(&self, user: usize, item: usize) -> Option<u8> {
        let list = self.by_user.get(user)?;
        list.binary_search_by_key(&item, |&k| self.triples[k].item)
            .ok()
            .map(|pos| self.triples[list[pos]].rating)
    }

    pub fn density(&self) -> f64 {
        let cells = self.n_users * self.n_items;
        if cells == 0 {
            0.0
        } else {
            self.triples.len() as f64 / cells as f64
        }
    }

    pub fn observed_mean(&self) -> Result<f64> {
        if self.triples.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let sum: f64 = self.triples.iter().map(|t| t.rating as f64).sum();
        Ok(sum / self.triples.len() as f64)
    }

    /// Squared Frobenius norm of `(X − A) ⊙ W`.
    pub fn masked_residual_sq(&self, reconstruction: &DenseMatrix) -> Result<f64> {
        if reconstruction.shape() != (self.n_users, self.n_items) {
            return Err(Error::ShapeMismatch(format!(
                "reconstruction is {}x{}, ratings are {}x{}",
                reconstruction.rows(),
                reconstruction.cols(),
                self.n_users,
                self.n_items
            )));
        }
        Ok(self
            .triples
            .iter()
            .map(|t| {
                let r = t.rating as f64 - reconstruction[(t.user, t.item)];
                r * r
            })
            .sum())
    }

    /// Dense copy with observed ratings in place and zeros elsewhere.
    pub fn densify(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_users, self.n_items);
        for t in &self.triples {
            m[(t.user, t.item)] = t.rating as f64;
        }
        m
    }

    /// A matrix with the same shape holding only the selected triples.
    pub fn select(&self, indices: &[usize]) -> Self {
        let triples = indices.iter().map(|&k| self.triples[k]).collect();
        Self::new(triples, self.n_users, self.n_items, self.r_max)
            .expect("subset of a valid matrix is valid")
    }
}
