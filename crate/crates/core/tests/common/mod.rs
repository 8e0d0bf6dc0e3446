#![allow(dead_code)]

use codebook_transfer::{RatingTriple, SparseRatingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BLOCK_PATTERN: [[u8; 4]; 4] = [[5, 5, 1, 1], [5, 5, 1, 1], [1, 1, 5, 5], [1, 1, 5, 5]];

/// Fully observed 4×4 matrix made of two constant diagonal blocks.
pub fn block_fixture() -> SparseRatingMatrix {
    let triples = (0..4)
        .flat_map(|i| (0..4).map(move |j| RatingTriple::new(i, j, BLOCK_PATTERN[i][j])))
        .collect();
    SparseRatingMatrix::new(triples, 4, 4, 5).unwrap()
}

/// Random ratings in 1..=r_max with each cell observed with probability `density`.
/// At least one cell is always observed.
pub fn random_matrix(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    density: f64,
    r_max: u8,
) -> SparseRatingMatrix {
    let mut triples = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random::<f64>() < density {
                triples.push(RatingTriple::new(i, j, rng.random_range(1..=r_max)));
            }
        }
    }
    if triples.is_empty() {
        triples.push(RatingTriple::new(0, 0, rng.random_range(1..=r_max)));
    }
    SparseRatingMatrix::new(triples, m, n, r_max).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Path to the MovieLens 100K ratings, if available.
///
/// Looks at `ML100K_PATH`, then at `data/ml-100k/u.data` under the workspace.
pub fn movielens_100k() -> Option<std::path::PathBuf> {
    if let Ok(p) = std::env::var("ML100K_PATH") {
        let p = std::path::PathBuf::from(p);
        return p.exists().then_some(p);
    }
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    [
        root.join("data/ml-100k/u.data"),
        "/root/data/ml-100k/u.data".into(),
    ]
    .into_iter()
    .find(|p| p.exists())
}

/// Path to the MovieLens 1M ratings (`ML1M_PATH`, comma-separated or `::`-separated
/// files must be converted to `user,item,rating` first).
pub fn movielens_1m() -> Option<std::path::PathBuf> {
    let p = std::path::PathBuf::from(std::env::var("ML1M_PATH").ok()?);
    p.exists().then_some(p)
}
