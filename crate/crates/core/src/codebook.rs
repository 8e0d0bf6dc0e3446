//! Cluster-level rating pattern built from hard co-cluster memberships.

use serde::{Deserialize, Serialize};

use crate::cocluster::MembershipMatrix;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ratings::SparseRatingMatrix;

/// How a block's sum of ratings is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// Divide by the number of observed ratings in the block.
    #[default]
    Observed,
    /// Divide by the full block size `|user cluster| · |item cluster|`,
    /// treating missing entries as zeros.
    Literal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    values: DenseMatrix,
    block_counts: Vec<usize>,
    fill_value: f64,
}

impl Codebook {
    /// The `k1 × k2` pattern matrix.
    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    /// Observed ratings falling into block `(a, b)`.
    pub fn block_count(&self, a: usize, b: usize) -> usize {
        self.block_counts[a * self.values.cols() + b]
    }

    /// Value assigned to blocks with no observed rating.
    pub fn fill_value(&self) -> f64 {
        self.fill_value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn to_csv(&self) -> String {
        self.values.to_csv()
    }

    pub fn counts_csv(&self) -> String {
        let k2 = self.values.cols();
        self.block_counts
            .chunks(k2.max(1))
            .map(|row| {
                let cells: Vec<String> = row.iter().map(usize::to_string).collect();
                cells.join(",") + "\n"
            })
            .collect()
    }
}

pub fn build_codebook(
    x: &SparseRatingMatrix,
    users: &MembershipMatrix,
    items: &MembershipMatrix,
    mode: AveragingMode,
) -> Result<Codebook> {
    if users.n_rows() != x.n_users() {
        return Err(Error::MembershipSizeMismatch {
            expected: x.n_users(),
            got: users.n_rows(),
        });
    }
    if items.n_rows() != x.n_items() {
        return Err(Error::MembershipSizeMismatch {
            expected: x.n_items(),
            got: items.n_rows(),
        });
    }
    let (k1, k2) = (users.n_clusters(), items.n_clusters());
    let mut sums = vec![0.0; k1 * k2];
    let mut counts = vec![0usize; k1 * k2];
    for t in x.iter() {
        let block = users.cluster_of(t.user) * k2 + items.cluster_of(t.item);
        sums[block] += t.rating as f64;
        counts[block] += 1;
    }

    let user_sizes = users.cluster_sizes();
    let item_sizes = items.cluster_sizes();
    let mut values = DenseMatrix::zeros(k1, k2);
    let mut filled_sum = 0.0;
    let mut filled_n = 0usize;
    for a in 0..k1 {
        for b in 0..k2 {
            let block = a * k2 + b;
            if counts[block] == 0 {
                continue;
            }
            let denom = match mode {
                AveragingMode::Observed => counts[block],
                AveragingMode::Literal => user_sizes[a] * item_sizes[b],
            };
            let v = sums[block] / denom as f64;
            values[(a, b)] = v;
            filled_sum += v;
            filled_n += 1;
        }
    }

    let fill_value = if filled_n > 0 {
        filled_sum / filled_n as f64
    } else {
        x.observed_mean()?
    };
    for a in 0..k1 {
        for b in 0..k2 {
            if counts[a * k2 + b] == 0 {
                values[(a, b)] = fill_value;
            }
        }
    }

    Ok(Codebook {
        values,
        block_counts: counts,
        fill_value,
    })
}

/// Dense `Ps · B · Qsᵀ`: every entry takes its co-cluster's codebook value.
pub fn codebook_reconstruction(
    codebook: &Codebook,
    users: &MembershipMatrix,
    items: &MembershipMatrix,
) -> Result<DenseMatrix> {
    let (k1, k2) = codebook.shape();
    if users.n_clusters() != k1 || items.n_clusters() != k2 {
        return Err(Error::ShapeMismatch(format!(
            "memberships have {}x{} clusters, codebook is {k1}x{k2}",
            users.n_clusters(),
            items.n_clusters()
        )));
    }
    let b = codebook.values();
    Ok(DenseMatrix::from_fn(
        users.n_rows(),
        items.n_rows(),
        |i, j| b[(users.cluster_of(i), items.cluster_of(j))],
    ))
}
