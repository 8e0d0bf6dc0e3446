//! Rating-file parsing, subset selection and dataset statistics.
//!
//! Two layouts are understood: tab-separated `user item rating timestamp`
//! lines and comma-separated `user,item,rating[,...]` lines. A first line
//! whose leading fields are not numeric is treated as a header. Rating 0
//! marks a missing value and is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{RatingTriple, SparseRatingMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Tab,
    Comma,
}

impl Format {
    fn separator(self) -> char {
        match self {
            Format::Tab => '\t',
            Format::Comma => ',',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
    /// Keep only the first N user ids in ascending order.
    #[serde(default)]
    pub max_users: Option<usize>,
    /// Keep only the first N item ids in ascending order.
    #[serde(default)]
    pub max_items: Option<usize>,
    /// Smallest valid id in the file.
    #[serde(default = "default_id_base")]
    pub id_base: u8,
    #[serde(default = "default_r_max")]
    pub r_max: u8,
}

fn default_id_base() -> u8 {
    1
}
fn default_r_max() -> u8 {
    5
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, format: Format) -> Self {
        Self {
            path: path.into(),
            format,
            max_users: None,
            max_items: None,
            id_base: default_id_base(),
            r_max: default_r_max(),
        }
    }
}

/// A parsed matrix together with the original ids behind each compact index.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub matrix: SparseRatingMatrix,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// Re-ratings that replaced an earlier line.
    pub duplicates: usize,
}

pub fn load(spec: &DatasetSpec) -> Result<SparseRatingMatrix> {
    load_with_ids(spec).map(|d| d.matrix)
}

pub fn load_with_ids(spec: &DatasetSpec) -> Result<LoadedDataset> {
    let file = std::fs::File::open(&spec.path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(spec.path.clone()),
        _ => Error::Io(e),
    })?;
    parse(BufReader::new(file), spec)
}

fn parse_line(line: &str, sep: char, r_max: u8) -> std::result::Result<(u64, u64, u8), String> {
    let mut fields = line.split(sep).map(str::trim);
    let mut next = |what: &str| fields.next().ok_or_else(|| format!("missing {what} field"));
    let user = next("user")?;
    let item = next("item")?;
    let rating = next("rating")?;
    let user = user
        .parse::<u64>()
        .map_err(|e| format!("user id {user:?}: {e}"))?;
    let item = item
        .parse::<u64>()
        .map_err(|e| format!("item id {item:?}: {e}"))?;
    let value = rating
        .parse::<f64>()
        .map_err(|e| format!("rating {rating:?}: {e}"))?;
    if value.fract() != 0.0 || value < 0.0 || value > r_max as f64 {
        return Err(format!("rating {rating} is not an integer in 0..={r_max}"));
    }
    Ok((user, item, value as u8))
}

pub fn parse(reader: impl BufRead, spec: &DatasetSpec) -> Result<LoadedDataset> {
    let sep = spec.format.separator();
    // (user, item) -> rating, last occurrence wins
    let mut cells: BTreeMap<(u64, u64), u8> = BTreeMap::new();
    let mut users = BTreeSet::new();
    let mut items = BTreeSet::new();
    let mut duplicates = 0;
    let mut first = true;

    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line(line, sep, spec.r_max);
        let was_first = std::mem::replace(&mut first, false);
        let (user, item, rating) = match parsed {
            Ok(v) => v,
            Err(_) if was_first && looks_like_header(line, sep) => continue,
            Err(message) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message,
                })
            }
        };
        if user < spec.id_base as u64 || item < spec.id_base as u64 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("id below base {}", spec.id_base),
            });
        }
        users.insert(user);
        items.insert(item);
        if rating == 0 {
            continue;
        }
        if let Some(old) = cells.insert((user, item), rating) {
            duplicates += 1;
            log::warn!(
                "line {}: user {user} re-rated item {item} ({old} -> {rating}); keeping the last",
                n + 1
            );
        }
    }

    let user_ids: Vec<u64> = users
        .into_iter()
        .take(spec.max_users.unwrap_or(usize::MAX))
        .collect();
    let item_ids: Vec<u64> = items
        .into_iter()
        .take(spec.max_items.unwrap_or(usize::MAX))
        .collect();
    let user_index: BTreeMap<u64, usize> =
        user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_index: BTreeMap<u64, usize> =
        item_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();

    let triples: Vec<RatingTriple> = cells
        .into_iter()
        .filter_map(|((u, i), r)| {
            Some(RatingTriple::new(
                *user_index.get(&u)?,
                *item_index.get(&i)?,
                r,
            ))
        })
        .collect();
    if triples.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let matrix = SparseRatingMatrix::new(triples, user_ids.len(), item_ids.len(), spec.r_max)?;
    Ok(LoadedDataset {
        matrix,
        user_ids,
        item_ids,
        duplicates,
    })
}

fn looks_like_header(line: &str, sep: char) -> bool {
    line.split(sep)
        .take(3)
        .any(|f| f.trim().parse::<f64>().is_err())
}

/// Writes `user,item,rating` lines with the given id offset.
pub fn write_comma_separated(
    m: &SparseRatingMatrix,
    id_base: u8,
    mut out: impl Write,
) -> std::io::Result<()> {
    let base = id_base as usize;
    for t in m.iter() {
        writeln!(out, "{},{},{}", t.user + base, t.item + base, t.rating)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_observed: usize,
    pub observed_percentage: f64,
}

pub fn stats(m: &SparseRatingMatrix) -> DatasetStats {
    DatasetStats {
        n_users: m.n_users(),
        n_items: m.n_items(),
        n_observed: m.len(),
        observed_percentage: 100.0 * m.density(),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_users={}", self.n_users)?;
        writeln!(f, "n_items={}", self.n_items)?;
        writeln!(f, "n_observed={}", self.n_observed)?;
        writeln!(f, "observed_percentage={:.4}", self.observed_percentage)
    }
}

/// Resolves `path` against `base` unless it is already absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
