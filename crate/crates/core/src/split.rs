//! Train/validation/test partitioning around a fixed test set.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed test ids plus the seed that shuffles the remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_ids: Vec<String>,
}

impl SplitManifest {
    pub fn new(seed: u64, test_ids: Vec<String>) -> Self {
        Self {
            seed,
            test_ids,
            train_ids: Vec::new(),
            val_ids: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Drops test ids that are not among `ids` (e.g. graphs removed by the
    /// discard rule).
    pub fn restricted_to(&self, ids: &[String]) -> Self {
        let present: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Self {
            seed: self.seed,
            test_ids: self
                .test_ids
                .iter()
                .filter(|t| present.contains(t.as_str()))
                .cloned()
                .collect(),
            train_ids: Vec::new(),
            val_ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// `round_half_up(0.7·n)` in integer arithmetic.
pub fn train_count(non_test: usize) -> usize {
    (7 * non_test + 5) / 10
}

/// Test ids come from the manifest; the remaining ids are sorted, shuffled
/// with the manifest seed and cut 70/30 into train and validation.
pub fn split_dataset(graph_ids: &[String], manifest: &SplitManifest) -> Result<Split> {
    let all: HashSet<&str> = graph_ids.iter().map(String::as_str).collect();
    let test: HashSet<&str> = manifest.test_ids.iter().map(String::as_str).collect();
    if let Some(missing) = manifest.test_ids.iter().find(|t| !all.contains(t.as_str())) {
        return Err(Error::Manifest(format!("test id {missing} is not among the graphs")));
    }
    if test.len() != manifest.test_ids.len() {
        return Err(Error::Manifest("duplicate test ids".into()));
    }
    let mut rest: Vec<String> = graph_ids
        .iter()
        .filter(|g| !test.contains(g.as_str()))
        .cloned()
        .collect();
    rest.sort();
    rest.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    rest.shuffle(&mut rng);
    let n_train = train_count(rest.len());
    let val = rest.split_off(n_train);
    Ok(Split {
        train: rest,
        val,
        test: manifest.test_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i:03}")).collect()
    }

    #[test]
    fn hundred_ids_give_56_24_20() {
        let all = ids(100);
        let m = SplitManifest::new(3, all[..20].to_vec());
        let s = split_dataset(&all, &m).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (56, 24, 20));
    }

    #[test]
    fn ten_ids_round_half_up() {
        let all = ids(10);
        let s = split_dataset(&all, &SplitManifest::new(1, all[..2].to_vec())).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (6, 2));
        assert_eq!(train_count(5), 4); // 3.5 rounds up
    }

    #[test]
    fn same_seed_same_partition() {
        let all = ids(50);
        let m = SplitManifest::new(9, all[40..].to_vec());
        assert_eq!(split_dataset(&all, &m).unwrap(), split_dataset(&all, &m).unwrap());
        let other = split_dataset(&all, &SplitManifest::new(10, all[40..].to_vec())).unwrap();
        assert_ne!(split_dataset(&all, &m).unwrap().train, other.train);
    }

    #[test]
    fn unknown_test_id_is_manifest_error() {
        let m = SplitManifest::new(0, vec!["nope".into()]);
        assert!(matches!(split_dataset(&ids(3), &m), Err(Error::Manifest(_))));
    }

    #[test]
    fn input_order_does_not_matter() {
        let all = ids(30);
        let mut rev = all.clone();
        rev.reverse();
        let m = SplitManifest::new(5, all[..6].to_vec());
        assert_eq!(split_dataset(&all, &m).unwrap(), split_dataset(&rev, &m).unwrap());
    }
}
