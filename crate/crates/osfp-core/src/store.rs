//! Joint occurrence counts over (fingerprint, category) pairs.
//!
//! The store is keyed by canonical fingerprint strings so that flow-level
//! fingerprints and window-level composite keys share one representation.
//! Marginals are maintained incrementally and re-validated on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::fingerprint::Fingerprint;

/// A category label, e.g. an operating system version like `Win 10.0.1058`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(pub String);

impl CategoryLabel {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CategoryLabel {
    fn from(s: &str) -> Self {
        CategoryLabel(s.to_string())
    }
}

impl From<String> for CategoryLabel {
    fn from(s: String) -> Self {
        CategoryLabel(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountStore {
    joint: BTreeMap<String, BTreeMap<CategoryLabel, u64>>,
    fp_totals: BTreeMap<String, u64>,
    label_totals: BTreeMap<CategoryLabel, u64>,
    total: u64,
}

impl CountStore {
    pub fn new() -> CountStore {
        CountStore::default()
    }

    /// Record `weight` joint occurrences of (`fp`, `label`). `weight` >= 1.
    pub fn observe(&mut self, fp: &Fingerprint, label: &CategoryLabel, weight: u64) {
        self.observe_key(&fp.canonical(), label, weight);
    }

    /// Same as [`observe`](Self::observe) for a pre-canonicalized key
    /// (e.g. a windowed composite fingerprint).
    pub fn observe_key(&mut self, key: &str, label: &CategoryLabel, weight: u64) {
        assert!(weight >= 1, "observation weight must be positive");
        *self
            .joint
            .entry(key.to_string())
            .or_default()
            .entry(label.clone())
            .or_insert(0) += weight;
        *self.fp_totals.entry(key.to_string()).or_insert(0) += weight;
        *self.label_totals.entry(label.clone()).or_insert(0) += weight;
        self.total += weight;
    }

    /// The assignment function: all categories `fp` has been observed with.
    pub fn assignment(&self, fp: &Fingerprint) -> BTreeSet<&CategoryLabel> {
        self.assignment_key(&fp.canonical())
    }

    pub fn assignment_key(&self, key: &str) -> BTreeSet<&CategoryLabel> {
        match self.joint.get(key) {
            Some(row) => row.iter().filter(|(_, &n)| n > 0).map(|(l, _)| l).collect(),
            None => BTreeSet::new(),
        }
    }

    /// True iff every counted fingerprint maps to exactly one category.
    pub fn is_unique_assignment(&self) -> bool {
        self.joint
            .values()
            .all(|row| row.values().filter(|&&n| n > 0).count() <= 1)
    }

    /// Add all counts of `other` into `self`. Union is associative and
    /// commutative, so shard merges may run in any order.
    pub fn merge(&mut self, other: &CountStore) {
        for (key, row) in &other.joint {
            for (label, n) in row {
                if *n > 0 {
                    self.observe_key(key, label, *n);
                }
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn fp_count(&self, key: &str) -> u64 {
        self.fp_totals.get(key).copied().unwrap_or(0)
    }

    pub fn label_count(&self, label: &CategoryLabel) -> u64 {
        self.label_totals.get(label).copied().unwrap_or(0)
    }

    pub fn joint_count(&self, key: &str, label: &CategoryLabel) -> u64 {
        self.joint
            .get(key)
            .and_then(|row| row.get(label))
            .copied()
            .unwrap_or(0)
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = (&str, u64)> {
        self.fp_totals.iter().map(|(k, &n)| (k.as_str(), n))
    }

    pub fn labels(&self) -> impl Iterator<Item = (&CategoryLabel, u64)> {
        self.label_totals.iter().map(|(l, &n)| (l, n))
    }

    pub fn row(&self, key: &str) -> Option<&BTreeMap<CategoryLabel, u64>> {
        self.joint.get(key)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<CategoryLabel, u64>)> {
        self.joint.iter().map(|(k, row)| (k.as_str(), row))
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Check that marginals equal the sums of joint entries.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut total = 0u64;
        let mut label_sums: BTreeMap<&CategoryLabel, u64> = BTreeMap::new();
        for (key, row) in &self.joint {
            let fp_sum: u64 = row.values().sum();
            if self.fp_count(key) != fp_sum {
                return Err(StoreError::Inconsistent(format!(
                    "fingerprint {key:?}: marginal {} != joint sum {fp_sum}",
                    self.fp_count(key)
                )));
            }
            for (label, n) in row {
                *label_sums.entry(label).or_insert(0) += n;
            }
            total += fp_sum;
        }
        for (label, &sum) in &label_sums {
            if self.label_count(label) != sum {
                return Err(StoreError::Inconsistent(format!(
                    "label {label}: marginal {} != joint sum {sum}",
                    self.label_count(label)
                )));
            }
        }
        if label_sums.len() != self.label_totals.len() {
            return Err(StoreError::Inconsistent(
                "label marginal for a label with no joint entries".into(),
            ));
        }
        if total != self.total {
            return Err(StoreError::Inconsistent(format!(
                "grand total {} != joint sum {total}",
                self.total
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = StoreDoc {
            counts: self
                .rows()
                .flat_map(|(key, row)| {
                    row.iter().map(move |(label, &n)| CountEntry {
                        fp: key.to_string(),
                        label: label.clone(),
                        n,
                    })
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("store serialization")
    }

    pub fn from_json(text: &str) -> Result<CountStore, StoreError> {
        let doc: StoreDoc =
            serde_json::from_str(text).map_err(|e| StoreError::BadDocument(e.to_string()))?;
        let mut store = CountStore::new();
        for entry in &doc.counts {
            if entry.n == 0 {
                return Err(StoreError::BadDocument(format!(
                    "zero count for {:?}/{}",
                    entry.fp, entry.label
                )));
            }
            store.observe_key(&entry.fp, &entry.label, entry.n);
        }
        store.validate()?;
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreDoc {
    counts: Vec<CountEntry>,
}

#[derive(Serialize, Deserialize)]
struct CountEntry {
    fp: String,
    label: CategoryLabel,
    n: u64,
}
