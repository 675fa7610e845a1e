//! Priors, posteriors, entropies, and information gain over a count store.
//!
//! All entropies are in bits (log base 2) with `0 * log 0 = 0`. The gain is
//! computed along two algebraic routes — entropy difference and
//! probability-weighted KL divergence — which must agree; the report keeps
//! the entropy-difference value.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::StoreError;
use crate::store::{CategoryLabel, CountStore};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorDistribution {
    pub probs: BTreeMap<CategoryLabel, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorRow {
    pub probs: BTreeMap<CategoryLabel, f64>,
    /// Fingerprint probability p(f).
    pub p_f: f64,
    /// Prior mass of the fingerprint's assignment set.
    pub n_f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorTable {
    pub rows: BTreeMap<String, PosteriorRow>,
}

/// How posterior rows are estimated from the store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorMode {
    /// Prior mass renormalized over the assignment set; the closed form for
    /// a 0/1 likelihood.
    PriorRenormalized,
    /// Joint ratio `joint(f,c) / count(f)`, optionally with additive
    /// smoothing over the assignment set. The default for measured tables.
    Empirical { alpha: f64 },
}

impl Default for PosteriorMode {
    fn default() -> Self {
        PosteriorMode::Empirical { alpha: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainEntry {
    pub fingerprint: String,
    /// KL divergence of the fingerprint's posterior from the prior, in bits.
    pub d_kl: f64,
    /// `p(f) * d_kl`; these sum to the total gain.
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfoGainReport {
    pub h_prior: f64,
    pub h_posterior: f64,
    pub gain: f64,
    pub per_fingerprint: Vec<GainEntry>,
}

pub fn estimate_prior(store: &CountStore) -> Result<PriorDistribution, StoreError> {
    if store.is_empty() {
        return Err(StoreError::EmptyStore);
    }
    let n = store.total() as f64;
    Ok(PriorDistribution {
        probs: store
            .labels()
            .map(|(label, count)| (label.clone(), count as f64 / n))
            .collect(),
    })
}

pub fn posterior(store: &CountStore, mode: PosteriorMode) -> Result<PosteriorTable, StoreError> {
    if store.is_empty() {
        return Err(StoreError::EmptyStore);
    }
    let n = store.total() as f64;
    let prior = estimate_prior(store)?;
    let mut rows = BTreeMap::new();
    for (key, joint_row) in store.rows() {
        let count_f = store.fp_count(key);
        if count_f == 0 {
            continue;
        }
        let support: Vec<&CategoryLabel> = joint_row
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(l, _)| l)
            .collect();
        let n_f: f64 = support.iter().map(|l| prior.probs[l]).sum();
        let probs = match mode {
            PosteriorMode::PriorRenormalized => support
                .iter()
                .map(|&l| (l.clone(), prior.probs[l] / n_f))
                .collect(),
            PosteriorMode::Empirical { alpha } => {
                let denom = count_f as f64 + alpha * support.len() as f64;
                support
                    .iter()
                    .map(|&l| {
                        let joint = joint_row[l] as f64;
                        (l.clone(), (joint + alpha) / denom)
                    })
                    .collect()
            }
        };
        rows.insert(
            key.to_string(),
            PosteriorRow {
                probs,
                p_f: count_f as f64 / n,
                n_f,
            },
        );
    }
    Ok(PosteriorTable { rows })
}

/// Shannon entropy of a category distribution, in bits.
pub fn entropy(p: &PriorDistribution) -> f64 {
    neg_plogp_sum(p.probs.values().copied())
}

/// Expected posterior entropy over fingerprints, in bits.
pub fn conditional_entropy(table: &PosteriorTable) -> f64 {
    table
        .rows
        .values()
        .map(|row| row.p_f * neg_plogp_sum(row.probs.values().copied()))
        .sum()
}

fn neg_plogp_sum(probs: impl Iterator<Item = f64>) -> f64 {
    -probs
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// Gain of the fingerprinting process plus the per-fingerprint breakdown.
pub fn information_gain(store: &CountStore) -> Result<InfoGainReport, StoreError> {
    let prior = estimate_prior(store)?;
    let table = posterior(store, PosteriorMode::default())?;
    let h_prior = entropy(&prior);
    let h_posterior = conditional_entropy(&table);
    let per_fingerprint: Vec<GainEntry> = table
        .rows
        .iter()
        .map(|(key, row)| {
            let d_kl = row
                .probs
                .iter()
                .filter(|(_, &p)| p > 0.0)
                .map(|(label, &p)| p * (p / prior.probs[label]).log2())
                .sum();
            GainEntry {
                fingerprint: key.clone(),
                d_kl,
                normalized: row.p_f * d_kl,
            }
        })
        .collect();
    Ok(InfoGainReport {
        h_prior,
        h_posterior,
        gain: h_prior - h_posterior,
        per_fingerprint,
    })
}

/// Top-`k` fingerprints by normalized gain, descending; ties broken by
/// canonical string.
pub fn top_fingerprints_by_gain(
    store: &CountStore,
    k: usize,
) -> Result<Vec<GainEntry>, StoreError> {
    let mut entries = information_gain(store)?.per_fingerprint;
    entries.sort_by(|a, b| {
        b.normalized
            .partial_cmp(&a.normalized)
            .expect("finite gains")
            .then_with(|| a.fingerprint.cmp(&b.fingerprint))
    });
    entries.truncate(k);
    Ok(entries)
}

/// CSV rows of (data type, H(C), H(C|F), I(C;F)).
pub fn gain_rows_csv(rows: &[(String, InfoGainReport)]) -> String {
    let mut out = String::from("data_type,h_prior,h_posterior,gain\n");
    for (name, report) in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            name, report.h_prior, report.h_posterior, report.gain
        ));
    }
    out
}

/// CSV rows of (fingerprint, normalized gain).
pub fn top_gain_csv(entries: &[GainEntry]) -> String {
    let mut out = String::from("fingerprint,normalized_gain\n");
    for e in entries {
        let quoted = e.fingerprint.replace('"', "\"\"");
        out.push_str(&format!("\"{}\",{:.6}\n", quoted, e.normalized));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Fingerprint;

    fn http(ua: &str) -> Fingerprint {
        Fingerprint::http(ua)
    }

    fn store_from(counts: &[(&str, &str, u64)]) -> CountStore {
        let mut store = CountStore::new();
        for (ua, label, n) in counts {
            store.observe(&http(ua), &(*label).into(), *n);
        }
        store
    }

    #[test]
    fn prior_is_count_ratio() {
        let store = store_from(&[("a", "Win", 3), ("b", "OSX", 1)]);
        let prior = estimate_prior(&store).unwrap();
        assert_eq!(prior.probs[&"Win".into()], 0.75);
        assert_eq!(prior.probs[&"OSX".into()], 0.25);

        let single = store_from(&[("a", "Win", 4)]);
        assert_eq!(estimate_prior(&single).unwrap().probs[&"Win".into()], 1.0);
    }

    #[test]
    fn empty_store_is_an_error() {
        assert!(matches!(
            estimate_prior(&CountStore::new()),
            Err(StoreError::EmptyStore)
        ));
        assert!(information_gain(&CountStore::new()).is_err());
    }

    #[test]
    fn renormalized_posterior_splits_prior_mass() {
        // Prior {Win:.6, OSX:.2, iOS:.2}; f seen with OSX and iOS only.
        let mut store = store_from(&[("w", "Win", 6)]);
        store.observe(&http("f"), &"OSX".into(), 1);
        store.observe(&http("f"), &"iOS".into(), 1);
        store.observe(&http("o"), &"OSX".into(), 1);
        store.observe(&http("i"), &"iOS".into(), 1);
        let table = posterior(&store, PosteriorMode::PriorRenormalized).unwrap();
        let row = &table.rows[&http("f").canonical()];
        assert!((row.n_f - 0.4).abs() < 1e-12);
        assert!((row.probs[&"OSX".into()] - 0.5).abs() < 1e-12);
        assert!((row.probs[&"iOS".into()] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_support_renormalized_posterior_equals_prior() {
        let store = store_from(&[("f", "Win", 3), ("f", "OSX", 1)]);
        let table = posterior(&store, PosteriorMode::PriorRenormalized).unwrap();
        let row = &table.rows[&http("f").canonical()];
        let prior = estimate_prior(&store).unwrap();
        for (label, p) in &row.probs {
            assert!((p - prior.probs[label]).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_posterior_is_joint_ratio() {
        let store = store_from(&[("f", "Win", 9), ("f", "OSX", 1)]);
        let table = posterior(&store, PosteriorMode::default()).unwrap();
        let row = &table.rows[&http("f").canonical()];
        assert!((row.probs[&"Win".into()] - 0.9).abs() < 1e-12);
        assert!((row.probs[&"OSX".into()] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let store = store_from(&[
            ("a", "Win", 7),
            ("a", "OSX", 2),
            ("b", "OSX", 5),
            ("b", "iOS", 3),
            ("c", "Win", 1),
        ]);
        for mode in [
            PosteriorMode::PriorRenormalized,
            PosteriorMode::default(),
            PosteriorMode::Empirical { alpha: 0.5 },
        ] {
            let table = posterior(&store, mode).unwrap();
            let mut p_f_sum = 0.0;
            for row in table.rows.values() {
                let sum: f64 = row.probs.values().sum();
                assert!((sum - 1.0).abs() < 1e-9, "{mode:?}");
                p_f_sum += row.p_f;
            }
            assert!((p_f_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_of_simple_distributions() {
        let half = PriorDistribution {
            probs: [("A".into(), 0.5), ("B".into(), 0.5)].into_iter().collect(),
        };
        assert!((entropy(&half) - 1.0).abs() < 1e-12);
        let point = PriorDistribution {
            probs: [("A".into(), 1.0)].into_iter().collect(),
        };
        assert_eq!(entropy(&point), 0.0);
    }

    #[test]
    fn conditional_entropy_edge_cases() {
        // Point-mass rows have zero conditional entropy.
        let store = store_from(&[("a", "Win", 3), ("b", "OSX", 2)]);
        let table = posterior(&store, PosteriorMode::default()).unwrap();
        assert!(conditional_entropy(&table).abs() < 1e-12);

        // A single fingerprint whose row equals the prior gives H(C).
        let store = store_from(&[("a", "Win", 3), ("a", "OSX", 1)]);
        let table = posterior(&store, PosteriorMode::default()).unwrap();
        let prior = estimate_prior(&store).unwrap();
        assert!((conditional_entropy(&table) - entropy(&prior)).abs() < 1e-12);
    }

    #[test]
    fn point_mass_fingerprints_over_uniform_prior() {
        let store = store_from(&[("a", "A", 5), ("b", "B", 5), ("c", "C", 5), ("d", "D", 5)]);
        let report = information_gain(&store).unwrap();
        assert!((report.gain - 2.0).abs() < 1e-12);
        for entry in &report.per_fingerprint {
            assert!((entry.d_kl - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_fingerprints_gain_nothing() {
        // Both fingerprints occur with each label in the prior's proportions.
        let store = store_from(&[
            ("a", "Win", 6),
            ("a", "OSX", 2),
            ("b", "Win", 3),
            ("b", "OSX", 1),
        ]);
        let report = information_gain(&store).unwrap();
        assert!(report.gain.abs() < 1e-9);
    }

    #[test]
    fn gain_routes_agree_and_normalized_entries_sum() {
        let store = store_from(&[
            ("a", "Win", 11),
            ("a", "OSX", 2),
            ("b", "OSX", 7),
            ("b", "iOS", 3),
            ("c", "Win", 5),
            ("d", "iOS", 1),
        ]);
        let report = information_gain(&store).unwrap();
        let kl_route: f64 = report.per_fingerprint.iter().map(|e| e.normalized).sum();
        assert!((report.gain - kl_route).abs() < 1e-9);
        assert!(report.gain >= -1e-9);
        assert!(report.gain <= entropy(&estimate_prior(&store).unwrap()) + 1e-9);
    }

    #[test]
    fn rare_specific_fingerprint_has_high_kl_low_normalized_gain() {
        // One rare fingerprint pinned to a rare class: large KL, tiny
        // normalized gain relative to the frequent separators.
        let mut store = store_from(&[("common-win", "Win", 500), ("common-osx", "OSX", 300)]);
        store.observe(&http("rare-ios"), &"iOS".into(), 1);
        let report = information_gain(&store).unwrap();
        let rare = report
            .per_fingerprint
            .iter()
            .find(|e| e.fingerprint.contains("rare-ios"))
            .unwrap();
        let common = report
            .per_fingerprint
            .iter()
            .find(|e| e.fingerprint.contains("common-win"))
            .unwrap();
        assert!(rare.d_kl > common.d_kl);
        assert!(rare.normalized < common.normalized);

        let top = top_fingerprints_by_gain(&store, 2).unwrap();
        assert!(!top.iter().any(|e| e.fingerprint.contains("rare-ios")));
        let full = top_fingerprints_by_gain(&store, 100).unwrap();
        assert_eq!(full.len(), 3);
    }

    #[test]
    fn doubling_counts_changes_nothing() {
        let base = store_from(&[("a", "Win", 3), ("a", "OSX", 1), ("b", "OSX", 4)]);
        let mut doubled = base.clone();
        doubled.merge(&base);
        let r1 = information_gain(&base).unwrap();
        let r2 = information_gain(&doubled).unwrap();
        assert!((r1.gain - r2.gain).abs() < 1e-12);
        assert!((r1.h_prior - r2.h_prior).abs() < 1e-12);
        assert!((r1.h_posterior - r2.h_posterior).abs() < 1e-12);
    }
}
