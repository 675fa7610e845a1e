//! Evasion simulation: rewrite a fraction of each test window's
//! fingerprints toward another OS's empirical fingerprint distribution and
//! measure how the clean-trained classifier degrades.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, ObfuscationError};
use crate::experiment::split_boundary;
use crate::fingerprint::Protocol;
use crate::forest::{fit_forest, grid_search_cv, BitMatrix, ForestParams, HyperGrid};
use crate::mix_seed;
use crate::session::{CompactSession, Corpus};
use crate::single_session::ConfusionMatrix;
use crate::store::CategoryLabel;
use crate::windows::{
    build_windows, filter_rare_classes, vectorize, FeatureDictionary, HostWindow,
};

/// Per-category rewrite target. Total over the corpus label set; no label
/// maps to itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObfuscationMapping {
    pub map: BTreeMap<CategoryLabel, CategoryLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Windows,
    MacIos,
}

fn family_of(label: &CategoryLabel) -> Result<Family, ObfuscationError> {
    let name = label.as_str();
    if name.starts_with("Win") {
        Ok(Family::Windows)
    } else if name.starts_with("OSX") || name.starts_with("Mac") || name.starts_with("iOS") {
        Ok(Family::MacIos)
    } else {
        Err(ObfuscationError::UnknownFamily(name.to_string()))
    }
}

/// Map every Windows-family label to the Mac label with the most hosts and
/// every Mac/iOS-family label to the Windows label with the most hosts.
pub fn build_cross_mapping(
    host_counts: &BTreeMap<CategoryLabel, u64>,
) -> Result<ObfuscationMapping, ObfuscationError> {
    let top = |pred: fn(&str) -> bool, family: &'static str| {
        host_counts
            .iter()
            .filter(|(l, _)| pred(l.as_str()))
            .max_by(|(la, na), (lb, nb)| na.cmp(nb).then_with(|| lb.cmp(la)))
            .map(|(l, _)| l.clone())
            .ok_or(ObfuscationError::MissingFamily(family))
    };
    let target_win = top(|l| l.starts_with("Win"), "Windows")?;
    let target_mac = top(|l| l.starts_with("OSX") || l.starts_with("Mac"), "Mac")?;

    let mut map = BTreeMap::new();
    for label in host_counts.keys() {
        let target = match family_of(label)? {
            Family::Windows => target_mac.clone(),
            Family::MacIos => target_win.clone(),
        };
        map.insert(label.clone(), target);
    }
    Ok(ObfuscationMapping { map })
}

/// Hosts per label, counted over the whole corpus.
pub fn host_counts(corpus: &Corpus) -> BTreeMap<CategoryLabel, u64> {
    let mut hosts_seen: BTreeMap<(u32, u32), ()> = BTreeMap::new();
    for s in &corpus.sessions {
        if let Some(label) = s.label {
            hosts_seen.entry((label, s.host)).or_insert(());
        }
    }
    let mut counts = BTreeMap::new();
    for (label, _) in hosts_seen.keys() {
        *counts.entry(corpus.label(*label).clone()).or_insert(0u64) += 1;
    }
    counts
}

/// Empirical per-(category, protocol) fingerprint distributions from the
/// training sessions, sampled with flow-count weights.
pub struct TargetFingerprintSampler {
    // label id -> per-protocol cumulative (fp id, cumulative weight).
    dists: BTreeMap<u32, [Vec<(u32, u64)>; 3]>,
}

impl TargetFingerprintSampler {
    pub fn from_sessions(sessions: &[&CompactSession]) -> Self {
        let mut counts: BTreeMap<u32, [BTreeMap<u32, u64>; 3]> = BTreeMap::new();
        for s in sessions {
            let Some(label) = s.label else { continue };
            let entry = counts.entry(label).or_default();
            for (slot, fp) in s.fps.iter().enumerate() {
                if let Some(fp) = fp {
                    *entry[slot].entry(*fp).or_insert(0) += 1;
                }
            }
        }
        let dists = counts
            .into_iter()
            .map(|(label, slots)| {
                let cumulative = slots.map(|m| {
                    let mut total = 0u64;
                    m.into_iter()
                        .map(|(fp, n)| {
                            total += n;
                            (fp, total)
                        })
                        .collect::<Vec<_>>()
                });
                (label, cumulative)
            })
            .collect();
        TargetFingerprintSampler { dists }
    }

    /// Draw a fingerprint id for (label, protocol slot); `None` when the
    /// category never exhibited the protocol.
    fn sample(&self, label: u32, slot: usize, rng: &mut ChaCha8Rng) -> Option<u32> {
        let dist = self.dists.get(&label)?[slot].as_slice();
        let total = dist.last()?.1;
        let pick = rng.gen_range(0..total);
        let i = dist.partition_point(|&(_, cum)| cum <= pick);
        Some(dist[i].0)
    }
}

#[derive(Debug, Clone)]
pub struct ObfuscationConfig {
    /// Fraction of in-scope fingerprints to rewrite, in [0, 1].
    pub fraction: f64,
    pub scope: Vec<Protocol>,
}

/// Rewrite ceil(fraction * k) of the window's k in-scope fingerprints,
/// chosen uniformly without replacement, each replaced by an independent
/// draw from the target category's distribution for the same protocol.
/// Returns the new window and the number of dropped fingerprints (target
/// had no support for that protocol).
pub fn obfuscate_window(
    window: &HostWindow,
    mapping: &ObfuscationMapping,
    label_ids: &BTreeMap<CategoryLabel, u32>,
    sampler: &TargetFingerprintSampler,
    cfg: &ObfuscationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(HostWindow, u64), ObfuscationError> {
    let label = window
        .label
        .as_ref()
        .ok_or_else(|| ObfuscationError::UnmappedLabel("<unlabeled>".into()))?;
    let target = mapping
        .map
        .get(label)
        .ok_or_else(|| ObfuscationError::UnmappedLabel(label.as_str().to_string()))?;
    let target_id = *label_ids
        .get(target)
        .ok_or_else(|| ObfuscationError::UnmappedLabel(target.as_str().to_string()))?;

    let scope_slots: Vec<usize> = cfg
        .scope
        .iter()
        .map(|&p| Protocol::ALL.iter().position(|&q| q == p).unwrap())
        .collect();
    let pool: Vec<(usize, u32)> = scope_slots
        .iter()
        .flat_map(|&slot| window.fps[slot].iter().map(move |&fp| (slot, fp)))
        .collect();
    let k = pool.len();
    let m = (cfg.fraction.clamp(0.0, 1.0) * k as f64).ceil() as usize;

    let mut out = window.clone();
    let mut dropped = 0;
    if m == 0 {
        return Ok((out, 0));
    }
    let mut chosen: Vec<usize> = sample(rng, k, m.min(k)).into_iter().collect();
    chosen.sort_unstable();
    for i in chosen {
        let (slot, fp) = pool[i];
        out.fps[slot].remove(&fp);
        match sampler.sample(target_id, slot, rng) {
            Some(new_fp) => {
                out.fps[slot].insert(new_fp);
            }
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvasionConfig {
    /// Corpus path; resolved by the caller that performs file IO.
    #[serde(default)]
    pub corpus: String,
    pub seed: u64,
    #[serde(default = "default_split_days")]
    pub split_days: f64,
    #[serde(default = "default_window_minutes")]
    pub window_minutes: u32,
    #[serde(default = "default_model_protocols")]
    pub model_protocols: Vec<Protocol>,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(default = "default_min_windows")]
    pub min_windows: u64,
    #[serde(default)]
    pub forest: crate::experiment::ForestConfig,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_scopes")]
    pub scopes: Vec<Vec<Protocol>>,
}

fn default_split_days() -> f64 {
    3.0
}

fn default_window_minutes() -> u32 {
    60
}

fn default_model_protocols() -> Vec<Protocol> {
    Protocol::ALL.to_vec()
}

fn default_min_count() -> u64 {
    100
}

fn default_min_windows() -> u64 {
    10
}

fn default_levels() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_scopes() -> Vec<Vec<Protocol>> {
    vec![
        Protocol::ALL.to_vec(),
        vec![Protocol::Tcp],
        vec![Protocol::Tls],
        vec![Protocol::Http],
    ]
}

impl EvasionConfig {
    pub fn from_json(text: &str) -> Result<EvasionConfig, ExperimentError> {
        let cfg: EvasionConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(ExperimentError::BadConfig(
                "levels: fractions must be in [0, 1]".into(),
            ));
        }
        if self.model_protocols.is_empty() {
            return Err(ExperimentError::BadConfig(
                "model_protocols: must be non-empty".into(),
            ));
        }
        if self.scopes.iter().any(|s| s.is_empty()) {
            return Err(ExperimentError::BadConfig(
                "scopes: subsets must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvasionRow {
    pub scope: Vec<Protocol>,
    pub level: f64,
    pub accuracy: f64,
    pub dropped_fingerprints: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvasionReport {
    pub baseline_accuracy: f64,
    pub test_windows: usize,
    pub chosen_max_depth: Option<u32>,
    pub chosen_features_per_split: usize,
    pub mapping: ObfuscationMapping,
    pub rows: Vec<EvasionRow>,
}

/// Train the clean multi-session model, then evaluate it against
/// obfuscated test windows for every (scope, level) pair.
pub fn run_evasion_sweep(
    corpus: &Corpus,
    cfg: &EvasionConfig,
) -> Result<EvasionReport, ExperimentError> {
    cfg.validate()?;
    if corpus.sessions.is_empty() || !corpus.is_fully_labeled() {
        return Err(ExperimentError::UnlabeledData);
    }
    let boundary = split_boundary(corpus, cfg.split_days);
    let (train, test) = corpus.split_at(boundary);

    let train_w = build_windows(corpus, &train, cfg.window_minutes);
    let test_w = build_windows(corpus, &test, cfg.window_minutes);
    let (train_w, _removed) = filter_rare_classes(train_w, cfg.min_windows);
    let kept: std::collections::BTreeSet<&CategoryLabel> =
        train_w.iter().filter_map(|w| w.label.as_ref()).collect();
    let test_w: Vec<HostWindow> = test_w
        .into_iter()
        .filter(|w| w.label.as_ref().is_some_and(|l| kept.contains(l)))
        .collect();

    let dict = FeatureDictionary::from_windows(corpus, &train_w, cfg.min_count)?;
    let mut labels: Vec<CategoryLabel> = kept.into_iter().cloned().collect();
    labels.sort();
    if labels.len() < 2 {
        return Err(ExperimentError::InsufficientClasses);
    }
    let d = dict.vector_len(&cfg.model_protocols);
    let mut x_train = BitMatrix::new(d);
    let mut y_train = Vec::with_capacity(train_w.len());
    for w in &train_w {
        x_train.push_row(&vectorize(w, &dict, &cfg.model_protocols));
        y_train.push(
            labels
                .binary_search(w.label.as_ref().expect("labeled window"))
                .unwrap() as u32,
        );
    }

    let grid = HyperGrid {
        max_depths: cfg.forest.max_depth_grid.clone(),
        features_per_split: {
            let mut ks: Vec<usize> = cfg
                .forest
                .features_grid
                .iter()
                .map(|s| s.resolve(d))
                .collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        },
        folds: cfg.forest.folds,
    };
    let (chosen, _table) = grid_search_cv(
        &x_train,
        &y_train,
        &labels,
        cfg.forest.n_trees,
        &grid,
        mix_seed(&[cfg.seed, 0x6376]),
    )?;
    let model = fit_forest(
        &x_train,
        &y_train,
        &labels,
        &ForestParams {
            n_trees: cfg.forest.n_trees,
            tree: chosen,
            bootstrap: true,
        },
        mix_seed(&[cfg.seed, 0x666f]),
        dict.layout_hash(corpus, &cfg.model_protocols),
    )?;

    let evaluate = |windows: &[HostWindow]| -> Result<f64, ExperimentError> {
        let mut confusion = ConfusionMatrix::new(labels.clone());
        for w in windows {
            let pred = model.predict(&vectorize(w, &dict, &cfg.model_protocols))?;
            confusion.record(w.label.as_ref().expect("labeled window"), pred);
        }
        Ok(confusion.accuracy())
    };
    let baseline_accuracy = evaluate(&test_w)?;

    let mapping = build_cross_mapping(&host_counts(corpus))?;
    let sampler = TargetFingerprintSampler::from_sessions(&train);
    let label_ids: BTreeMap<CategoryLabel, u32> = (0..corpus.labels().len() as u32)
        .map(|id| (corpus.label(id).clone(), id))
        .collect();

    let mut rows = Vec::new();
    for (scope_idx, scope) in cfg.scopes.iter().enumerate() {
        for &level in &cfg.levels {
            let obf = ObfuscationConfig {
                fraction: level,
                scope: scope.clone(),
            };
            let mut obfuscated = Vec::with_capacity(test_w.len());
            let mut dropped = 0;
            for (window_idx, w) in test_w.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    cfg.seed,
                    0x6f62,
                    scope_idx as u64,
                    level.to_bits(),
                    window_idx as u64,
                ]));
                let (ow, d) = obfuscate_window(w, &mapping, &label_ids, &sampler, &obf, &mut rng)?;
                obfuscated.push(ow);
                dropped += d;
            }
            rows.push(EvasionRow {
                scope: scope.clone(),
                level,
                accuracy: evaluate(&obfuscated)?,
                dropped_fingerprints: dropped,
            });
        }
    }

    Ok(EvasionReport {
        baseline_accuracy,
        test_windows: test_w.len(),
        chosen_max_depth: chosen.max_depth,
        chosen_features_per_split: chosen.features_per_split,
        mapping,
        rows,
    })
}
