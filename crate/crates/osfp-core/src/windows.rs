//! Per-host tumbling windows, binary feature dictionaries, and label
//! taxonomies for the multi-session pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::WindowError;
use crate::fingerprint::Protocol;
use crate::fnv1a64;
use crate::session::{CompactSession, Corpus};
use crate::store::CategoryLabel;

/// All distinct fingerprints one host emitted inside one tumbling window.
/// `start` is an integer multiple of the duration (epoch-aligned).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostWindow {
    pub host: u32,
    pub start: i64,
    pub duration_minutes: u32,
    /// Fingerprint ids per protocol, in [`Protocol::ALL`] order.
    pub fps: [BTreeSet<u32>; 3],
    pub label: Option<CategoryLabel>,
}

impl HostWindow {
    pub fn fingerprint_count(&self) -> usize {
        self.fps.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprint_count() == 0
    }
}

/// Group sessions into epoch-aligned tumbling windows per host. A window
/// exists only where at least one fingerprint landed; fingerprint sets are
/// deduplicated. Output is ordered by (host, start).
pub fn build_windows(
    corpus: &Corpus,
    sessions: &[&CompactSession],
    duration_minutes: u32,
) -> Vec<HostWindow> {
    assert!(
        (1..=1440).contains(&duration_minutes),
        "window duration must be within one day"
    );
    let duration_secs = duration_minutes as i64 * 60;
    let mut map: BTreeMap<(u32, i64), HostWindow> = BTreeMap::new();
    for session in sessions {
        if session.fps.iter().all(Option::is_none) {
            continue;
        }
        let start = (session.ts / duration_secs as f64).floor() as i64 * duration_secs;
        let window = map
            .entry((session.host, start))
            .or_insert_with(|| HostWindow {
                host: session.host,
                start,
                duration_minutes,
                fps: Default::default(),
                label: session.label.map(|id| corpus.label(id).clone()),
            });
        for (slot, fp) in session.fps.iter().enumerate() {
            if let Some(fp) = fp {
                window.fps[slot].insert(*fp);
            }
        }
    }
    map.into_values().collect()
}

/// Remove windows whose label has fewer than `min_windows` windows in the
/// given (training) list. Returns the kept windows and the removed labels.
pub fn filter_rare_classes(
    windows: Vec<HostWindow>,
    min_windows: u64,
) -> (Vec<HostWindow>, BTreeSet<CategoryLabel>) {
    let mut counts: BTreeMap<&CategoryLabel, u64> = BTreeMap::new();
    for w in &windows {
        if let Some(label) = &w.label {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    let removed: BTreeSet<CategoryLabel> = counts
        .iter()
        .filter(|(_, &n)| n < min_windows)
        .map(|(l, _)| (*l).clone())
        .collect();
    let kept = windows
        .into_iter()
        .filter(|w| match &w.label {
            Some(label) => !removed.contains(label),
            None => true,
        })
        .collect();
    (kept, removed)
}

/// How dictionary occurrences are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryUnit {
    /// A fingerprint present in a window counts once.
    #[default]
    Windows,
    /// Every flow carrying the fingerprint counts.
    Flows,
}

/// The ordered set of frequent training fingerprints that defines the
/// binary feature-vector layout.
#[derive(Debug, Clone)]
pub struct FeatureDictionary {
    pub min_count: u64,
    /// Fingerprint ids per protocol, ordered by descending occurrence count
    /// then canonical string.
    pub entries: [Vec<u32>; 3],
    index: [HashMap<u32, u32>; 3],
}

impl FeatureDictionary {
    pub fn from_windows(
        corpus: &Corpus,
        windows: &[HostWindow],
        min_count: u64,
    ) -> Result<FeatureDictionary, WindowError> {
        if windows.is_empty() {
            return Err(WindowError::EmptyTraining);
        }
        let mut counts: [HashMap<u32, u64>; 3] = Default::default();
        for w in windows {
            for (slot_counts, fps) in counts.iter_mut().zip(&w.fps) {
                for &fp in fps {
                    *slot_counts.entry(fp).or_insert(0) += 1;
                }
            }
        }
        Ok(Self::from_counts(corpus, counts, min_count))
    }

    pub fn from_sessions(
        corpus: &Corpus,
        sessions: &[&CompactSession],
        min_count: u64,
    ) -> Result<FeatureDictionary, WindowError> {
        if sessions.is_empty() {
            return Err(WindowError::EmptyTraining);
        }
        let mut counts: [HashMap<u32, u64>; 3] = Default::default();
        for s in sessions {
            for (slot, fp) in s.fps.iter().enumerate() {
                if let Some(fp) = fp {
                    *counts[slot].entry(*fp).or_insert(0) += 1;
                }
            }
        }
        Ok(Self::from_counts(corpus, counts, min_count))
    }

    fn from_counts(
        corpus: &Corpus,
        counts: [HashMap<u32, u64>; 3],
        min_count: u64,
    ) -> FeatureDictionary {
        let mut entries: [Vec<u32>; 3] = Default::default();
        let mut index: [HashMap<u32, u32>; 3] = Default::default();
        for (slot, slot_counts) in counts.into_iter().enumerate() {
            let mut kept: Vec<(u32, u64)> = slot_counts
                .into_iter()
                .filter(|&(_, n)| n >= min_count)
                .collect();
            kept.sort_by(|&(fa, na), &(fb, nb)| {
                nb.cmp(&na)
                    .then_with(|| corpus.fp_key(fa).cmp(corpus.fp_key(fb)))
            });
            entries[slot] = kept.into_iter().map(|(fp, _)| fp).collect();
            index[slot] = entries[slot]
                .iter()
                .enumerate()
                .map(|(i, &fp)| (fp, i as u32))
                .collect();
        }
        FeatureDictionary {
            min_count,
            entries,
            index,
        }
    }

    pub fn segment_len(&self, protocol: Protocol) -> usize {
        self.entries[protocol_slot(protocol)].len()
    }

    /// Total vector length for a protocol subset.
    pub fn vector_len(&self, protocols: &[Protocol]) -> usize {
        protocols.iter().map(|&p| self.segment_len(p)).sum()
    }

    /// Stable hash of the dictionary layout restricted to a protocol
    /// subset; persisted models validate against it.
    pub fn layout_hash(&self, corpus: &Corpus, protocols: &[Protocol]) -> u64 {
        let mut material = Vec::new();
        for &proto in protocols {
            material.extend_from_slice(proto.tag().as_bytes());
            material.push(0);
            for &fp in &self.entries[protocol_slot(proto)] {
                material.extend_from_slice(corpus.fp_key(fp).as_bytes());
                material.push(0);
            }
        }
        fnv1a64(&material)
    }
}

fn protocol_slot(protocol: Protocol) -> usize {
    match protocol {
        Protocol::Tcp => 0,
        Protocol::Tls => 1,
        Protocol::Http => 2,
    }
}

/// Fixed-length binary feature vector, bit-packed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub len: usize,
    pub words: Vec<u64>,
}

impl FeatureVector {
    pub fn zeros(len: usize) -> FeatureVector {
        FeatureVector {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.len);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        debug_assert!(bit < self.len);
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Bit i is set iff dictionary entry i is in the window's fingerprint set.
/// Segments are concatenated in the order given by `protocols`.
pub fn vectorize(
    window: &HostWindow,
    dict: &FeatureDictionary,
    protocols: &[Protocol],
) -> FeatureVector {
    let mut vector = FeatureVector::zeros(dict.vector_len(protocols));
    let mut offset = 0;
    for &proto in protocols {
        let slot = protocol_slot(proto);
        for fp in &window.fps[slot] {
            if let Some(&i) = dict.index[slot].get(fp) {
                vector.set(offset + i as usize);
            }
        }
        offset += dict.entries[slot].len();
    }
    vector
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaxonomyName {
    /// Labels kept as-is.
    Original,
    /// Major-version groups (Win 10, Win 7/8, OS X 10.x, iOS 10).
    General,
    /// Good vs vulnerable split per family.
    Vulnerable,
}

/// A total mapping from corpus labels to group labels. Labels in
/// `excluded` drop their windows from the experiment.
#[derive(Debug, Clone)]
pub struct LabelTaxonomy {
    pub name: TaxonomyName,
    groups: BTreeMap<CategoryLabel, CategoryLabel>,
    excluded: BTreeSet<CategoryLabel>,
}

/// Up-to-date versions that count as "good" under the vulnerable taxonomy.
const GOOD_WIN: [&str; 1] = ["Win 10.0.1439"];
const GOOD_OSX: [&str; 2] = ["OSX 10.12.5", "OSX 10.12.4"];

impl LabelTaxonomy {
    pub fn build(
        name: TaxonomyName,
        labels: &[CategoryLabel],
    ) -> Result<LabelTaxonomy, WindowError> {
        let mut groups = BTreeMap::new();
        let mut excluded = BTreeSet::new();
        for label in labels {
            match name {
                TaxonomyName::Original => {
                    groups.insert(label.clone(), label.clone());
                }
                TaxonomyName::General => {
                    groups.insert(label.clone(), general_group(label)?);
                }
                TaxonomyName::Vulnerable => match vulnerable_group(label)? {
                    Some(group) => {
                        groups.insert(label.clone(), group);
                    }
                    None => {
                        excluded.insert(label.clone());
                    }
                },
            }
        }
        Ok(LabelTaxonomy {
            name,
            groups,
            excluded,
        })
    }

    /// Group for a label; `None` means its windows are excluded.
    pub fn map(&self, label: &CategoryLabel) -> Result<Option<&CategoryLabel>, WindowError> {
        if self.excluded.contains(label) {
            return Ok(None);
        }
        self.groups
            .get(label)
            .map(Some)
            .ok_or_else(|| WindowError::UnmappedLabel(label.as_str().to_string()))
    }

    pub fn group_labels(&self) -> BTreeSet<&CategoryLabel> {
        self.groups.values().collect()
    }
}

fn general_group(label: &CategoryLabel) -> Result<CategoryLabel, WindowError> {
    let name = label.as_str();
    let group = if let Some(rest) = name.strip_prefix("Win ") {
        if rest.starts_with("10.") {
            "Win 10"
        } else if rest.starts_with("6.") {
            "Win 7/8"
        } else {
            return Err(WindowError::UnmappedLabel(name.to_string()));
        }
    } else if let Some(rest) = name
        .strip_prefix("OSX ")
        .or_else(|| name.strip_prefix("Mac OS X "))
    {
        match rest.rsplit_once('.') {
            Some((major, _)) if major.contains('.') => {
                return Ok(CategoryLabel(format!("OS X {major}")));
            }
            _ => return Err(WindowError::UnmappedLabel(name.to_string())),
        }
    } else if let Some(rest) = name.strip_prefix("iOS ") {
        let major = rest.split('.').next().unwrap_or("");
        if major.is_empty() {
            return Err(WindowError::UnmappedLabel(name.to_string()));
        }
        return Ok(CategoryLabel(format!("iOS {major}")));
    } else {
        return Err(WindowError::UnmappedLabel(name.to_string()));
    };
    Ok(CategoryLabel(group.to_string()))
}

/// `None` excludes the label (families outside the good/vulnerable split).
fn vulnerable_group(label: &CategoryLabel) -> Result<Option<CategoryLabel>, WindowError> {
    let name = label.as_str();
    // "Mac OS X x.y.z" and "OSX x.y.z" are the same version naming.
    let normalized = match name.strip_prefix("Mac OS X ") {
        Some(rest) => format!("OSX {rest}"),
        None => name.to_string(),
    };
    let normalized = normalized.as_str();
    if GOOD_WIN.contains(&normalized) {
        return Ok(Some(CategoryLabel("Win".into())));
    }
    if GOOD_OSX.contains(&normalized) {
        return Ok(Some(CategoryLabel("OS X".into())));
    }
    if normalized.starts_with("Win ") {
        return Ok(Some(CategoryLabel("Vuln Win".into())));
    }
    if normalized.starts_with("OSX ") {
        return Ok(Some(CategoryLabel("Vuln OS X".into())));
    }
    if normalized.starts_with("iOS ") {
        return Ok(None);
    }
    Err(WindowError::UnmappedLabel(name.to_string()))
}

/// Replace window labels with their taxonomy groups, dropping excluded
/// labels' windows. Everything else is unchanged.
pub fn apply_taxonomy(
    windows: Vec<HostWindow>,
    tax: &LabelTaxonomy,
) -> Result<Vec<HostWindow>, WindowError> {
    let mut out = Vec::with_capacity(windows.len());
    for mut w in windows {
        match &w.label {
            None => out.push(w),
            Some(label) => {
                if let Some(group) = tax.map(label)? {
                    w.label = Some(group.clone());
                    out.push(w);
                }
            }
        }
    }
    Ok(out)
}
