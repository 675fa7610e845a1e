//! End-to-end experiment pipeline: time split, windowing, rare-class
//! filtering, dictionary construction, grid-searched forest fitting, and
//! evaluation, plus the window-size sweep.
//!
//! Everything downstream of the corpus is deterministic given the config
//! seed; reports serialize byte-identically across runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;
use crate::fingerprint::Protocol;
use crate::forest::{
    fit_forest, grid_search_cv, BitMatrix, CvRow, ForestParams, HyperGrid, TreeParams,
};
use crate::mix_seed;
use crate::session::{CompactSession, Corpus};
use crate::single_session::{ConfusionMatrix, Fallback, SingleSessionModel};
use crate::store::{CategoryLabel, CountStore};
use crate::windows::{
    apply_taxonomy, build_windows, filter_rare_classes, vectorize, DictionaryUnit,
    FeatureDictionary, HostWindow, LabelTaxonomy, TaxonomyName,
};

/// Number of features examined per split, resolved against the vector
/// length `d` at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSpec {
    /// ceil(sqrt(d))
    Sqrt,
    /// ceil(d/4)
    #[serde(rename = "d/4")]
    Quarter,
    /// ceil(d/2)
    #[serde(rename = "d/2")]
    Half,
    #[serde(untagged)]
    Fixed(usize),
}

impl FeatureSpec {
    pub fn resolve(&self, d: usize) -> usize {
        let v = match self {
            FeatureSpec::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeatureSpec::Quarter => d.div_ceil(4),
            FeatureSpec::Half => d.div_ceil(2),
            FeatureSpec::Fixed(k) => *k,
        };
        v.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_depth_grid")]
    pub max_depth_grid: Vec<Option<u32>>,
    #[serde(default = "default_features_grid")]
    pub features_grid: Vec<FeatureSpec>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: default_n_trees(),
            max_depth_grid: default_depth_grid(),
            features_grid: default_features_grid(),
            folds: default_folds(),
        }
    }
}

fn default_n_trees() -> usize {
    75
}

fn default_depth_grid() -> Vec<Option<u32>> {
    vec![Some(8), Some(16), Some(32), None]
}

fn default_features_grid() -> Vec<FeatureSpec> {
    vec![FeatureSpec::Sqrt, FeatureSpec::Quarter, FeatureSpec::Half]
}

fn default_folds() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiRunSpec {
    pub protocols: Vec<Protocol>,
    #[serde(default = "default_taxonomy")]
    pub taxonomy: TaxonomyName,
}

fn default_taxonomy() -> TaxonomyName {
    TaxonomyName::Original
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub window_minutes: Vec<u32>,
    pub protocols: Vec<Vec<Protocol>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus path; resolved by the caller that performs file IO.
    #[serde(default)]
    pub corpus: String,
    pub seed: u64,
    #[serde(default = "default_split_days")]
    pub split_days: f64,
    #[serde(default = "default_window_minutes")]
    pub window_minutes: u32,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(default)]
    pub dictionary_unit: DictionaryUnit,
    #[serde(default = "default_min_windows")]
    pub min_windows: u64,
    /// Protocols to evaluate with the per-flow argmax classifier.
    #[serde(default = "default_single_session")]
    pub single_session: Vec<Protocol>,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default = "default_multi_runs")]
    pub multi_runs: Vec<MultiRunSpec>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_split_days() -> f64 {
    3.0
}

fn default_window_minutes() -> u32 {
    60
}

fn default_min_count() -> u64 {
    100
}

fn default_min_windows() -> u64 {
    10
}

fn default_single_session() -> Vec<Protocol> {
    Protocol::ALL.to_vec()
}

fn default_multi_runs() -> Vec<MultiRunSpec> {
    let mut runs: Vec<MultiRunSpec> = Protocol::ALL
        .iter()
        .map(|&p| MultiRunSpec {
            protocols: vec![p],
            taxonomy: TaxonomyName::Original,
        })
        .collect();
    runs.push(MultiRunSpec {
        protocols: Protocol::ALL.to_vec(),
        taxonomy: TaxonomyName::Original,
    });
    runs
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::BadConfig(msg));
        if !self.split_days.is_finite() || self.split_days <= 0.0 {
            return bad("split_days: must be positive".into());
        }
        if !(1..=1440).contains(&self.window_minutes) {
            return bad("window_minutes: must be in [1, 1440]".into());
        }
        if self.forest.n_trees == 0 {
            return bad("forest.n_trees: must be positive".into());
        }
        if self.forest.max_depth_grid.is_empty() || self.forest.features_grid.is_empty() {
            return bad("forest: empty hyperparameter grid".into());
        }
        if self.forest.folds < 2 {
            return bad("forest.folds: must be at least 2".into());
        }
        for (i, run) in self.multi_runs.iter().enumerate() {
            if run.protocols.is_empty() {
                return bad(format!("multi_runs[{i}].protocols: must be non-empty"));
            }
        }
        if let Some(sweep) = &self.sweep {
            for m in &sweep.window_minutes {
                if !(1..=1440).contains(m) {
                    return bad("sweep.window_minutes: must be in [1, 1440]".into());
                }
            }
            if sweep.protocols.iter().any(|p| p.is_empty()) {
                return bad("sweep.protocols: subsets must be non-empty".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusSummary {
    pub sessions: usize,
    pub hosts: usize,
    pub labels: Vec<CategoryLabel>,
    pub distinct_fingerprints: usize,
    pub start_ts: f64,
    pub end_ts: f64,
    pub boundary_ts: f64,
    pub train_sessions: usize,
    pub test_sessions: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleResult {
    pub protocol: Protocol,
    pub evaluated: u64,
    pub abstained: u64,
    pub accuracy: f64,
    pub per_class_recall: BTreeMap<CategoryLabel, f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiResult {
    pub protocols: Vec<Protocol>,
    pub taxonomy: TaxonomyName,
    pub window_minutes: u32,
    pub train_windows: usize,
    pub test_windows: usize,
    pub removed_labels: BTreeSet<CategoryLabel>,
    pub dictionary_sizes: BTreeMap<Protocol, usize>,
    pub vector_length: usize,
    pub chosen_max_depth: Option<u32>,
    pub chosen_features_per_split: usize,
    pub cv_table: Vec<CvRow>,
    pub accuracy: f64,
    pub per_class_recall: BTreeMap<CategoryLabel, f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub window_minutes: u32,
    pub protocols: Vec<Protocol>,
    pub accuracy: f64,
    pub train_windows: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub corpus: CorpusSummary,
    pub single_session: Vec<SingleResult>,
    pub multi_session: Vec<MultiResult>,
    pub sweep: Vec<SweepRow>,
}

/// Train/test boundary: `split_days` after the corpus' first midnight.
pub fn split_boundary(corpus: &Corpus, split_days: f64) -> f64 {
    let (start, _) = corpus.time_range().unwrap_or((0.0, 0.0));
    (start / 86_400.0).floor() * 86_400.0 + split_days * 86_400.0
}

pub fn run_experiment(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    if corpus.sessions.is_empty() || !corpus.is_fully_labeled() {
        return Err(ExperimentError::UnlabeledData);
    }
    let boundary = split_boundary(corpus, cfg.split_days);
    let (train, test) = corpus.split_at(boundary);
    let (start_ts, end_ts) = corpus.time_range().expect("non-empty corpus");
    let summary = CorpusSummary {
        sessions: corpus.sessions.len(),
        hosts: corpus.host_count(),
        labels: {
            let mut labels = corpus.labels().to_vec();
            labels.sort();
            labels
        },
        distinct_fingerprints: corpus.distinct_fingerprints(),
        start_ts,
        end_ts,
        boundary_ts: boundary,
        train_sessions: train.len(),
        test_sessions: test.len(),
    };

    let mut single_session = Vec::new();
    for &protocol in &cfg.single_session {
        single_session.push(run_single(corpus, &train, &test, protocol, cfg.fallback)?);
    }

    let mut windows_cache: BTreeMap<u32, (Vec<HostWindow>, Vec<HostWindow>)> = BTreeMap::new();
    let mut windows_for = |minutes: u32| -> (Vec<HostWindow>, Vec<HostWindow>) {
        windows_cache
            .entry(minutes)
            .or_insert_with(|| {
                (
                    build_windows(corpus, &train, minutes),
                    build_windows(corpus, &test, minutes),
                )
            })
            .clone()
    };

    let mut multi_session = Vec::new();
    for (run_idx, run) in cfg.multi_runs.iter().enumerate() {
        let (train_w, test_w) = windows_for(cfg.window_minutes);
        let result = run_multi(
            corpus,
            &train,
            train_w,
            test_w,
            run,
            cfg,
            cfg.window_minutes,
            mix_seed(&[cfg.seed, 0x6d75, run_idx as u64]),
        )?;
        multi_session.push(result);
    }

    let mut sweep = Vec::new();
    if let Some(sweep_cfg) = &cfg.sweep {
        for &minutes in &sweep_cfg.window_minutes {
            for protocols in &sweep_cfg.protocols {
                // Reuse the matching 60-minute run's hyperparameters; the
                // sweep varies only the window size.
                let donor = multi_session
                    .iter()
                    .find(|m| m.taxonomy == TaxonomyName::Original && &m.protocols == protocols)
                    .ok_or_else(|| {
                        ExperimentError::BadConfig(format!(
                            "sweep subset {protocols:?} has no original-taxonomy run to take \
                             hyperparameters from"
                        ))
                    })?;
                let params = TreeParams {
                    max_depth: donor.chosen_max_depth,
                    features_per_split: donor.chosen_features_per_split,
                };
                let (train_w, test_w) = windows_for(minutes);
                let run = MultiRunSpec {
                    protocols: protocols.clone(),
                    taxonomy: TaxonomyName::Original,
                };
                let result = run_multi_fixed(
                    corpus,
                    &train,
                    train_w,
                    test_w,
                    &run,
                    cfg,
                    minutes,
                    params,
                    mix_seed(&[cfg.seed, 0x7377, minutes as u64, fnv_protocols(protocols)]),
                )?;
                sweep.push(SweepRow {
                    window_minutes: minutes,
                    protocols: protocols.clone(),
                    accuracy: result.accuracy,
                    train_windows: result.train_windows,
                    test_windows: result.test_windows,
                });
            }
        }
    }

    Ok(ExperimentReport {
        corpus: summary,
        single_session,
        multi_session,
        sweep,
    })
}

fn fnv_protocols(protocols: &[Protocol]) -> u64 {
    crate::fnv1a64(
        protocols
            .iter()
            .flat_map(|p| p.tag().bytes())
            .collect::<Vec<u8>>()
            .as_slice(),
    )
}

fn run_single(
    corpus: &Corpus,
    train: &[&CompactSession],
    test: &[&CompactSession],
    protocol: Protocol,
    fallback: Fallback,
) -> Result<SingleResult, ExperimentError> {
    let slot = Protocol::ALL.iter().position(|&p| p == protocol).unwrap();
    let mut store = CountStore::new();
    for s in train {
        if let (Some(fp), Some(label)) = (s.fps[slot], s.label) {
            store.observe_key(corpus.fp_key(fp), corpus.label(label), 1);
        }
    }
    let model = SingleSessionModel::from_store(protocol, store, fallback)?;
    let pairs = test.iter().filter_map(|s| {
        let fp = s.fps[slot]?;
        let label = s.label?;
        Some((corpus.fp_key(fp).to_string(), corpus.label(label).clone()))
    });
    let eval = model.evaluate_keys(pairs);
    Ok(SingleResult {
        protocol,
        evaluated: eval.confusion.total(),
        abstained: eval.abstained,
        accuracy: eval.confusion.accuracy(),
        per_class_recall: eval.confusion.per_class_recall(),
        confusion: eval.confusion,
    })
}

/// Shared head of the multi-session pipeline: rare-class filter on the
/// training split, taxonomy application, dictionary, and vectors.
struct PreparedRun {
    train_w: Vec<HostWindow>,
    test_w: Vec<HostWindow>,
    removed: BTreeSet<CategoryLabel>,
    dict: FeatureDictionary,
    labels: Vec<CategoryLabel>,
    x_train: BitMatrix,
    y_train: Vec<u32>,
    d: usize,
}

fn prepare_run(
    corpus: &Corpus,
    train_sessions: &[&CompactSession],
    train_w: Vec<HostWindow>,
    test_w: Vec<HostWindow>,
    run: &MultiRunSpec,
    cfg: &ExperimentConfig,
) -> Result<PreparedRun, ExperimentError> {
    // Rare classes are filtered on original labels, before grouping.
    let (train_w, removed) = filter_rare_classes(train_w, cfg.min_windows);
    let kept: BTreeSet<CategoryLabel> = train_w.iter().filter_map(|w| w.label.clone()).collect();
    let test_w: Vec<HostWindow> = test_w
        .into_iter()
        .filter(|w| w.label.as_ref().is_some_and(|l| kept.contains(l)))
        .collect();

    let tax = LabelTaxonomy::build(run.taxonomy, corpus.labels())?;
    let train_w = apply_taxonomy(train_w, &tax)?;
    let test_w = apply_taxonomy(test_w, &tax)?;
    if train_w.is_empty() {
        return Err(ExperimentError::InsufficientClasses);
    }

    // The dictionary sees exactly the training population that survived
    // filtering and taxonomy exclusion, in either counting unit.
    let dict = match cfg.dictionary_unit {
        DictionaryUnit::Windows => FeatureDictionary::from_windows(corpus, &train_w, cfg.min_count),
        DictionaryUnit::Flows => {
            let surviving: Vec<&CompactSession> = train_sessions
                .iter()
                .copied()
                .filter(|s| {
                    s.label.is_some_and(|l| {
                        let label = corpus.label(l);
                        kept.contains(label) && matches!(tax.map(label), Ok(Some(_)))
                    })
                })
                .collect();
            FeatureDictionary::from_sessions(corpus, &surviving, cfg.min_count)
        }
    }?;

    let mut labels: Vec<CategoryLabel> = train_w
        .iter()
        .filter_map(|w| w.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    labels.sort();
    if labels.len() < 2 {
        return Err(ExperimentError::InsufficientClasses);
    }

    let d = dict.vector_len(&run.protocols);
    let mut x_train = BitMatrix::new(d);
    let mut y_train = Vec::with_capacity(train_w.len());
    for w in &train_w {
        x_train.push_row(&vectorize(w, &dict, &run.protocols));
        let label = w.label.as_ref().expect("labeled training window");
        y_train.push(labels.binary_search(label).unwrap() as u32);
    }

    Ok(PreparedRun {
        train_w,
        test_w,
        removed,
        dict,
        labels,
        x_train,
        y_train,
        d,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_multi(
    corpus: &Corpus,
    train_sessions: &[&CompactSession],
    train_w: Vec<HostWindow>,
    test_w: Vec<HostWindow>,
    run: &MultiRunSpec,
    cfg: &ExperimentConfig,
    window_minutes: u32,
    seed: u64,
) -> Result<MultiResult, ExperimentError> {
    let prep = prepare_run(corpus, train_sessions, train_w, test_w, run, cfg)?;
    let grid = HyperGrid {
        max_depths: cfg.forest.max_depth_grid.clone(),
        features_per_split: {
            let mut ks: Vec<usize> = cfg
                .forest
                .features_grid
                .iter()
                .map(|s| s.resolve(prep.d))
                .collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        },
        folds: cfg.forest.folds,
    };
    let (chosen, cv_table) = grid_search_cv(
        &prep.x_train,
        &prep.y_train,
        &prep.labels,
        cfg.forest.n_trees,
        &grid,
        mix_seed(&[seed, 0x6376]),
    )?;
    finish_run(
        corpus,
        prep,
        run,
        cfg,
        window_minutes,
        chosen,
        cv_table,
        seed,
    )
}

/// Multi-session run with fixed tree parameters (no grid search).
#[allow(clippy::too_many_arguments)]
fn run_multi_fixed(
    corpus: &Corpus,
    train_sessions: &[&CompactSession],
    train_w: Vec<HostWindow>,
    test_w: Vec<HostWindow>,
    run: &MultiRunSpec,
    cfg: &ExperimentConfig,
    window_minutes: u32,
    params: TreeParams,
    seed: u64,
) -> Result<MultiResult, ExperimentError> {
    let prep = prepare_run(corpus, train_sessions, train_w, test_w, run, cfg)?;
    finish_run(
        corpus,
        prep,
        run,
        cfg,
        window_minutes,
        params,
        Vec::new(),
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    corpus: &Corpus,
    prep: PreparedRun,
    run: &MultiRunSpec,
    cfg: &ExperimentConfig,
    window_minutes: u32,
    chosen: TreeParams,
    cv_table: Vec<CvRow>,
    seed: u64,
) -> Result<MultiResult, ExperimentError> {
    let params = ForestParams {
        n_trees: cfg.forest.n_trees,
        tree: chosen,
        bootstrap: true,
    };
    let model = fit_forest(
        &prep.x_train,
        &prep.y_train,
        &prep.labels,
        &params,
        mix_seed(&[seed, 0x666f]),
        prep.dict.layout_hash(corpus, &run.protocols),
    )?;

    let mut all_labels: Vec<CategoryLabel> = prep.labels.clone();
    all_labels.extend(prep.test_w.iter().filter_map(|w| w.label.clone()));
    all_labels.sort();
    all_labels.dedup();
    let mut confusion = ConfusionMatrix::new(all_labels);
    for w in &prep.test_w {
        let truth = w.label.as_ref().expect("labeled test window");
        let pred = model.predict(&vectorize(w, &prep.dict, &run.protocols))?;
        confusion.record(truth, pred);
    }

    let dictionary_sizes = Protocol::ALL
        .iter()
        .map(|&p| (p, prep.dict.segment_len(p)))
        .collect();
    Ok(MultiResult {
        protocols: run.protocols.clone(),
        taxonomy: run.taxonomy,
        window_minutes,
        train_windows: prep.train_w.len(),
        test_windows: prep.test_w.len(),
        removed_labels: prep.removed,
        dictionary_sizes,
        vector_length: prep.d,
        chosen_max_depth: chosen.max_depth,
        chosen_features_per_split: chosen.features_per_split,
        cv_table,
        accuracy: confusion.accuracy(),
        per_class_recall: confusion.per_class_recall(),
        confusion,
    })
}
