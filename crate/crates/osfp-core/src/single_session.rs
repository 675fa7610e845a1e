//! Per-flow maximum-likelihood classifier: train per-fingerprint posteriors
//! on labeled sessions and classify one fingerprint at a time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ClassifyError, StoreError};
use crate::fingerprint::{Fingerprint, Protocol};
use crate::session::SessionRecord;
use crate::store::{CategoryLabel, CountStore};

/// Policy for fingerprints never seen in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Return no decision; abstentions are excluded from accuracy.
    #[default]
    Abstain,
    /// Return the label with the most training flows.
    PriorArgmax,
}

/// Argmax-of-posterior classifier for one protocol. Ties break to the
/// lexicographically smallest label.
#[derive(Debug, Clone)]
pub struct SingleSessionModel {
    protocol: Protocol,
    store: CountStore,
    fallback: Fallback,
    majority: CategoryLabel,
}

impl SingleSessionModel {
    /// Build a model from a per-flow count store.
    pub fn from_store(
        protocol: Protocol,
        store: CountStore,
        fallback: Fallback,
    ) -> Result<SingleSessionModel, ClassifyError> {
        if store.is_empty() {
            return Err(ClassifyError::NoTrainingData(protocol));
        }
        let majority = argmax_counts(store.labels())
            .expect("non-empty store has a majority label")
            .clone();
        Ok(SingleSessionModel {
            protocol,
            store,
            fallback,
            majority,
        })
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn store(&self) -> &CountStore {
        &self.store
    }

    pub fn classify(&self, fp: &Fingerprint) -> Result<Option<CategoryLabel>, ClassifyError> {
        if fp.protocol() != self.protocol {
            return Err(ClassifyError::ProtocolMismatch {
                expected: self.protocol,
                got: fp.protocol(),
            });
        }
        Ok(self.classify_key(&fp.canonical()))
    }

    /// Classify by canonical key. Unseen keys follow the fallback policy.
    pub fn classify_key(&self, key: &str) -> Option<CategoryLabel> {
        match self.store.row(key) {
            Some(row) => argmax_counts(row.iter().map(|(l, &n)| (l, n))).cloned(),
            None => match self.fallback {
                Fallback::Abstain => None,
                Fallback::PriorArgmax => Some(self.majority.clone()),
            },
        }
    }

    /// Per-flow evaluation over labeled test sessions carrying this
    /// protocol's fingerprint.
    pub fn evaluate<'a>(
        &self,
        test: impl IntoIterator<Item = &'a SessionRecord>,
    ) -> SingleSessionEval {
        let pairs = test.into_iter().filter_map(|record| {
            let fp = record.fingerprint(self.protocol)?;
            let label = record.label.clone()?;
            Some((fp.canonical(), label))
        });
        self.evaluate_keys(pairs)
    }

    pub fn evaluate_keys(
        &self,
        test: impl IntoIterator<Item = (String, CategoryLabel)>,
    ) -> SingleSessionEval {
        let pairs: Vec<(String, CategoryLabel)> = test.into_iter().collect();
        let mut labels: Vec<CategoryLabel> = self
            .store
            .labels()
            .map(|(l, _)| l.clone())
            .chain(pairs.iter().map(|(_, l)| l.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        let mut confusion = ConfusionMatrix::new(labels);
        let mut abstained = 0;
        for (key, truth) in &pairs {
            match self.classify_key(key) {
                Some(pred) => confusion.record(truth, &pred),
                None => abstained += 1,
            }
        }
        SingleSessionEval {
            confusion,
            abstained,
        }
    }

    /// Persist as the count-store document plus a small header.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "protocol": self.protocol.tag(),
            "fallback": self.fallback,
            "tie_break": "lexicographic-smallest-label",
            "store": serde_json::from_str::<serde_json::Value>(&self.store.to_json())
                .expect("store json"),
        }))
        .expect("model json")
    }

    pub fn from_json(text: &str) -> Result<SingleSessionModel, StoreError> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| StoreError::BadDocument(e.to_string()))?;
        let protocol = doc["protocol"]
            .as_str()
            .and_then(Protocol::from_tag)
            .ok_or_else(|| StoreError::BadDocument("bad protocol tag".into()))?;
        let fallback: Fallback = serde_json::from_value(doc["fallback"].clone())
            .map_err(|e| StoreError::BadDocument(e.to_string()))?;
        let store = CountStore::from_json(&doc["store"].to_string())?;
        SingleSessionModel::from_store(protocol, store, fallback)
            .map_err(|e| StoreError::BadDocument(e.to_string()))
    }
}

/// Train on labeled sessions, counting (fingerprint, label) once per flow.
pub fn train_single<'a>(
    sessions: impl IntoIterator<Item = &'a SessionRecord>,
    protocol: Protocol,
    fallback: Fallback,
) -> Result<SingleSessionModel, ClassifyError> {
    let mut store = CountStore::new();
    for record in sessions {
        if let (Some(fp), Some(label)) = (record.fingerprint(protocol), &record.label) {
            store.observe(fp, label, 1);
        }
    }
    SingleSessionModel::from_store(protocol, store, fallback)
}

fn argmax_counts<'a>(
    counts: impl IntoIterator<Item = (&'a CategoryLabel, u64)>,
) -> Option<&'a CategoryLabel> {
    let mut best: Option<(&CategoryLabel, u64)> = None;
    for (label, n) in counts {
        if n == 0 {
            continue;
        }
        match best {
            // Scanning in sorted label order, so strict improvement keeps
            // the lexicographically smallest winner on ties.
            Some((_, bn)) if n <= bn => {}
            _ => best = Some((label, n)),
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone)]
pub struct SingleSessionEval {
    pub confusion: ConfusionMatrix,
    pub abstained: u64,
}

/// Counts of (true label, predicted label) pairs. Rows are true labels;
/// labels absent from the test data keep all-zero rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<CategoryLabel>,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    /// `labels` must be sorted and distinct.
    pub fn new(labels: Vec<CategoryLabel>) -> ConfusionMatrix {
        debug_assert!(labels.windows(2).all(|w| w[0] < w[1]));
        let n = labels.len();
        ConfusionMatrix {
            labels,
            cells: vec![0; n * n],
        }
    }

    pub fn labels(&self) -> &[CategoryLabel] {
        &self.labels
    }

    fn index(&self, label: &CategoryLabel) -> usize {
        self.labels
            .binary_search(label)
            .unwrap_or_else(|_| panic!("label {label} not declared for this matrix"))
    }

    pub fn record(&mut self, truth: &CategoryLabel, predicted: &CategoryLabel) {
        let (t, p) = (self.index(truth), self.index(predicted));
        self.cells[t * self.labels.len() + p] += 1;
    }

    pub fn count(&self, truth: &CategoryLabel, predicted: &CategoryLabel) -> u64 {
        self.cells[self.index(truth) * self.labels.len() + self.index(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        let n = self.labels.len();
        (0..n).map(|i| self.cells[i * n + i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.diagonal() as f64 / total as f64
    }

    /// Recall per true label; labels with empty rows are omitted.
    pub fn per_class_recall(&self) -> BTreeMap<CategoryLabel, f64> {
        let n = self.labels.len();
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, label)| {
                let row_sum: u64 = self.cells[i * n..(i + 1) * n].iter().sum();
                (row_sum > 0)
                    .then(|| (label.clone(), self.cells[i * n + i] as f64 / row_sum as f64))
            })
            .collect()
    }

    /// CSV with true labels as rows and predicted labels as columns.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("true\\predicted");
        for label in &self.labels {
            out.push(',');
            out.push_str(&quote(label.as_str()));
        }
        out.push('\n');
        let n = self.labels.len();
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(&quote(label.as_str()));
            for j in 0..n {
                out.push_str(&format!(",{}", self.cells[i * n + j]));
            }
            out.push('\n');
        }
        out
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let n = self.labels.len();
        let rows: Vec<&[u64]> = (0..n).map(|i| &self.cells[i * n..(i + 1) * n]).collect();
        let mut s = serializer.serialize_struct("ConfusionMatrix", 2)?;
        s.serialize_field("labels", &self.labels)?;
        s.serialize_field("rows", &rows)?;
        s.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{SessionKey, Transport};

    fn session(ua: &str, label: &str) -> SessionRecord {
        SessionRecord {
            key: SessionKey {
                src: "h1".into(),
                dst: "d1".into(),
                src_port: 50000,
                dst_port: 80,
                transport: Transport::Tcp,
            },
            start_time: 0.0,
            tcp_fp: None,
            tls_fp: None,
            http_fp: Some(Fingerprint::http(ua)),
            label: Some(label.into()),
        }
    }

    #[test]
    fn single_observation_predicts_its_label() {
        let sessions = vec![session("f", "Win")];
        let model = train_single(&sessions, Protocol::Http, Fallback::Abstain).unwrap();
        assert_eq!(
            model.classify(&Fingerprint::http("f")).unwrap(),
            Some("Win".into())
        );
    }

    #[test]
    fn argmax_of_empirical_posterior() {
        let mut sessions = vec![];
        for _ in 0..9 {
            sessions.push(session("f", "Win"));
        }
        sessions.push(session("f", "OSX"));
        let model = train_single(&sessions, Protocol::Http, Fallback::Abstain).unwrap();
        assert_eq!(
            model.classify(&Fingerprint::http("f")).unwrap(),
            Some("Win".into())
        );
    }

    #[test]
    fn ties_break_lexicographically() {
        let sessions = vec![session("f", "B"), session("f", "A")];
        let model = train_single(&sessions, Protocol::Http, Fallback::Abstain).unwrap();
        assert_eq!(
            model.classify(&Fingerprint::http("f")).unwrap(),
            Some("A".into())
        );
    }

    #[test]
    fn fallback_policies_for_unseen_fingerprints() {
        let sessions = vec![
            session("a", "Win"),
            session("b", "Win"),
            session("c", "OSX"),
        ];
        let abstain = train_single(&sessions, Protocol::Http, Fallback::Abstain).unwrap();
        assert_eq!(abstain.classify(&Fingerprint::http("zz")).unwrap(), None);
        let prior = train_single(&sessions, Protocol::Http, Fallback::PriorArgmax).unwrap();
        assert_eq!(
            prior.classify(&Fingerprint::http("zz")).unwrap(),
            Some("Win".into())
        );
    }

    #[test]
    fn protocol_mismatch_is_an_error() {
        let model =
            train_single(&[session("f", "Win")], Protocol::Http, Fallback::Abstain).unwrap();
        let tcp = Fingerprint::tcp(64, vec![]).unwrap();
        assert!(matches!(
            model.classify(&tcp),
            Err(ClassifyError::ProtocolMismatch { .. })
        ));
    }

    #[test]
    fn no_training_data_is_an_error() {
        let sessions = vec![session("f", "Win")];
        assert!(matches!(
            train_single(&sessions, Protocol::Tls, Fallback::Abstain),
            Err(ClassifyError::NoTrainingData(Protocol::Tls))
        ));
    }

    #[test]
    fn scaling_counts_leaves_decisions_unchanged() {
        let mut store = CountStore::new();
        for (ua, label, n) in [("f", "Win", 7u64), ("f", "OSX", 3), ("g", "OSX", 2)] {
            store.observe(&Fingerprint::http(ua), &label.into(), n);
        }
        let mut scaled = CountStore::new();
        for (ua, label, n) in [("f", "Win", 7u64), ("f", "OSX", 3), ("g", "OSX", 2)] {
            scaled.observe(&Fingerprint::http(ua), &label.into(), n * 13);
        }
        let a = SingleSessionModel::from_store(Protocol::Http, store, Fallback::Abstain).unwrap();
        let b = SingleSessionModel::from_store(Protocol::Http, scaled, Fallback::Abstain).unwrap();
        for key in ["f", "g"] {
            assert_eq!(
                a.classify_key(&Fingerprint::http(key).canonical()),
                b.classify_key(&Fingerprint::http(key).canonical())
            );
        }
    }

    #[test]
    fn evaluation_counts_and_abstentions() {
        let train = vec![
            session("a", "Win"),
            session("b", "OSX"),
            session("a", "Win"),
        ];
        let model = train_single(&train, Protocol::Http, Fallback::Abstain).unwrap();
        let test = vec![
            session("a", "Win"),  // correct
            session("b", "Win"),  // predicted OSX, wrong
            session("zz", "Win"), // abstained
        ];
        let eval = model.evaluate(&test);
        assert_eq!(eval.abstained, 1);
        assert_eq!(eval.confusion.total(), 2);
        assert!((eval.confusion.accuracy() - 0.5).abs() < 1e-12);
        assert_eq!(eval.confusion.count(&"Win".into(), &"OSX".into()), 1);
    }

    #[test]
    fn perfect_model_scores_one() {
        let train: Vec<_> = (0..10)
            .map(|i| session(&format!("f{i}"), if i % 2 == 0 { "Win" } else { "OSX" }))
            .collect();
        let model = train_single(&train, Protocol::Http, Fallback::Abstain).unwrap();
        let eval = model.evaluate(&train);
        assert_eq!(eval.confusion.accuracy(), 1.0);
        assert_eq!(eval.confusion.total(), 10);
    }

    #[test]
    fn model_json_round_trip() {
        let model = train_single(
            &[session("a", "Win"), session("b", "OSX")],
            Protocol::Http,
            Fallback::PriorArgmax,
        )
        .unwrap();
        let loaded = SingleSessionModel::from_json(&model.to_json()).unwrap();
        assert_eq!(loaded.protocol(), Protocol::Http);
        assert_eq!(
            loaded.classify_key(&Fingerprint::http("a").canonical()),
            Some("Win".into())
        );
        assert_eq!(
            loaded.classify_key(&Fingerprint::http("zz").canonical()),
            Some("OSX".into()) // prior argmax; OSX wins the lexicographic tie
        );
    }

    #[test]
    fn confusion_csv_shape() {
        let mut m = ConfusionMatrix::new(vec!["A".into(), "B".into()]);
        m.record(&"A".into(), &"A".into());
        m.record(&"A".into(), &"B".into());
        let csv = m.to_csv();
        assert_eq!(csv, "true\\predicted,\"A\",\"B\"\n\"A\",1,1\n\"B\",0,0\n");
        let recalls = m.per_class_recall();
        assert_eq!(recalls.len(), 1);
        assert!((recalls[&"A".into()] - 0.5).abs() < 1e-12);
    }
}
