//! Session records, their JSON Lines form, and the interned corpus view.
//!
//! One record describes one observed client-initiated session: a
//! pseudonymized 5-tuple, a start time, and up to one fingerprint per
//! protocol. The JSONL encoding is the interchange format between the
//! extractor, the corpus generator, and the experiment pipelines.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde_json::{json, Map, Value};

use crate::error::RecordError;
use crate::fingerprint::{Element, Fingerprint, Protocol};
use crate::store::CategoryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub src: String,
    pub dst: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub key: SessionKey,
    pub start_time: f64,
    pub tcp_fp: Option<Fingerprint>,
    pub tls_fp: Option<Fingerprint>,
    pub http_fp: Option<Fingerprint>,
    pub label: Option<CategoryLabel>,
}

impl SessionRecord {
    pub fn fingerprint(&self, protocol: Protocol) -> Option<&Fingerprint> {
        match protocol {
            Protocol::Tcp => self.tcp_fp.as_ref(),
            Protocol::Tls => self.tls_fp.as_ref(),
            Protocol::Http => self.http_fp.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.key.src.is_empty() || self.key.dst.is_empty() {
            return Err(RecordError::BadRecord("empty pseudonym".into()));
        }
        if self.tcp_fp.is_none() && self.tls_fp.is_none() && self.http_fp.is_none() {
            return Err(RecordError::BadRecord(
                "record carries no fingerprint".into(),
            ));
        }
        for (proto, fp) in [
            (Protocol::Tcp, &self.tcp_fp),
            (Protocol::Tls, &self.tls_fp),
            (Protocol::Http, &self.http_fp),
        ] {
            if let Some(fp) = fp {
                if fp.protocol() != proto {
                    return Err(RecordError::BadRecord(format!(
                        "{proto} field holds a {} fingerprint",
                        fp.protocol()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("ts".into(), json!(self.start_time));
        obj.insert("src".into(), json!(self.key.src));
        obj.insert("dst".into(), json!(self.key.dst));
        obj.insert("sp".into(), json!(self.key.src_port));
        obj.insert("dp".into(), json!(self.key.dst_port));
        if let Some(fp) = &self.tcp_fp {
            obj.insert(
                "tcp".into(),
                json!({
                    "ttl": fp.ttl().unwrap_or(0),
                    "opts": elements_to_json(fp.elements()),
                }),
            );
        }
        if let Some(fp) = &self.tls_fp {
            obj.insert(
                "tls".into(),
                json!({
                    "elems": [
                        elements_to_json(fp.ciphers()),
                        elements_to_json(fp.extensions()),
                    ],
                }),
            );
        }
        if let Some(fp) = &self.http_fp {
            let ua = fp.elements()[0].data.as_deref().unwrap_or("");
            obj.insert("http".into(), json!({ "ua": ua }));
        }
        if let Some(label) = &self.label {
            obj.insert("label".into(), json!(label.as_str()));
        }
        Value::Object(obj)
    }

    pub fn to_json_line(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json_line(line: &str) -> Result<SessionRecord, RecordError> {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| RecordError::BadRecord(format!("not JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| RecordError::BadRecord("not an object".into()))?;
        let ts = field(obj, "ts")?
            .as_f64()
            .ok_or_else(|| RecordError::BadRecord("ts is not a number".into()))?;
        let src = string_field(obj, "src")?;
        let dst = string_field(obj, "dst")?;
        let sp = port_field(obj, "sp")?;
        let dp = port_field(obj, "dp")?;

        let tcp_fp = match obj.get("tcp") {
            Some(v) => {
                let o = v
                    .as_object()
                    .ok_or_else(|| RecordError::BadRecord("tcp is not an object".into()))?;
                let ttl = field(o, "ttl")?
                    .as_u64()
                    .filter(|&t| t <= u32::MAX as u64)
                    .ok_or_else(|| RecordError::BadRecord("bad ttl".into()))?;
                let opts = elements_from_json(field(o, "opts")?)?;
                Some(Fingerprint::tcp(ttl as u32, opts)?)
            }
            None => None,
        };
        let tls_fp = match obj.get("tls") {
            Some(v) => {
                let o = v
                    .as_object()
                    .ok_or_else(|| RecordError::BadRecord("tls is not an object".into()))?;
                let elems = field(o, "elems")?
                    .as_array()
                    .filter(|segs| segs.len() == 2)
                    .ok_or_else(|| {
                        RecordError::BadRecord("tls elems must be [ciphers, extensions]".into())
                    })?;
                let ciphers = elements_from_json(&elems[0])?;
                let extensions = elements_from_json(&elems[1])?;
                Some(Fingerprint::tls(ciphers, extensions)?)
            }
            None => None,
        };
        let http_fp = match obj.get("http") {
            Some(v) => {
                let o = v
                    .as_object()
                    .ok_or_else(|| RecordError::BadRecord("http is not an object".into()))?;
                Some(Fingerprint::http(string_field(o, "ua")?))
            }
            None => None,
        };
        let label = match obj.get("label") {
            Some(v) => Some(CategoryLabel::from(v.as_str().ok_or_else(|| {
                RecordError::BadRecord("label is not a string".into())
            })?)),
            None => None,
        };

        let record = SessionRecord {
            key: SessionKey {
                src,
                dst,
                src_port: sp,
                dst_port: dp,
                transport: Transport::Tcp,
            },
            start_time: ts,
            tcp_fp,
            tls_fp,
            http_fp,
            label,
        };
        record.validate()?;
        Ok(record)
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, RecordError> {
    obj.get(name)
        .ok_or_else(|| RecordError::BadRecord(format!("missing field {name:?}")))
}

fn string_field(obj: &Map<String, Value>, name: &str) -> Result<String, RecordError> {
    Ok(field(obj, name)?
        .as_str()
        .ok_or_else(|| RecordError::BadRecord(format!("{name} is not a string")))?
        .to_string())
}

fn port_field(obj: &Map<String, Value>, name: &str) -> Result<u16, RecordError> {
    field(obj, name)?
        .as_u64()
        .filter(|&p| p <= u16::MAX as u64)
        .map(|p| p as u16)
        .ok_or_else(|| RecordError::BadRecord(format!("{name} is not a port")))
}

/// Bare code -> integer; data-bearing -> `[code, string]`.
fn elements_to_json(elements: &[Element]) -> Value {
    Value::Array(
        elements
            .iter()
            .map(|el| match &el.data {
                Some(data) => json!([el.code, data]),
                None => json!(el.code),
            })
            .collect(),
    )
}

fn elements_from_json(value: &Value) -> Result<Vec<Element>, RecordError> {
    let items = value
        .as_array()
        .ok_or_else(|| RecordError::BadRecord("element list is not an array".into()))?;
    items
        .iter()
        .map(|item| match item {
            Value::Number(n) => n
                .as_u64()
                .filter(|&c| c <= u32::MAX as u64)
                .map(|c| Element::bare(c as u32))
                .ok_or_else(|| RecordError::BadRecord("bad element code".into())),
            Value::Array(pair) if pair.len() == 2 => {
                let code = pair[0]
                    .as_u64()
                    .filter(|&c| c <= u32::MAX as u64)
                    .ok_or_else(|| RecordError::BadRecord("bad element code".into()))?;
                let data = pair[1]
                    .as_str()
                    .ok_or_else(|| RecordError::BadRecord("element data is not a string".into()))?;
                Ok(Element::with_data(code as u32, data))
            }
            _ => Err(RecordError::BadRecord("bad element encoding".into())),
        })
        .collect()
}

pub fn write_jsonl<W: Write>(out: &mut W, records: &[SessionRecord]) -> std::io::Result<()> {
    for record in records {
        out.write_all(record.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<SessionRecord, RecordError>> {
    reader.lines().filter_map(|line| match line {
        Ok(line) if line.trim().is_empty() => None,
        Ok(line) => Some(SessionRecord::from_json_line(&line)),
        Err(e) => Some(Err(RecordError::BadRecord(format!("io: {e}")))),
    })
}

/// A corpus with fingerprints, hosts, and labels interned into small ids.
/// Keeps hundreds of thousands of sessions cheap to hold and scan.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sessions: Vec<CompactSession>,
    fp_keys: Vec<String>,
    fp_protocols: Vec<Protocol>,
    hosts: Vec<String>,
    labels: Vec<CategoryLabel>,
}

#[derive(Debug, Clone, Copy)]
pub struct CompactSession {
    pub ts: f64,
    pub host: u32,
    pub label: Option<u32>,
    /// Fingerprint ids in [`Protocol::ALL`] order.
    pub fps: [Option<u32>; 3],
}

impl Corpus {
    pub fn from_records<I>(records: I) -> Result<Corpus, RecordError>
    where
        I: IntoIterator<Item = Result<SessionRecord, RecordError>>,
    {
        let mut corpus = Corpus::default();
        let mut fp_ids: HashMap<String, u32> = HashMap::new();
        let mut host_ids: HashMap<String, u32> = HashMap::new();
        let mut label_ids: HashMap<CategoryLabel, u32> = HashMap::new();
        for record in records {
            let record = record?;
            record.validate()?;
            let host = *host_ids.entry(record.key.src.clone()).or_insert_with(|| {
                corpus.hosts.push(record.key.src.clone());
                corpus.hosts.len() as u32 - 1
            });
            let label = record.label.as_ref().map(|l| {
                *label_ids.entry(l.clone()).or_insert_with(|| {
                    corpus.labels.push(l.clone());
                    corpus.labels.len() as u32 - 1
                })
            });
            let mut fps = [None; 3];
            for (slot, proto) in Protocol::ALL.iter().enumerate() {
                if let Some(fp) = record.fingerprint(*proto) {
                    let key = fp.canonical();
                    let id = *fp_ids.entry(key.clone()).or_insert_with(|| {
                        corpus.fp_keys.push(key);
                        corpus.fp_protocols.push(*proto);
                        corpus.fp_keys.len() as u32 - 1
                    });
                    fps[slot] = Some(id);
                }
            }
            corpus.sessions.push(CompactSession {
                ts: record.start_time,
                host,
                label,
                fps,
            });
        }
        Ok(corpus)
    }

    pub fn fp_key(&self, id: u32) -> &str {
        &self.fp_keys[id as usize]
    }

    pub fn fp_protocol(&self, id: u32) -> Protocol {
        self.fp_protocols[id as usize]
    }

    pub fn host(&self, id: u32) -> &str {
        &self.hosts[id as usize]
    }

    pub fn label(&self, id: u32) -> &CategoryLabel {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[CategoryLabel] {
        &self.labels
    }

    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn distinct_fingerprints(&self) -> usize {
        self.fp_keys.len()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.sessions.iter().all(|s| s.label.is_some())
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        let min = self
            .sessions
            .iter()
            .map(|s| s.ts)
            .fold(f64::INFINITY, f64::min);
        let max = self
            .sessions
            .iter()
            .map(|s| s.ts)
            .fold(f64::NEG_INFINITY, f64::max);
        (!self.sessions.is_empty()).then_some((min, max))
    }

    /// Sessions with `ts` strictly below the boundary, then the rest.
    pub fn split_at(&self, boundary_ts: f64) -> (Vec<&CompactSession>, Vec<&CompactSession>) {
        self.sessions.iter().partition(|s| s.ts < boundary_ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> SessionRecord {
        SessionRecord {
            key: SessionKey {
                src: "aabb".into(),
                dst: "ccdd".into(),
                src_port: 50123,
                dst_port: 443,
                transport: Transport::Tcp,
            },
            start_time: 1491004800.25,
            tcp_fp: Some(
                Fingerprint::tcp(
                    64,
                    vec![
                        Element::with_data(2, "1460"),
                        Element::bare(1),
                        Element::with_data(3, "7"),
                    ],
                )
                .unwrap(),
            ),
            tls_fp: Some(
                Fingerprint::tls(
                    vec![Element::bare(47), Element::bare(53)],
                    vec![Element::bare(0), Element::with_data(10, "000400170018")],
                )
                .unwrap(),
            ),
            http_fp: None,
            label: Some("Win 10.0.1058".into()),
        }
    }

    #[test]
    fn jsonl_field_layout() {
        let line = sample_record().to_json_line();
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["ts"], json!(1491004800.25));
        assert_eq!(v["sp"], json!(50123));
        assert_eq!(v["tcp"]["ttl"], json!(64));
        assert_eq!(v["tcp"]["opts"], json!([[2, "1460"], 1, [3, "7"]]));
        assert_eq!(
            v["tls"]["elems"],
            json!([[47, 53], [0, [10, "000400170018"]]])
        );
        assert!(v.get("http").is_none());
        assert_eq!(v["label"], json!("Win 10.0.1058"));
    }

    #[test]
    fn jsonl_round_trip() {
        let record = sample_record();
        let parsed = SessionRecord::from_json_line(&record.to_json_line()).unwrap();
        assert_eq!(parsed, record);
    }

    #[test]
    fn record_without_fingerprints_is_rejected() {
        let line = r#"{"ts":1.0,"src":"a","dst":"b","sp":1,"dp":2}"#;
        assert!(SessionRecord::from_json_line(line).is_err());
    }

    #[test]
    fn corpus_interns_shared_values() {
        let mut a = sample_record();
        a.http_fp = Some(Fingerprint::http("UA"));
        let b = a.clone();
        let mut c = a.clone();
        c.key.src = "other".into();
        let corpus = Corpus::from_records([Ok(a), Ok(b), Ok(c)]).unwrap();
        assert_eq!(corpus.sessions.len(), 3);
        assert_eq!(corpus.host_count(), 2);
        assert_eq!(corpus.distinct_fingerprints(), 3);
        assert_eq!(corpus.labels().len(), 1);
        assert_eq!(corpus.sessions[0].fps, corpus.sessions[1].fps);
    }

    #[test]
    fn split_respects_boundary() {
        let mut early = sample_record();
        early.start_time = 10.0;
        let mut late = sample_record();
        late.start_time = 20.0;
        let corpus = Corpus::from_records([Ok(early), Ok(late)]).unwrap();
        let (train, test) = corpus.split_at(20.0);
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
    }
}
