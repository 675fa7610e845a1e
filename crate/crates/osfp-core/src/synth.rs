//! Deterministic labeled corpus generator.
//!
//! Profiles are data: each operating system gets a host count, a flow rate,
//! protocol presence rates, and per-protocol fingerprint distributions.
//! Generation is per-host with independent rng substreams, so host order
//! never changes the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::fingerprint::{parse_canonical, Fingerprint, Protocol};
use crate::session::{SessionKey, SessionRecord, Transport};
use crate::store::CategoryLabel;

/// Relative session activity per hour of day; a coarse office-hours shape.
const DIURNAL: [f64; 24] = [
    0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.5, 1.0, 2.0, 2.6, 2.8, 2.6, 2.2, 2.6, 2.8, 2.6, 2.2, 1.6, 1.0,
    0.7, 0.5, 0.4, 0.3, 0.2,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresenceRates {
    /// Probability the capture saw the session's SYN.
    pub tcp: f64,
    /// Probability the session is TLS.
    pub tls: f64,
    /// Probability the session is plaintext HTTP.
    pub http: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsProfile {
    pub label: CategoryLabel,
    pub hosts: u32,
    pub flows_per_host_per_day: f64,
    pub presence: PresenceRates,
    /// Canonical fingerprint strings with probabilities summing to 1.
    pub fingerprints: FingerprintDists,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerprintDists {
    pub tcp: Vec<(String, f64)>,
    pub tls: Vec<(String, f64)>,
    pub http: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    #[serde(default = "default_days")]
    pub days: u32,
    pub seed: u64,
    #[serde(default = "default_start_ts")]
    pub start_ts: u64,
    /// Mean sessions emitted in an hour a host is active.
    #[serde(default = "default_sessions_per_active_hour")]
    pub sessions_per_active_hour: f64,
    pub profiles: Vec<OsProfile>,
}

fn default_days() -> u32 {
    6
}

fn default_start_ts() -> u64 {
    // Day-aligned epoch second (2017-04-01 00:00:00 UTC).
    1_491_004_800
}

fn default_sessions_per_active_hour() -> f64 {
    19.0
}

/// The bundled spec: ~12 OS profiles with a dominant-class share around
/// 30%, partially overlapping fingerprint distributions across sibling
/// versions, and per-window fingerprint diversity tuned for 60-minute
/// windows.
pub fn default_spec() -> CorpusSpec {
    let text = include_str!("../data/default_profiles.json");
    let spec: CorpusSpec = serde_json::from_str(text).expect("bundled profile data is valid");
    spec.validate().expect("bundled profile data is valid");
    spec
}

impl CorpusSpec {
    pub fn from_json(text: &str) -> Result<CorpusSpec, SynthError> {
        let spec: CorpusSpec =
            serde_json::from_str(text).map_err(|e| SynthError::BadDocument(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.days == 0 {
            return Err(SynthError::InvalidSpec("days must be >= 1".into()));
        }
        if !self.sessions_per_active_hour.is_finite() || self.sessions_per_active_hour <= 1.0 {
            return Err(SynthError::InvalidSpec(
                "sessions_per_active_hour must exceed 1".into(),
            ));
        }
        if !self.start_ts.is_multiple_of(86_400) {
            return Err(SynthError::InvalidSpec(
                "start_ts must be day-aligned".into(),
            ));
        }
        let populated = self.profiles.iter().filter(|p| p.hosts > 0).count();
        if populated < 2 {
            return Err(SynthError::InvalidSpec(
                "need at least two profiles with hosts".into(),
            ));
        }
        for profile in &self.profiles {
            profile.validate()?;
        }
        Ok(())
    }
}

impl OsProfile {
    fn validate(&self) -> Result<(), SynthError> {
        let ctx = self.label.as_str();
        if self.label.as_str().is_empty() {
            return Err(SynthError::InvalidSpec("empty label".into()));
        }
        if !self.flows_per_host_per_day.is_finite() || self.flows_per_host_per_day <= 0.0 {
            return Err(SynthError::InvalidSpec(format!(
                "{ctx}: flows_per_host_per_day must be positive"
            )));
        }
        let p = &self.presence;
        for (name, v) in [("tcp", p.tcp), ("tls", p.tls), ("http", p.http)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: presence.{name} out of [0,1]"
                )));
            }
        }
        if p.tls + p.http > 1.0 + 1e-9 {
            return Err(SynthError::InvalidSpec(format!(
                "{ctx}: tls and http presence exceed 1 combined"
            )));
        }
        for (proto, dist, rate) in [
            (Protocol::Tcp, &self.fingerprints.tcp, p.tcp),
            (Protocol::Tls, &self.fingerprints.tls, p.tls),
            (Protocol::Http, &self.fingerprints.http, p.http),
        ] {
            if rate > 0.0 && dist.is_empty() {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: {proto} present but no fingerprints"
                )));
            }
            if dist.is_empty() {
                continue;
            }
            let sum: f64 = dist.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(SynthError::InvalidSpec(format!(
                    "{ctx}: {proto} distribution sums to {sum}"
                )));
            }
            for (key, prob) in dist {
                if prob.is_nan() || *prob < 0.0 {
                    return Err(SynthError::InvalidSpec(format!(
                        "{ctx}: negative probability for {key}"
                    )));
                }
                let fp = parse_canonical(key)
                    .map_err(|e| SynthError::InvalidSpec(format!("{ctx}: {key:?}: {e}")))?;
                if fp.protocol() != proto {
                    return Err(SynthError::InvalidSpec(format!(
                        "{ctx}: {key:?} is not a {proto} fingerprint"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parsed, sampling-ready profile distributions.
struct ProfileTables {
    label: CategoryLabel,
    flows_per_day: f64,
    presence: PresenceRates,
    dists: [Vec<(Fingerprint, f64)>; 3],
}

impl ProfileTables {
    fn build(profile: &OsProfile) -> ProfileTables {
        let load = |dist: &[(String, f64)]| {
            let mut cumulative = 0.0;
            dist.iter()
                .map(|(key, p)| {
                    cumulative += p;
                    (parse_canonical(key).expect("validated"), cumulative)
                })
                .collect::<Vec<_>>()
        };
        ProfileTables {
            label: profile.label.clone(),
            flows_per_day: profile.flows_per_host_per_day,
            presence: profile.presence.clone(),
            dists: [
                load(&profile.fingerprints.tcp),
                load(&profile.fingerprints.tls),
                load(&profile.fingerprints.http),
            ],
        }
    }
}

struct Draft {
    ts: f64,
    host: u32,
    profile: u16,
    src_port: u16,
    dst_port: u16,
    dst: u32,
    /// Fingerprint index into the profile distribution per protocol slot.
    fps: [Option<u16>; 3],
}

/// Deterministic session stream, sorted by timestamp.
pub struct SessionStream {
    drafts: std::vec::IntoIter<Draft>,
    tables: Vec<ProfileTables>,
    host_names: Vec<String>,
}

impl Iterator for SessionStream {
    type Item = SessionRecord;

    fn next(&mut self) -> Option<SessionRecord> {
        let d = self.drafts.next()?;
        let tables = &self.tables[d.profile as usize];
        let fp_at =
            |slot: usize, i: Option<u16>| i.map(|i| tables.dists[slot][i as usize].0.clone());
        Some(SessionRecord {
            key: SessionKey {
                src: self.host_names[d.host as usize].clone(),
                dst: format!("d{:08x}", d.dst),
                src_port: d.src_port,
                dst_port: d.dst_port,
                transport: Transport::Tcp,
            },
            start_time: d.ts,
            tcp_fp: fp_at(0, d.fps[0]),
            tls_fp: fp_at(1, d.fps[1]),
            http_fp: fp_at(2, d.fps[2]),
            label: Some(tables.label.clone()),
        })
    }
}

/// Generate the spec's corpus. Same spec and seed always yield the same
/// stream, byte for byte.
pub fn generate(spec: &CorpusSpec) -> Result<SessionStream, SynthError> {
    spec.validate()?;
    let tables: Vec<ProfileTables> = spec.profiles.iter().map(ProfileTables::build).collect();
    let diurnal_sum: f64 = DIURNAL.iter().sum();

    let mut drafts: Vec<Draft> = Vec::new();
    let mut host_names = Vec::new();
    let mut host_index = 0u32;
    for (profile_idx, profile) in spec.profiles.iter().enumerate() {
        let tables = &tables[profile_idx];
        for _ in 0..profile.hosts {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(host_index as u64 + 1);
            host_names.push(format!("h{:08x}{:04x}", rng.gen::<u32>(), host_index));

            // Per-host rate skew: lognormal with sigma 0.4 around the
            // profile rate.
            let rate_factor = (0.4 * gaussian(&mut rng)).exp();
            let active_hours_per_day =
                (tables.flows_per_day * rate_factor / spec.sessions_per_active_hour).max(0.05);

            for day in 0..spec.days {
                for (hour, weight) in DIURNAL.iter().enumerate() {
                    let p_active = (active_hours_per_day * weight / diurnal_sum).min(0.95);
                    if rng.gen::<f64>() >= p_active {
                        continue;
                    }
                    let n = 1 + poisson(spec.sessions_per_active_hour - 1.0, &mut rng);
                    for _ in 0..n {
                        let base =
                            spec.start_ts as f64 + (day as usize * 24 + hour) as f64 * 3600.0;
                        let ts = base + rng.gen::<f64>() * 3600.0;
                        if let Some(draft) =
                            draw_session(ts, host_index, profile_idx as u16, tables, &mut rng)
                        {
                            drafts.push(draft);
                        }
                    }
                }
            }
            host_index += 1;
        }
    }

    drafts.sort_by(|a, b| {
        a.ts.total_cmp(&b.ts)
            .then_with(|| a.host.cmp(&b.host))
            .then_with(|| a.src_port.cmp(&b.src_port))
    });
    Ok(SessionStream {
        drafts: drafts.into_iter(),
        tables,
        host_names,
    })
}

fn draw_session(
    ts: f64,
    host: u32,
    profile: u16,
    tables: &ProfileTables,
    rng: &mut ChaCha8Rng,
) -> Option<Draft> {
    let dst: u32 = rng.gen();
    let src_port = 49_152 + (rng.gen::<u16>() % 16_384);
    let has_tcp = rng.gen::<f64>() < tables.presence.tcp;
    let kind: f64 = rng.gen();
    let (tls, http) = if kind < tables.presence.tls {
        (true, false)
    } else if kind < tables.presence.tls + tables.presence.http {
        (false, true)
    } else {
        (false, false)
    };
    // Session left no observable evidence; the capture never records it.
    if !has_tcp && !tls && !http {
        return None;
    }
    let draw = |slot: usize, present: bool, rng: &mut ChaCha8Rng| {
        present.then(|| {
            let dist = &tables.dists[slot];
            let u: f64 = rng.gen();
            dist.partition_point(|&(_, cum)| cum < u)
                .min(dist.len() - 1) as u16
        })
    };
    let fps = [draw(0, has_tcp, rng), draw(1, tls, rng), draw(2, http, rng)];
    Some(Draft {
        ts,
        host,
        profile,
        src_port,
        dst_port: if http { 80 } else { 443 },
        dst,
        fps,
    })
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Knuth's product method; fine for the small means used here.
fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut product: f64 = rng.gen();
    let mut count = 0u32;
    while product > limit {
        product *= rng.gen::<f64>();
        count += 1;
    }
    count
}
