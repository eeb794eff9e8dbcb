//! Scenario file loading and validation.
//!
//! Scenarios are TOML with the top-level keys `link` (bits per second),
//! `frame` (microseconds), `duration` (frames), `queue_capacity`
//! (packets), `eta`, `weights`, `scheduler`, `seed`, and a
//! `connections` array. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::allocation::WpfWeights;
use crate::baselines::{DfpqConfig, SchedulerKind};
use crate::error::SimError;
use crate::traffic::TrafficModel;
use crate::types::{Cid, QosProfile, ServiceClass};

/// The bundled reference scenario: 9 stations with one connection of
/// each class, 10 Mbps link, 5 ms frames, 2000 frames.
pub const REFERENCE_SCENARIO_TOML: &str = include_str!("../scenarios/reference.toml");

#[derive(Debug, Clone)]
pub struct ConnSpec {
    pub cid: Cid,
    pub ms: u32,
    pub class: ServiceClass,
    pub qos: QosProfile,
    pub traffic: TrafficModel,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub link_rate_bps: u64,
    pub frame_duration_us: u64,
    pub num_frames: u64,
    pub queue_capacity: usize,
    pub eta: u64,
    pub weights: WpfWeights,
    pub dfpq: DfpqConfig,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub connections: Vec<ConnSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    link: u64,
    frame: u64,
    duration: u64,
    queue_capacity: usize,
    eta: u64,
    weights: Option<WpfWeights>,
    dfpq: Option<DfpqConfig>,
    scheduler: Option<SchedulerKind>,
    seed: u64,
    connections: Vec<ConnFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConnFile {
    cid: u32,
    #[serde(default)]
    ms: u32,
    class: ServiceClass,
    max_sustained: u64,
    #[serde(default)]
    min_reserved: u64,
    max_latency: u64,
    #[serde(default)]
    grant_interval: u64,
    #[serde(default)]
    tolerated_jitter: u64,
    packet_size: u64,
    traffic: TrafficFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficFile {
    kind: crate::traffic::TrafficKind,
    mean_rate: u64,
    #[serde(default)]
    mean_on: u64,
    #[serde(default)]
    mean_off: u64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, SimError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        Scenario::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    /// The bundled reference scenario.
    pub fn reference() -> Scenario {
        Scenario::from_toml(REFERENCE_SCENARIO_TOML).expect("bundled scenario is valid")
    }

    fn from_file(file: ScenarioFile) -> Result<Scenario, SimError> {
        if file.duration == 0 {
            return Err(SimError::Scenario("duration must be > 0 frames".into()));
        }
        if file.queue_capacity == 0 {
            return Err(SimError::Scenario("queue_capacity must be > 0".into()));
        }
        crate::types::bytes_per_frame(file.link, file.frame)?;

        let weights = file.weights.unwrap_or_default();
        weights.validate()?;

        let mut connections = Vec::with_capacity(file.connections.len());
        let mut seen = std::collections::BTreeSet::new();
        for c in file.connections {
            if c.cid == 0 {
                return Err(SimError::Scenario("cid 0 is reserved; cids start at 1".into()));
            }
            if !seen.insert(c.cid) {
                return Err(SimError::Scenario(format!("duplicate cid {}", c.cid)));
            }
            let cid = Cid(c.cid);
            let qos = QosProfile {
                max_sustained_bps: c.max_sustained,
                min_reserved_bps: c.min_reserved,
                max_latency_us: c.max_latency,
                grant_interval_us: c.grant_interval,
                tolerated_jitter_us: c.tolerated_jitter,
                packet_size_bytes: c.packet_size,
            };
            qos.validate(cid, c.class)?;
            let traffic = TrafficModel {
                kind: c.traffic.kind,
                mean_rate_bps: c.traffic.mean_rate,
                mean_on_us: c.traffic.mean_on,
                mean_off_us: c.traffic.mean_off,
            };
            traffic.validate(cid)?;
            connections.push(ConnSpec { cid, ms: c.ms, class: c.class, qos, traffic });
        }
        if connections.is_empty() {
            return Err(SimError::Scenario("scenario has no connections".into()));
        }

        Ok(Scenario {
            link_rate_bps: file.link,
            frame_duration_us: file.frame,
            num_frames: file.duration,
            queue_capacity: file.queue_capacity,
            eta: file.eta,
            weights,
            dfpq: file.dfpq.unwrap_or_default(),
            scheduler: file.scheduler.unwrap_or(SchedulerKind::Apds),
            seed: file.seed,
            connections,
        })
    }

    pub fn bytes_per_frame(&self) -> u64 {
        crate::types::bytes_per_frame(self.link_rate_bps, self.frame_duration_us)
            .expect("validated at load")
    }

    /// Stable fingerprint of the scenario content, for run metadata.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over a canonical rendering; stable across platforms
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(&self.link_rate_bps.to_le_bytes());
        eat(&self.frame_duration_us.to_le_bytes());
        eat(&self.num_frames.to_le_bytes());
        eat(&(self.queue_capacity as u64).to_le_bytes());
        eat(&self.eta.to_le_bytes());
        eat(&self.seed.to_le_bytes());
        for c in &self.connections {
            eat(&c.cid.0.to_le_bytes());
            eat(c.class.name().as_bytes());
            eat(&c.qos.max_sustained_bps.to_le_bytes());
            eat(&c.qos.min_reserved_bps.to_le_bytes());
            eat(&c.qos.max_latency_us.to_le_bytes());
            eat(&c.qos.packet_size_bytes.to_le_bytes());
            eat(&c.traffic.mean_rate_bps.to_le_bytes());
        }
        h
    }
}
