//! Domain types shared by every other module: service classes, QoS
//! profiles, packets, per-connection state, and the per-frame budget.
//!
//! Units are fixed across the crate: time is integer microseconds,
//! bandwidth is integer bytes per frame, rates are bits per second.
//! All rate-to-byte conversions floor so the link is never over-granted.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Connection identifier. Unique per flow; every tie-break in the
/// artifact is "ascending CID".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cid(pub u32);

impl std::fmt::Display for Cid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The five 802.16 service types. Declaration order is strict class
/// priority: UGS > ERT-VR > RT-VR > NRT-VR > BE, so the derived `Ord`
/// sorts highest-priority first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceClass {
    Ugs,
    ErtVr,
    RtVr,
    NrtVr,
    Be,
}

pub const ALL_CLASSES: [ServiceClass; 5] = [
    ServiceClass::Ugs,
    ServiceClass::ErtVr,
    ServiceClass::RtVr,
    ServiceClass::NrtVr,
    ServiceClass::Be,
];

impl ServiceClass {
    /// Delay-constrained services: scheduled by deadline slack.
    pub fn is_dcs(self) -> bool {
        matches!(self, ServiceClass::Ugs | ServiceClass::ErtVr | ServiceClass::RtVr)
    }

    /// Throughput-guaranteed services: scheduled by satisfaction ratio.
    pub fn is_tgs(self) -> bool {
        !self.is_dcs()
    }

    pub fn name(self) -> &'static str {
        match self {
            ServiceClass::Ugs => "ugs",
            ServiceClass::ErtVr => "ert_vr",
            ServiceClass::RtVr => "rt_vr",
            ServiceClass::NrtVr => "nrt_vr",
            ServiceClass::Be => "be",
        }
    }
}

/// Per-connection QoS parameters.
///
/// `grant_interval_us` and `tolerated_jitter_us` are carried in the data
/// model but drive no scheduling formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosProfile {
    /// Maximum sustained traffic rate, bits per second.
    pub max_sustained_bps: u64,
    /// Minimum reserved traffic rate, bits per second. Zero for BE.
    pub min_reserved_bps: u64,
    /// Maximum latency, microseconds.
    pub max_latency_us: u64,
    /// Unsolicited grant interval, microseconds (carried, unused).
    #[serde(default)]
    pub grant_interval_us: u64,
    /// Tolerated jitter, microseconds (carried, unused).
    #[serde(default)]
    pub tolerated_jitter_us: u64,
    /// Fixed MAC SDU size for this connection, bytes.
    pub packet_size_bytes: u64,
}

impl QosProfile {
    pub fn validate(&self, cid: Cid, class: ServiceClass) -> Result<(), SimError> {
        if self.packet_size_bytes == 0 {
            return Err(SimError::Scenario(format!(
                "connection {cid}: packet_size must be > 0"
            )));
        }
        if self.max_latency_us == 0 {
            return Err(SimError::Scenario(format!(
                "connection {cid}: max_latency must be > 0"
            )));
        }
        if self.max_sustained_bps < self.min_reserved_bps {
            return Err(SimError::Scenario(format!(
                "connection {cid}: max_sustained ({}) < min_reserved ({})",
                self.max_sustained_bps, self.min_reserved_bps
            )));
        }
        match class {
            ServiceClass::Be => {
                if self.min_reserved_bps != 0 {
                    return Err(SimError::Scenario(format!(
                        "connection {cid}: BE connections take no min_reserved rate"
                    )));
                }
            }
            _ => {
                if self.min_reserved_bps == 0 {
                    return Err(SimError::Scenario(format!(
                        "connection {cid}: min_reserved is required for class {}",
                        class.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One MAC-layer packet awaiting downlink service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub cid: Cid,
    /// Absolute simulation time of arrival, microseconds.
    pub arrival_us: u64,
    pub size_bytes: u64,
}

/// Values of the previous frame consumed by the satisfaction ratios:
/// the backlog snapshot f(m-1) and the bytes actually served b^a(m-1).
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameHistory {
    /// Backlog snapshot of the previous frame (post-arrival, pre-service).
    pub backlog_bytes: u64,
    /// Bytes actually served in the previous frame.
    pub served_bytes: u64,
}

/// Cumulative per-connection accounting over a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConnStats {
    pub offered_bytes: u64,
    pub served_bytes: u64,
    pub served_packets: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    pub delay_sum_us: u64,
}

/// Per-connection queue and scheduling state.
#[derive(Debug, Clone)]
pub struct ConnectionState {
    pub cid: Cid,
    pub class: ServiceClass,
    pub qos: QosProfile,
    queue: VecDeque<PacketRecord>,
    capacity_packets: usize,
    backlog_bytes: u64,
    /// History of the previous frame; `None` before frame 0 completes.
    pub prev: Option<FrameHistory>,
    /// Service interrupt counter: consecutive zero-service frames.
    pub phi: u64,
    pub stats: ConnStats,
}

impl ConnectionState {
    pub fn new(cid: Cid, class: ServiceClass, qos: QosProfile, capacity_packets: usize) -> Self {
        ConnectionState {
            cid,
            class,
            qos,
            queue: VecDeque::new(),
            capacity_packets,
            backlog_bytes: 0,
            prev: None,
            phi: 0,
            stats: ConnStats::default(),
        }
    }

    pub fn backlog_bytes(&self) -> u64 {
        self.backlog_bytes
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn capacity_packets(&self) -> usize {
        self.capacity_packets
    }

    pub fn packets(&self) -> impl Iterator<Item = &PacketRecord> {
        self.queue.iter()
    }

    pub fn head(&self) -> Option<&PacketRecord> {
        self.queue.front()
    }

    /// Appends one packet if the queue has room. Returns false (drop)
    /// when at capacity.
    pub fn try_enqueue(&mut self, p: PacketRecord) -> bool {
        if self.queue.len() >= self.capacity_packets {
            return false;
        }
        self.backlog_bytes += p.size_bytes;
        self.queue.push_back(p);
        true
    }

    /// Removes the head packet if its size fits `budget_bytes`.
    pub fn pop_if_fits(&mut self, budget_bytes: u64) -> Option<PacketRecord> {
        match self.queue.front() {
            Some(p) if p.size_bytes <= budget_bytes => {
                let p = self.queue.pop_front().unwrap();
                self.backlog_bytes -= p.size_bytes;
                Some(p)
            }
            _ => None,
        }
    }
}

/// The byte budget and clock of one downlink frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameBudget {
    pub frame_index: u64,
    pub frame_duration_us: u64,
    /// Bytes available on the downlink this frame.
    pub total_bytes: u64,
    /// Frame start time, microseconds.
    pub now_us: u64,
}

impl FrameBudget {
    pub fn new(frame_index: u64, frame_duration_us: u64, total_bytes: u64) -> Self {
        FrameBudget {
            frame_index,
            frame_duration_us,
            total_bytes,
            now_us: frame_index * frame_duration_us,
        }
    }
}

/// Per-CID byte grants for one frame; the allocator's output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GrantMap {
    grants: BTreeMap<Cid, u64>,
}

impl GrantMap {
    pub fn new() -> Self {
        GrantMap::default()
    }

    pub fn set(&mut self, cid: Cid, bytes: u64) {
        self.grants.insert(cid, bytes);
    }

    pub fn add(&mut self, cid: Cid, bytes: u64) {
        *self.grants.entry(cid).or_insert(0) += bytes;
    }

    pub fn get(&self, cid: Cid) -> u64 {
        self.grants.get(&cid).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.grants.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cid, u64)> + '_ {
        self.grants.iter().map(|(&c, &b)| (c, b))
    }
}

/// Downlink byte budget of one frame: floor(rate * duration / 8 / 1e6).
pub fn bytes_per_frame(link_rate_bps: u64, frame_duration_us: u64) -> Result<u64, SimError> {
    if link_rate_bps == 0 || frame_duration_us == 0 {
        return Err(SimError::Scenario(
            "link rate and frame duration must be > 0".into(),
        ));
    }
    Ok((link_rate_bps as u128 * frame_duration_us as u128 / 8 / 1_000_000) as u64)
}

/// floor(rate_bps over `duration_us`) in bytes; the Γ·T / γ·T bridge.
pub fn rate_to_bytes(rate_bps: u64, duration_us: u64) -> u64 {
    (rate_bps as u128 * duration_us as u128 / 8 / 1_000_000) as u64
}
