//! Phase 1 of the adaptive scheduler: emergent/satisfactory degrees,
//! per-class ranking queues, and priority elevation (emergent DCS
//! connections move one tier up, starved BE connections move into the
//! NRT tier).

use std::collections::BTreeMap;

use crate::types::{Cid, ConnectionState, PacketRecord, ServiceClass, ALL_CLASSES};

/// Ordered CIDs of one class; head is served first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingQueue {
    pub class: ServiceClass,
    pub ordered_cids: Vec<Cid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElevationReason {
    Emergent,
    Starved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Elevation {
    pub cid: Cid,
    pub from_tier: ServiceClass,
    pub to_tier: ServiceClass,
    pub reason: ElevationReason,
}

/// The five ranking queues after elevation, in class-priority order.
/// Each CID appears in exactly one position across all tiers.
#[derive(Debug, Clone)]
pub struct PrioritySchedule {
    pub tiers: [RankingQueue; 5],
    pub elevation_log: Vec<Elevation>,
}

impl PrioritySchedule {
    pub fn tier(&self, class: ServiceClass) -> &RankingQueue {
        &self.tiers[ALL_CLASSES.iter().position(|&c| c == class).unwrap()]
    }

    /// All CIDs in service order (tier by tier).
    pub fn flattened(&self) -> impl Iterator<Item = Cid> + '_ {
        self.tiers.iter().flat_map(|q| q.ordered_cids.iter().copied())
    }
}

/// Time a packet has waited in the MAC queue. A clock inversion means
/// the engine enqueued a packet from the future.
pub fn wait_time(p: &PacketRecord, now_us: u64) -> u64 {
    assert!(
        now_us >= p.arrival_us,
        "clock inversion: packet arrived at {} but now is {}",
        p.arrival_us,
        now_us
    );
    now_us - p.arrival_us
}

/// Remaining tolerable wait before the packet violates its maximum
/// latency; negative once the deadline has passed.
pub fn guard_time(p: &PacketRecord, max_latency_us: u64, now_us: u64) -> i64 {
    max_latency_us as i64 - wait_time(p, now_us) as i64
}

/// Emergent degree: mean guard time over the connection's queued
/// packets. An empty queue reports the full latency budget (maximal
/// slack), which ranks it last.
pub fn emergent_degree(conn: &ConnectionState, now_us: u64) -> f64 {
    let n = conn.queue_len();
    if n == 0 {
        return conn.qos.max_latency_us as f64;
    }
    let sum: i64 = conn
        .packets()
        .map(|p| guard_time(p, conn.qos.max_latency_us, now_us))
        .sum();
    sum as f64 / n as f64
}

/// Normalized urgency 1 - L/Lmax, clamped to [0, 1]: a negative mean
/// slack (packets already past deadline) is maximally urgent. If the
/// maximum degree is not positive every connection is maximally urgent
/// (all 1).
pub fn normalize_degrees(values: &BTreeMap<Cid, f64>) -> BTreeMap<Cid, f64> {
    let l_max = values.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    values
        .iter()
        .map(|(&cid, &l)| {
            let v = if l_max <= 0.0 { 1.0 } else { (1.0 - l / l_max).clamp(0.0, 1.0) };
            (cid, v)
        })
        .collect()
}

/// True when some queued packet is within one frame of its deadline.
fn has_emergent_packet(conn: &ConnectionState, now_us: u64, frame_duration_us: u64) -> bool {
    conn.packets()
        .any(|p| guard_time(p, conn.qos.max_latency_us, now_us) <= frame_duration_us as i64)
}

/// Ranks one DCS class most-urgent-first (ascending mean guard time,
/// ties by ascending CID) and collects the emergent set. UGS has no
/// emergent set; emergency applies to ERT-VR and RT-VR only.
pub fn rank_dcs(
    conns: &[&ConnectionState],
    now_us: u64,
    frame_duration_us: u64,
) -> (RankingQueue, Vec<Cid>) {
    debug_assert!(conns.iter().all(|c| c.class.is_dcs()));
    let class = conns.first().map(|c| c.class).unwrap_or(ServiceClass::Ugs);

    let mut keyed: Vec<(f64, Cid)> =
        conns.iter().map(|c| (emergent_degree(c, now_us), c.cid)).collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let ordered: Vec<Cid> = keyed.into_iter().map(|(_, cid)| cid).collect();

    let emergent = if class == ServiceClass::Ugs {
        Vec::new()
    } else {
        // reported in ranked relative order so elevation preserves it
        ordered
            .iter()
            .copied()
            .filter(|&cid| {
                let c = conns.iter().find(|c| c.cid == cid).unwrap();
                has_emergent_packet(c, now_us, frame_duration_us)
            })
            .collect()
    };
    (RankingQueue { class, ordered_cids: ordered }, emergent)
}

/// Satisfaction ratio for NRT-VR: last-frame served bytes over the
/// last-frame minimum request min(f(m-1), γ·T). A zero minimum request
/// means nothing was owed: fully satisfied (+inf, ranks last). Frame 0
/// has no history and is neutral (1).
pub fn satisfaction_nrt(conn: &ConnectionState, frame_duration_us: u64) -> f64 {
    debug_assert_eq!(conn.class, ServiceClass::NrtVr);
    let Some(prev) = conn.prev else { return 1.0 };
    let min_rate_bytes = crate::types::rate_to_bytes(conn.qos.min_reserved_bps, frame_duration_us);
    let b_low = prev.backlog_bytes.min(min_rate_bytes);
    if b_low == 0 {
        f64::INFINITY
    } else {
        prev.served_bytes as f64 / b_low as f64
    }
}

/// Satisfaction ratio for BE: last-frame served bytes over last-frame
/// backlog. Zero backlog is fully satisfied (+inf).
pub fn satisfaction_be(conn: &ConnectionState) -> f64 {
    debug_assert_eq!(conn.class, ServiceClass::Be);
    let Some(prev) = conn.prev else { return 1.0 };
    if prev.backlog_bytes == 0 {
        f64::INFINITY
    } else {
        prev.served_bytes as f64 / prev.backlog_bytes as f64
    }
}

/// Ranks one TGS class least-satisfied-first (ascending ratio, ties by
/// ascending CID). The starved set (BE only) holds CIDs whose service
/// interrupt counter has reached the threshold.
pub fn rank_tgs(
    conns: &[&ConnectionState],
    eta: u64,
    frame_duration_us: u64,
) -> (RankingQueue, Vec<Cid>) {
    debug_assert!(conns.iter().all(|c| c.class.is_tgs()));
    let class = conns.first().map(|c| c.class).unwrap_or(ServiceClass::NrtVr);

    let mut keyed: Vec<(f64, Cid)> = conns
        .iter()
        .map(|c| {
            let s = match class {
                ServiceClass::NrtVr => satisfaction_nrt(c, frame_duration_us),
                ServiceClass::Be => satisfaction_be(c),
                _ => unreachable!(),
            };
            (s, c.cid)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let ordered: Vec<Cid> = keyed.into_iter().map(|(_, cid)| cid).collect();

    let starved = if class == ServiceClass::Be {
        ordered
            .iter()
            .copied()
            .filter(|&cid| conns.iter().find(|c| c.cid == cid).unwrap().phi >= eta)
            .collect()
    } else {
        Vec::new()
    };
    (RankingQueue { class, ordered_cids: ordered }, starved)
}

/// Next value of the service interrupt counter after a frame.
pub fn update_interrupt_counter(phi: u64, served_bytes: u64) -> u64 {
    if served_bytes > 0 {
        0
    } else {
        phi + 1
    }
}

/// Merges the five ranked queues into the final schedule: emergent
/// ERT-VR CIDs move to the bottom of the UGS tier, emergent RT-VR CIDs
/// to the bottom of the ERT tier, starved BE CIDs to the bottom of the
/// NRT tier. Moves, never copies.
pub fn elevate(
    mut queues: [RankingQueue; 5],
    emergent_ert: &[Cid],
    emergent_rt: &[Cid],
    starved_be: &[Cid],
) -> PrioritySchedule {
    debug_assert!(queues.iter().zip(ALL_CLASSES).all(|(q, c)| q.class == c));
    let mut log = Vec::new();

    let mut promote =
        |queues: &mut [RankingQueue; 5], from: usize, to: usize, cids: &[Cid], reason| {
            for &cid in cids {
                let before = queues[from].ordered_cids.len();
                queues[from].ordered_cids.retain(|&c| c != cid);
                if queues[from].ordered_cids.len() < before {
                    queues[to].ordered_cids.push(cid);
                    log.push(Elevation {
                        cid,
                        from_tier: ALL_CLASSES[from],
                        to_tier: ALL_CLASSES[to],
                        reason,
                    });
                }
            }
        };

    promote(&mut queues, 1, 0, emergent_ert, ElevationReason::Emergent);
    promote(&mut queues, 2, 1, emergent_rt, ElevationReason::Emergent);
    promote(&mut queues, 4, 3, starved_be, ElevationReason::Starved);

    PrioritySchedule { tiers: queues, elevation_log: log }
}

/// Runs the full priority-assignment phase for one frame over the
/// post-arrival queue snapshot.
pub fn assign_priorities(
    conns: &[ConnectionState],
    now_us: u64,
    frame_duration_us: u64,
    eta: u64,
) -> PrioritySchedule {
    let by_class = |class: ServiceClass| -> Vec<&ConnectionState> {
        conns.iter().filter(|c| c.class == class).collect()
    };

    let (mut rq_ugs, _) = rank_dcs(&by_class(ServiceClass::Ugs), now_us, frame_duration_us);
    let (mut rq_ert, eq_ert) = rank_dcs(&by_class(ServiceClass::ErtVr), now_us, frame_duration_us);
    let (mut rq_rt, eq_rt) = rank_dcs(&by_class(ServiceClass::RtVr), now_us, frame_duration_us);
    let (mut rq_nrt, _) = rank_tgs(&by_class(ServiceClass::NrtVr), eta, frame_duration_us);
    let (mut rq_be, starved) = rank_tgs(&by_class(ServiceClass::Be), eta, frame_duration_us);

    // an empty class reports a default tag; pin each queue to its tier
    rq_ugs.class = ServiceClass::Ugs;
    rq_ert.class = ServiceClass::ErtVr;
    rq_rt.class = ServiceClass::RtVr;
    rq_nrt.class = ServiceClass::NrtVr;
    rq_be.class = ServiceClass::Be;

    let queues = [rq_ugs, rq_ert, rq_rt, rq_nrt, rq_be];
    elevate(queues, &eq_ert, &eq_rt, &starved)
}
