//! The frame loop: generate traffic, snapshot queues, run the selected
//! scheduler, serve grants against the queues, and update history and
//! counters.
//!
//! Scheduling is non-work-conserving: grants are fixed before service
//! and unused budget in one queue is never reassigned mid-frame.
//! Packets arriving in frame m are eligible in frame m (the snapshot is
//! taken after enqueue), and scheduling decisions are evaluated at the
//! frame-end epoch, which is also the delivery timestamp.

use crate::allocation::{allocate, WpfWeights};
use crate::baselines::{fifo_schedule, DfpqState, SchedulerKind};
use crate::error::SimError;
use crate::priority::{assign_priorities, update_interrupt_counter, Elevation};
use crate::scenario::Scenario;
use crate::traffic::{enqueue_with_drop, TrafficSource};
use crate::types::{
    Cid, ConnectionState, FrameBudget, FrameHistory, GrantMap, ServiceClass,
};

/// Per-connection accounting for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnFrameStats {
    pub cid: Cid,
    pub class: ServiceClass,
    pub offered_bytes: u64,
    /// Backlog at the scheduling snapshot (post-arrival, pre-service).
    pub backlog_at_schedule: u64,
    pub grant_bytes: u64,
    pub served_bytes: u64,
    pub served_packets: u64,
    pub dropped_packets: u64,
    /// Sum of delays of the packets served this frame, microseconds.
    pub delay_sum_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStats {
    pub frame_index: u64,
    pub total_budget_bytes: u64,
    pub per_conn: Vec<ConnFrameStats>,
}

/// Final per-connection state of a run, for conservation checks.
#[derive(Debug, Clone, Copy)]
pub struct ConnSummary {
    pub cid: Cid,
    pub class: ServiceClass,
    pub final_backlog_bytes: u64,
    pub stats: crate::types::ConnStats,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheduler: SchedulerKind,
    pub frames: Vec<FrameStats>,
    /// Elevation events with the frame in which they occurred (APDS only).
    pub elevations: Vec<(u64, Elevation)>,
    pub connections: Vec<ConnSummary>,
}

enum SchedulerImpl {
    Apds { eta: u64, weights: WpfWeights },
    Fifo,
    Dfpq(DfpqState),
}

/// One simulation in progress; strictly sequential frame by frame.
pub struct SimState {
    conns: Vec<ConnectionState>,
    sources: Vec<TrafficSource>,
    scheduler: SchedulerImpl,
    frame_duration_us: u64,
    budget_bytes: u64,
    next_frame: u64,
    elevations: Vec<(u64, Elevation)>,
}

impl SimState {
    pub fn new(scenario: &Scenario) -> Result<SimState, SimError> {
        Self::with_scheduler(scenario, scenario.scheduler)
    }

    pub fn with_scheduler(
        scenario: &Scenario,
        kind: SchedulerKind,
    ) -> Result<SimState, SimError> {
        let budget = scenario.bytes_per_frame();
        let conns: Vec<ConnectionState> = scenario
            .connections
            .iter()
            .map(|c| ConnectionState::new(c.cid, c.class, c.qos, scenario.queue_capacity))
            .collect();
        let sources: Vec<TrafficSource> = scenario
            .connections
            .iter()
            .map(|c| {
                TrafficSource::new(
                    c.cid,
                    c.qos.packet_size_bytes,
                    c.traffic,
                    scenario.seed,
                    scenario.frame_duration_us,
                )
            })
            .collect();
        let scheduler = match kind {
            SchedulerKind::Apds => {
                SchedulerImpl::Apds { eta: scenario.eta, weights: scenario.weights }
            }
            SchedulerKind::Fifo => SchedulerImpl::Fifo,
            SchedulerKind::Dfpq => SchedulerImpl::Dfpq(DfpqState::new(&scenario.dfpq, budget)),
        };
        Ok(SimState {
            conns,
            sources,
            scheduler,
            frame_duration_us: scenario.frame_duration_us,
            budget_bytes: budget,
            next_frame: 0,
            elevations: Vec::new(),
        })
    }

    pub fn connections(&self) -> &[ConnectionState] {
        &self.conns
    }

    /// Advances the simulation by one frame.
    pub fn run_frame(&mut self) -> Result<FrameStats, SimError> {
        let frame =
            FrameBudget::new(self.next_frame, self.frame_duration_us, self.budget_bytes);
        self.next_frame += 1;

        // 1. arrivals and finite-queue drops
        let mut offered = vec![0u64; self.conns.len()];
        let mut dropped = vec![0u64; self.conns.len()];
        for (i, (conn, src)) in self.conns.iter_mut().zip(&mut self.sources).enumerate() {
            let pkts = src.generate_arrivals(&frame);
            offered[i] = pkts.iter().map(|p| p.size_bytes).sum();
            dropped[i] = enqueue_with_drop(conn, &pkts);
        }

        // 2. snapshot (post-arrival, pre-service)
        let snapshot: Vec<u64> = self.conns.iter().map(|c| c.backlog_bytes()).collect();

        // 3 + 4. ranking and allocation at the frame-end epoch
        let sched_now = frame.now_us + frame.frame_duration_us;
        let grants: GrantMap = match &mut self.scheduler {
            SchedulerImpl::Apds { eta, weights } => {
                let schedule =
                    assign_priorities(&self.conns, sched_now, frame.frame_duration_us, *eta);
                for ev in &schedule.elevation_log {
                    self.elevations.push((frame.frame_index, *ev));
                }
                allocate(&frame, &schedule, &self.conns, weights)
            }
            SchedulerImpl::Fifo => fifo_schedule(&self.conns, &frame),
            SchedulerImpl::Dfpq(state) => state.schedule(&self.conns, &frame),
        };

        // 5. serve grants
        let served = serve_grants(&mut self.conns, &grants, sched_now)?;

        // 6. history and interrupt counters
        let mut per_conn = Vec::with_capacity(self.conns.len());
        for (i, conn) in self.conns.iter_mut().enumerate() {
            let (served_bytes, served_packets, delay_sum) = served[i];
            conn.prev =
                Some(FrameHistory { backlog_bytes: snapshot[i], served_bytes });
            if conn.class.is_tgs() {
                conn.phi = update_interrupt_counter(conn.phi, served_bytes);
            }
            conn.stats.served_bytes += served_bytes;
            conn.stats.served_packets += served_packets;
            conn.stats.delay_sum_us += delay_sum;
            per_conn.push(ConnFrameStats {
                cid: conn.cid,
                class: conn.class,
                offered_bytes: offered[i],
                backlog_at_schedule: snapshot[i],
                grant_bytes: grants.get(conn.cid),
                served_bytes,
                served_packets,
                dropped_packets: dropped[i],
                delay_sum_us: delay_sum,
            });
        }

        Ok(FrameStats {
            frame_index: frame.frame_index,
            total_budget_bytes: frame.total_bytes,
            per_conn,
        })
    }

    fn finish(self, scheduler: SchedulerKind, frames: Vec<FrameStats>) -> RunResult {
        RunResult {
            scheduler,
            frames,
            elevations: self.elevations,
            connections: self
                .conns
                .iter()
                .map(|c| ConnSummary {
                    cid: c.cid,
                    class: c.class,
                    final_backlog_bytes: c.backlog_bytes(),
                    stats: c.stats,
                })
                .collect(),
        }
    }
}

/// Dequeues whole packets head-first against each grant; residual grant
/// bytes are surrendered. Served packets are delivered at the frame-end
/// epoch `deliver_at_us`.
fn serve_grants(
    conns: &mut [ConnectionState],
    grants: &GrantMap,
    deliver_at_us: u64,
) -> Result<Vec<(u64, u64, u64)>, SimError> {
    for (cid, _) in grants.iter() {
        if !conns.iter().any(|c| c.cid == cid) {
            return Err(SimError::UnknownGrant(cid));
        }
    }
    let mut out = Vec::with_capacity(conns.len());
    for conn in conns.iter_mut() {
        let mut budget = grants.get(conn.cid);
        let mut bytes = 0u64;
        let mut packets = 0u64;
        let mut delay = 0u64;
        while let Some(p) = conn.pop_if_fits(budget) {
            budget -= p.size_bytes;
            bytes += p.size_bytes;
            packets += 1;
            delay += deliver_at_us - p.arrival_us;
        }
        out.push((bytes, packets, delay));
    }
    Ok(out)
}

/// Runs a scenario to completion with its configured scheduler.
pub fn run_simulation(scenario: &Scenario) -> Result<RunResult, SimError> {
    run_with_scheduler(scenario, scenario.scheduler)
}

/// Runs a scenario to completion with an explicit scheduler.
pub fn run_with_scheduler(
    scenario: &Scenario,
    kind: SchedulerKind,
) -> Result<RunResult, SimError> {
    let mut sim = SimState::with_scheduler(scenario, kind)?;
    let mut frames = Vec::with_capacity(scenario.num_frames as usize);
    for _ in 0..scenario.num_frames {
        frames.push(sim.run_frame()?);
    }
    Ok(sim.finish(kind, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PacketRecord;

    fn tiny_scenario(scheduler: &str) -> Scenario {
        let text = format!(
            r#"
link = 10_000_000
frame = 5000
duration = 50
queue_capacity = 100
eta = 50
seed = 7
scheduler = "{scheduler}"

[[connections]]
cid = 1
class = "ugs"
max_sustained = 256000
min_reserved = 256000
max_latency = 20000
packet_size = 160
traffic = {{ kind = "cbr", mean_rate = 256000 }}

[[connections]]
cid = 2
class = "be"
max_sustained = 512000
max_latency = 100000
packet_size = 120
traffic = {{ kind = "poisson", mean_rate = 240000 }}
"#
        );
        Scenario::from_toml(&text).unwrap()
    }

    #[test]
    fn serve_grants_whole_packets_only() {
        let qos = crate::types::QosProfile {
            max_sustained_bps: 1_000_000,
            min_reserved_bps: 500_000,
            max_latency_us: 20_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: 160,
        };
        let mut conns = vec![ConnectionState::new(
            Cid(1),
            ServiceClass::Ugs,
            qos,
            10,
        )];
        for k in 0..3 {
            conns[0].try_enqueue(PacketRecord { cid: Cid(1), arrival_us: k, size_bytes: 160 });
        }
        let mut grants = GrantMap::new();
        grants.set(Cid(1), 400);
        let served = serve_grants(&mut conns, &grants, 5_000).unwrap();
        assert_eq!(served[0].0, 320); // 2 whole packets, 80 bytes surrendered
        assert_eq!(served[0].1, 2);
        assert_eq!(conns[0].backlog_bytes(), 160);
    }

    #[test]
    fn serve_grants_zero_and_drain() {
        let qos = crate::types::QosProfile {
            max_sustained_bps: 1_000_000,
            min_reserved_bps: 500_000,
            max_latency_us: 20_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: 160,
        };
        let mut conns = vec![ConnectionState::new(Cid(1), ServiceClass::Ugs, qos, 10)];
        conns[0].try_enqueue(PacketRecord { cid: Cid(1), arrival_us: 0, size_bytes: 160 });
        let served = serve_grants(&mut conns, &GrantMap::new(), 5_000).unwrap();
        assert_eq!(served[0], (0, 0, 0));
        let mut grants = GrantMap::new();
        grants.set(Cid(1), 10_000);
        let served = serve_grants(&mut conns, &grants, 5_000).unwrap();
        assert_eq!(served[0].0, 160);
        assert_eq!(conns[0].backlog_bytes(), 0);
    }

    #[test]
    fn serve_grants_unknown_cid_is_hard_error() {
        let mut grants = GrantMap::new();
        grants.set(Cid(99), 100);
        assert!(serve_grants(&mut [], &grants, 0).is_err());
    }

    #[test]
    fn run_produces_requested_frame_count() {
        let s = tiny_scenario("apds");
        let r = run_simulation(&s).unwrap();
        assert_eq!(r.frames.len(), 50);
        let single = Scenario::from_toml(
            &crate::scenario::REFERENCE_SCENARIO_TOML.replace("duration = 2_000", "duration = 1"),
        )
        .unwrap();
        assert_eq!(run_simulation(&single).unwrap().frames.len(), 1);
    }

    #[test]
    fn deterministic_replay() {
        for sched in ["apds", "fifo", "dfpq"] {
            let s = tiny_scenario(sched);
            let a = run_simulation(&s).unwrap();
            let b = run_simulation(&s).unwrap();
            assert_eq!(a.frames, b.frames, "{sched}");
        }
    }

    #[test]
    fn byte_conservation_per_connection() {
        for sched in ["apds", "fifo", "dfpq"] {
            let s = tiny_scenario(sched);
            let r = run_simulation(&s).unwrap();
            for c in &r.connections {
                assert_eq!(
                    c.stats.offered_bytes,
                    c.stats.served_bytes + c.stats.dropped_bytes + c.final_backlog_bytes,
                    "{sched} cid {}",
                    c.cid
                );
            }
        }
    }

    #[test]
    fn ugs_at_reserved_rate_is_fully_served() {
        // ample budget, offered exactly gamma*T per frame: steady state
        let s = tiny_scenario("apds");
        let r = run_simulation(&s).unwrap();
        for f in &r.frames {
            let ugs = &f.per_conn[0];
            assert_eq!(ugs.served_bytes, ugs.offered_bytes, "frame {}", f.frame_index);
        }
    }

    #[test]
    fn grants_never_exceed_budget_or_backlog() {
        for sched in ["apds", "fifo", "dfpq"] {
            let s = tiny_scenario(sched);
            let r = run_simulation(&s).unwrap();
            for f in &r.frames {
                let total: u64 = f.per_conn.iter().map(|c| c.grant_bytes).sum();
                assert!(total <= f.total_budget_bytes);
                for c in &f.per_conn {
                    assert!(c.grant_bytes <= c.backlog_at_schedule, "{sched}");
                }
            }
        }
    }
}
