//! Reference schedulers for the comparison runs: a QoS-blind global
//! FIFO and a strict-priority deficit round robin (DFPQ).

use serde::{Deserialize, Serialize};

use crate::types::{Cid, ConnectionState, FrameBudget, GrantMap, ServiceClass, ALL_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Apds,
    Fifo,
    Dfpq,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Apds => "apds",
            SchedulerKind::Fifo => "fifo",
            SchedulerKind::Dfpq => "dfpq",
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "apds" => Ok(SchedulerKind::Apds),
            "fifo" => Ok(SchedulerKind::Fifo),
            "dfpq" => Ok(SchedulerKind::Dfpq),
            "scsa" => Err("scheduler 'scsa' is not supported".into()),
            other => Err(format!("unknown scheduler '{other}'")),
        }
    }
}

/// One shared buffer ordered by arrival time (ties by CID), served
/// head-first with no skipping: the first packet that does not fit the
/// remaining budget blocks everything behind it.
pub fn fifo_schedule(conns: &[ConnectionState], frame: &FrameBudget) -> GrantMap {
    let mut merged: Vec<(u64, Cid, u64)> = conns
        .iter()
        .flat_map(|c| c.packets().map(|p| (p.arrival_us, p.cid, p.size_bytes)))
        .collect();
    merged.sort_unstable();

    let mut grants = GrantMap::new();
    let mut rem = frame.total_bytes;
    for (_, cid, size) in merged {
        if size > rem {
            break;
        }
        grants.add(cid, size);
        rem -= size;
    }
    grants
}

/// Per-class quanta as fractions of the frame budget. Artifact
/// defaults; overridable from the scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfpqConfig {
    pub ugs: f64,
    pub ert_vr: f64,
    pub rt_vr: f64,
    pub nrt_vr: f64,
    pub be: f64,
}

impl Default for DfpqConfig {
    fn default() -> Self {
        DfpqConfig { ugs: 0.3, ert_vr: 0.25, rt_vr: 0.2, nrt_vr: 0.15, be: 0.1 }
    }
}

impl DfpqConfig {
    fn weight(&self, class: ServiceClass) -> f64 {
        match class {
            ServiceClass::Ugs => self.ugs,
            ServiceClass::ErtVr => self.ert_vr,
            ServiceClass::RtVr => self.rt_vr,
            ServiceClass::NrtVr => self.nrt_vr,
            ServiceClass::Be => self.be,
        }
    }
}

/// Deficit and round-robin position per class, carried across frames.
#[derive(Debug, Clone)]
pub struct DfpqState {
    quanta: [u64; 5],
    deficits: [u64; 5],
    cursors: [usize; 5],
}

impl DfpqState {
    pub fn new(config: &DfpqConfig, total_bytes: u64) -> Self {
        let mut quanta = [0u64; 5];
        for (i, class) in ALL_CLASSES.into_iter().enumerate() {
            quanta[i] = ((total_bytes as f64 * config.weight(class)).floor() as u64).max(1);
        }
        DfpqState { quanta, deficits: [0; 5], cursors: [0; 5] }
    }

    /// Classes in strict priority order; round robin over the class's
    /// connections, one whole packet per visit, while both the class
    /// deficit and the frame budget allow. Leftover deficit carries
    /// over, capped at one quantum.
    pub fn schedule(&mut self, conns: &[ConnectionState], frame: &FrameBudget) -> GrantMap {
        let mut grants = GrantMap::new();
        let mut rem = frame.total_bytes;

        for (ci, class) in ALL_CLASSES.into_iter().enumerate() {
            self.deficits[ci] += self.quanta[ci];

            let members: Vec<&ConnectionState> =
                conns.iter().filter(|c| c.class == class).collect();
            if !members.is_empty() {
                // virtual head position per member; grants are always a
                // prefix of each connection's queue
                let mut taken = vec![0usize; members.len()];
                let mut cursor = self.cursors[ci] % members.len();
                let mut idle_visits = 0;
                while idle_visits < members.len() && rem > 0 && self.deficits[ci] > 0 {
                    let m = members[cursor];
                    let next = m.packets().nth(taken[cursor]);
                    match next {
                        Some(p)
                            if p.size_bytes <= rem && p.size_bytes <= self.deficits[ci] =>
                        {
                            grants.add(m.cid, p.size_bytes);
                            rem -= p.size_bytes;
                            self.deficits[ci] -= p.size_bytes;
                            taken[cursor] += 1;
                            idle_visits = 0;
                        }
                        _ => idle_visits += 1,
                    }
                    cursor = (cursor + 1) % members.len();
                }
                self.cursors[ci] = cursor;
            }

            self.deficits[ci] = self.deficits[ci].min(self.quanta[ci]);
        }
        grants
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PacketRecord, QosProfile};

    fn qos(size: u64) -> QosProfile {
        QosProfile {
            max_sustained_bps: 1_000_000,
            min_reserved_bps: 0,
            max_latency_us: 50_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: size,
        }
    }

    fn conn(cid: u32, class: ServiceClass, pkts: &[(u64, u64)]) -> ConnectionState {
        let mut c = ConnectionState::new(Cid(cid), class, qos(160), 1_000);
        for &(t, size) in pkts {
            c.try_enqueue(PacketRecord { cid: Cid(cid), arrival_us: t, size_bytes: size });
        }
        c
    }

    fn frame(total: u64) -> FrameBudget {
        FrameBudget::new(0, 5_000, total)
    }

    #[test]
    fn fifo_head_of_line_blocking() {
        let conns = vec![
            conn(1, ServiceClass::Be, &[(0, 160)]),
            conn(2, ServiceClass::Be, &[(1, 240)]),
        ];
        let g = fifo_schedule(&conns, &frame(300));
        assert_eq!(g.get(Cid(1)), 160);
        assert_eq!(g.get(Cid(2)), 0);
    }

    #[test]
    fn fifo_drains_everything_with_room() {
        let conns = vec![
            conn(1, ServiceClass::Ugs, &[(0, 160), (10, 160)]),
            conn(2, ServiceClass::Be, &[(5, 120)]),
        ];
        let g = fifo_schedule(&conns, &frame(6_250));
        assert_eq!(g.total(), 440);
    }

    #[test]
    fn fifo_empty_system() {
        let g = fifo_schedule(&[], &frame(6_250));
        assert_eq!(g.total(), 0);
    }

    #[test]
    fn fifo_ties_broken_by_cid() {
        let conns = vec![
            conn(9, ServiceClass::Be, &[(0, 200)]),
            conn(2, ServiceClass::Be, &[(0, 200)]),
        ];
        let g = fifo_schedule(&conns, &frame(200));
        assert_eq!(g.get(Cid(2)), 200);
        assert_eq!(g.get(Cid(9)), 0);
    }

    #[test]
    fn dfpq_long_run_round_robin_fairness() {
        // two BE connections with standing backlog share the class quantum
        let mut state = DfpqState::new(&DfpqConfig::default(), 5_000);
        let mut served = [0u64; 2];
        for f in 0..100 {
            let conns = vec![
                conn(1, ServiceClass::Be, &[(0, 160); 50]),
                conn(2, ServiceClass::Be, &[(0, 160); 50]),
            ];
            let g = state.schedule(&conns, &FrameBudget::new(f, 5_000, 5_000));
            served[0] += g.get(Cid(1));
            served[1] += g.get(Cid(2));
        }
        let diff = served[0].abs_diff(served[1]);
        assert!(diff <= 160, "served {served:?}");
        assert!(served[0] + served[1] > 0);
    }

    #[test]
    fn dfpq_deficit_caps_with_no_backlog() {
        let mut state = DfpqState::new(&DfpqConfig::default(), 1_000);
        for f in 0..5 {
            let g = state.schedule(&[], &FrameBudget::new(f, 5_000, 1_000));
            assert_eq!(g.total(), 0);
        }
        for (i, d) in state.deficits.iter().enumerate() {
            assert_eq!(*d, state.quanta[i]);
        }
    }

    #[test]
    fn dfpq_strict_class_priority() {
        // quanta are ample; the frame budget fits only the UGS packet
        let mut state = DfpqState::new(&DfpqConfig::default(), 2_000);
        let conns = vec![
            conn(5, ServiceClass::Be, &[(0, 120)]),
            conn(1, ServiceClass::Ugs, &[(0, 120)]),
        ];
        let g = state.schedule(&conns, &frame(120));
        assert_eq!(g.get(Cid(1)), 120);
        assert_eq!(g.get(Cid(5)), 0);
    }

    #[test]
    fn dfpq_reset_reproduces_run() {
        let run = || {
            let mut state = DfpqState::new(&DfpqConfig::default(), 2_000);
            let mut out = Vec::new();
            for f in 0..20 {
                let conns = vec![
                    conn(1, ServiceClass::RtVr, &[(0, 240); 10]),
                    conn(2, ServiceClass::RtVr, &[(0, 240); 10]),
                ];
                out.push(state.schedule(&conns, &FrameBudget::new(f, 5_000, 800)));
            }
            out
        };
        assert_eq!(run(), run());
    }
}
