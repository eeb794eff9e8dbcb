//! Phase 2 of the adaptive scheduler: per-connection bandwidth bounds,
//! per-class demand sums, and the three-case allocation with
//! weight-based proportional fairness for the throughput classes.
//!
//! All proportional splits integerize with largest-remainder rounding,
//! remainder ties broken by ascending CID, so byte totals are exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::priority::PrioritySchedule;
use crate::types::{
    rate_to_bytes, Cid, ConnectionState, FrameBudget, GrantMap, ServiceClass, ALL_CLASSES,
};

/// Per-connection byte bounds for one frame: 0 <= b_min <= b_max <= backlog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnBounds {
    pub cid: Cid,
    pub class: ServiceClass,
    pub b_min: u64,
    pub b_max: u64,
    /// Queued bytes this frame, f_i(m).
    pub backlog: u64,
}

/// Per-class and total demand sums. The BE lower bound is defined as
/// its upper bound, so `min_req` already contains the BE maximum.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandSummary {
    pub max_by_class: BTreeMap<ServiceClass, u64>,
    pub min_by_class: BTreeMap<ServiceClass, u64>,
    pub max_req: u64,
    pub min_req: u64,
}

/// Weights blending the demand share and the starvation share when
/// splitting residual bandwidth: (ω1, ω2) for BE, (ϖ1, ϖ2) for NRT-VR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpfWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub varpi1: f64,
    pub varpi2: f64,
}

impl Default for WpfWeights {
    fn default() -> Self {
        WpfWeights { omega1: 0.6, omega2: 0.4, varpi1: 0.6, varpi2: 0.4 }
    }
}

impl WpfWeights {
    pub fn validate(&self) -> Result<(), crate::error::SimError> {
        let ok = |a: f64, b: f64| a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() < 1e-9;
        if !ok(self.omega1, self.omega2) || !ok(self.varpi1, self.varpi2) {
            return Err(crate::error::SimError::Scenario(
                "wpf weight pairs must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationCase {
    CaseI,
    CaseII,
    CaseIII,
}

/// Bounds for one frame: b_max = min(f, Γ·T), b_min = min(f, γ·T),
/// except BE where the lower bound is replaced by the upper bound.
pub fn conn_bounds(conn: &ConnectionState, frame_duration_us: u64) -> ConnBounds {
    let f = conn.backlog_bytes();
    let b_max = f.min(rate_to_bytes(conn.qos.max_sustained_bps, frame_duration_us));
    let b_min = if conn.class == ServiceClass::Be {
        b_max
    } else {
        f.min(rate_to_bytes(conn.qos.min_reserved_bps, frame_duration_us))
    };
    ConnBounds { cid: conn.cid, class: conn.class, b_min, b_max, backlog: f }
}

pub fn summarize_demand(bounds: &[ConnBounds]) -> DemandSummary {
    let mut s = DemandSummary::default();
    for c in ALL_CLASSES {
        s.max_by_class.insert(c, 0);
        s.min_by_class.insert(c, 0);
    }
    for b in bounds {
        *s.max_by_class.get_mut(&b.class).unwrap() += b.b_max;
        *s.min_by_class.get_mut(&b.class).unwrap() += b.b_min;
    }
    s.max_req = s.max_by_class.values().sum();
    s.min_req = s.min_by_class.values().sum();
    s
}

/// Case I iff the budget strictly exceeds all upper bounds, Case III iff
/// it is strictly below all lower bounds, Case II otherwise. Boundary
/// budgets fall to Case II.
pub fn select_case(summary: &DemandSummary, total_bytes: u64) -> AllocationCase {
    if total_bytes > summary.max_req {
        AllocationCase::CaseI
    } else if total_bytes < summary.min_req {
        AllocationCase::CaseIII
    } else {
        AllocationCase::CaseII
    }
}

/// Splits `target` bytes proportionally to integer weights with
/// largest-remainder rounding, remainder ties by ascending CID. The
/// result sums to `target` exactly when the weights allow it (callers
/// guarantee target <= sum of weights).
fn split_largest_remainder(items: &[(Cid, u64)], target: u64) -> BTreeMap<Cid, u64> {
    let denom: u128 = items.iter().map(|&(_, w)| w as u128).sum();
    let mut out: BTreeMap<Cid, u64> = items.iter().map(|&(cid, _)| (cid, 0)).collect();
    if denom == 0 || target == 0 {
        return out;
    }
    debug_assert!(target as u128 <= denom);
    let mut floors = 0u64;
    let mut rems: Vec<(u128, Cid)> = Vec::with_capacity(items.len());
    for &(cid, w) in items {
        let num = target as u128 * w as u128;
        let q = (num / denom) as u64;
        out.insert(cid, q);
        floors += q;
        rems.push((num % denom, cid));
    }
    let mut leftover = target - floors;
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (rem, cid) in rems {
        if leftover == 0 {
            break;
        }
        // zero remainder means the quota was integral; nothing is owed
        if rem == 0 {
            break;
        }
        *out.get_mut(&cid).unwrap() += 1;
        leftover -= 1;
    }
    out
}

/// Budget exceeds every upper bound: grant b_max everywhere, then split
/// the residual over connections with leftover backlog proportionally
/// to that leftover, capped at the backlog.
pub fn allocate_case1(bounds: &[ConnBounds], total_bytes: u64) -> GrantMap {
    let mut grants = GrantMap::new();
    let mut rem = total_bytes;
    for b in bounds {
        grants.set(b.cid, b.b_max);
        rem -= b.b_max;
    }
    let residual: Vec<(Cid, u64)> = bounds
        .iter()
        .filter(|b| b.backlog > b.b_max)
        .map(|b| (b.cid, b.backlog - b.b_max))
        .collect();
    let pool: u64 = residual.iter().map(|&(_, r)| r).sum();
    if pool == 0 {
        return grants;
    }
    if rem >= pool {
        // every backlog fits; the rest of the budget stays unused
        for (cid, r) in residual {
            grants.add(cid, r);
        }
    } else {
        for (cid, extra) in split_largest_remainder(&residual, rem) {
            grants.add(cid, extra);
        }
    }
    grants
}

/// Budget between the bound totals: grant b_min everywhere plus a share
/// of the slack proportional to (b_max - b_min). Sums to the budget
/// exactly.
pub fn allocate_case2(bounds: &[ConnBounds], total_bytes: u64) -> GrantMap {
    let mut grants = GrantMap::new();
    let mut min_sum = 0u64;
    for b in bounds {
        grants.set(b.cid, b.b_min);
        min_sum += b.b_min;
    }
    let rem = total_bytes - min_sum;
    if rem == 0 {
        return grants;
    }
    let spreads: Vec<(Cid, u64)> =
        bounds.iter().map(|b| (b.cid, b.b_max - b.b_min)).collect();
    for (cid, extra) in split_largest_remainder(&spreads, rem) {
        grants.add(cid, extra);
    }
    grants
}

/// Raw weighted share of `rem_bytes` for one connection: the demand
/// fraction weighted by w1 plus the starvation fraction weighted by w2.
/// With no accumulated starvation the full weight moves to the demand
/// term; a class with zero demand gets nothing.
pub fn wpf_share(
    b_max: u64,
    b_max_class: u64,
    phi: u64,
    phi_sum: u64,
    weights: (f64, f64),
    rem_bytes: u64,
) -> f64 {
    if b_max_class == 0 {
        return 0.0;
    }
    let (w1, w2) = weights;
    let demand = b_max as f64 / b_max_class as f64;
    let share = if phi_sum == 0 {
        demand * (w1 + w2)
    } else {
        demand * w1 + (phi as f64 / phi_sum as f64) * w2
    };
    share * rem_bytes as f64
}

/// Integerizes raw WPF shares with largest-remainder rounding, then
/// caps each grant at the connection's upper bound. Capped surplus is
/// not redistributed.
fn wpf_distribute(
    pool: &[&ConnBounds],
    phis: &BTreeMap<Cid, u64>,
    weights: (f64, f64),
    rem_bytes: u64,
) -> BTreeMap<Cid, u64> {
    let b_max_class: u64 = pool.iter().map(|b| b.b_max).sum();
    let phi_sum: u64 = pool.iter().map(|b| phis.get(&b.cid).copied().unwrap_or(0)).sum();
    let mut out: BTreeMap<Cid, u64> = pool.iter().map(|b| (b.cid, 0)).collect();
    if b_max_class == 0 || rem_bytes == 0 {
        return out;
    }

    let mut floors = 0u64;
    let mut fracs: Vec<(f64, Cid)> = Vec::with_capacity(pool.len());
    for b in pool {
        let phi = phis.get(&b.cid).copied().unwrap_or(0);
        let raw = wpf_share(b.b_max, b_max_class, phi, phi_sum, weights, rem_bytes);
        let fl = raw.floor() as u64;
        out.insert(b.cid, fl);
        floors += fl;
        fracs.push((raw - fl as f64, b.cid));
    }
    let mut leftover = rem_bytes.saturating_sub(floors);
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    while leftover > 0 {
        let mut gave = false;
        for &(_, cid) in &fracs {
            if leftover == 0 {
                break;
            }
            *out.get_mut(&cid).unwrap() += 1;
            leftover -= 1;
            gave = true;
        }
        if !gave {
            break;
        }
    }
    for b in pool {
        let g = out.get_mut(&b.cid).unwrap();
        *g = (*g).min(b.b_max);
    }
    out
}

/// Budget below the lower-bound total: walk the delay-constrained tiers
/// in schedule order granting lower bounds until the budget runs out,
/// then spend any remainder on the throughput classes via WPF.
pub fn allocate_case3(
    schedule: &PrioritySchedule,
    bounds: &[ConnBounds],
    phis: &BTreeMap<Cid, u64>,
    weights: &WpfWeights,
    total_bytes: u64,
) -> GrantMap {
    let by_cid: BTreeMap<Cid, &ConnBounds> = bounds.iter().map(|b| (b.cid, b)).collect();
    let mut grants = GrantMap::new();
    for b in bounds {
        grants.set(b.cid, 0);
    }
    let mut rem = total_bytes;

    // DCS walk over the elevated ordering: UGS tier, ERT tier, RT tier
    for tier in &schedule.tiers[0..3] {
        for &cid in &tier.ordered_cids {
            let b = by_cid[&cid];
            let g = b.b_min.min(rem);
            grants.set(cid, g);
            rem -= g;
        }
    }
    if rem == 0 {
        return grants;
    }

    // the NRT lower-bound loop covers true NRT-VR connections only;
    // elevated BE connections have no lower bound and join the BE pool
    let nrt: Vec<&ConnBounds> =
        bounds.iter().filter(|b| b.class == ServiceClass::NrtVr).collect();
    let be: Vec<&ConnBounds> = bounds.iter().filter(|b| b.class == ServiceClass::Be).collect();
    let nrt_min: u64 = nrt.iter().map(|b| b.b_min).sum();

    if rem > nrt_min {
        for b in &nrt {
            grants.set(b.cid, b.b_min);
            rem -= b.b_min;
        }
        for (cid, g) in wpf_distribute(&be, phis, (weights.omega1, weights.omega2), rem) {
            grants.set(cid, g);
        }
    } else {
        for (cid, g) in wpf_distribute(&nrt, phis, (weights.varpi1, weights.varpi2), rem) {
            grants.set(cid, g);
        }
    }
    grants
}

/// Computes bounds and demand for the frame and dispatches to the
/// matching case allocator.
pub fn allocate(
    frame: &FrameBudget,
    schedule: &PrioritySchedule,
    conns: &[ConnectionState],
    weights: &WpfWeights,
) -> GrantMap {
    let bounds: Vec<ConnBounds> =
        conns.iter().map(|c| conn_bounds(c, frame.frame_duration_us)).collect();
    let summary = summarize_demand(&bounds);
    match select_case(&summary, frame.total_bytes) {
        AllocationCase::CaseI => allocate_case1(&bounds, frame.total_bytes),
        AllocationCase::CaseII => allocate_case2(&bounds, frame.total_bytes),
        AllocationCase::CaseIII => {
            let phis: BTreeMap<Cid, u64> = conns.iter().map(|c| (c.cid, c.phi)).collect();
            allocate_case3(schedule, &bounds, &phis, weights, frame.total_bytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priority::{elevate, RankingQueue};
    use crate::types::QosProfile;

    fn bounds(cid: u32, class: ServiceClass, b_min: u64, b_max: u64, f: u64) -> ConnBounds {
        ConnBounds { cid: Cid(cid), class, b_min, b_max, backlog: f }
    }

    #[test]
    fn conn_bounds_ugs() {
        // f=2000, Gamma*T=1500, gamma*T=800
        let qos = QosProfile {
            max_sustained_bps: 2_400_000,
            min_reserved_bps: 1_280_000,
            max_latency_us: 20_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: 100,
        };
        let mut c = ConnectionState::new(Cid(1), ServiceClass::Ugs, qos, 1000);
        for k in 0..20 {
            c.try_enqueue(crate::types::PacketRecord {
                cid: Cid(1),
                arrival_us: k,
                size_bytes: 100,
            });
        }
        let b = conn_bounds(&c, 5_000);
        assert_eq!((b.b_min, b.b_max), (800, 1_500));
    }

    #[test]
    fn conn_bounds_zero_backlog() {
        let qos = QosProfile {
            max_sustained_bps: 2_400_000,
            min_reserved_bps: 1_280_000,
            max_latency_us: 20_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: 100,
        };
        let c = ConnectionState::new(Cid(1), ServiceClass::RtVr, qos, 10);
        let b = conn_bounds(&c, 5_000);
        assert_eq!((b.b_min, b.b_max), (0, 0));
    }

    #[test]
    fn conn_bounds_be_lower_equals_upper() {
        // f=500 < Gamma*T=900
        let qos = QosProfile {
            max_sustained_bps: 1_440_000,
            min_reserved_bps: 0,
            max_latency_us: 20_000,
            grant_interval_us: 0,
            tolerated_jitter_us: 0,
            packet_size_bytes: 100,
        };
        let mut c = ConnectionState::new(Cid(9), ServiceClass::Be, qos, 10);
        for k in 0..5 {
            c.try_enqueue(crate::types::PacketRecord {
                cid: Cid(9),
                arrival_us: k,
                size_bytes: 100,
            });
        }
        let b = conn_bounds(&c, 5_000);
        assert_eq!((b.b_min, b.b_max), (500, 500));
    }

    #[test]
    fn summary_sums_per_class_and_totals() {
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 800, 1_500, 2_000),
            bounds(2, ServiceClass::Ugs, 500, 1_000, 1_200),
            bounds(3, ServiceClass::Be, 400, 400, 900),
        ];
        let s = summarize_demand(&bs);
        assert_eq!(s.max_by_class[&ServiceClass::Ugs], 2_500);
        assert_eq!(s.max_req, 2_900);
        // the BE upper bound feeds the lower-bound total
        assert_eq!(s.min_req, 800 + 500 + 400);
    }

    #[test]
    fn summary_empty() {
        let s = summarize_demand(&[]);
        assert_eq!(s.max_req, 0);
        assert_eq!(s.min_req, 0);
    }

    #[test]
    fn case_selection_with_boundaries() {
        let mut s = DemandSummary::default();
        s.max_req = 5_000;
        s.min_req = 2_000;
        assert_eq!(select_case(&s, 6_250), AllocationCase::CaseI);
        assert_eq!(select_case(&s, 5_000), AllocationCase::CaseII);
        assert_eq!(select_case(&s, 2_000), AllocationCase::CaseII);
        assert_eq!(select_case(&s, 1_999), AllocationCase::CaseIII);
    }

    #[test]
    fn case1_residual_to_backlogged() {
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 50, 100, 150),
            bounds(2, ServiceClass::Ugs, 50, 100, 100),
        ];
        let g = allocate_case1(&bs, 230);
        assert_eq!(g.get(Cid(1)), 130);
        assert_eq!(g.get(Cid(2)), 100);
    }

    #[test]
    fn case1_no_residual_pool() {
        let bs = vec![bounds(1, ServiceClass::Ugs, 50, 100, 100)];
        let g = allocate_case1(&bs, 500);
        assert_eq!(g.get(Cid(1)), 100);
    }

    #[test]
    fn case1_caps_at_backlog() {
        let bs = vec![bounds(1, ServiceClass::Ugs, 50, 100, 150)];
        let g = allocate_case1(&bs, 1_000);
        assert_eq!(g.get(Cid(1)), 150);
    }

    #[test]
    fn case2_proportional_split() {
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 100, 300, 400),
            bounds(2, ServiceClass::Ugs, 100, 200, 300),
        ];
        let g = allocate_case2(&bs, 350);
        assert_eq!(g.get(Cid(1)), 200);
        assert_eq!(g.get(Cid(2)), 150);
        assert_eq!(g.total(), 350);
    }

    #[test]
    fn case2_boundaries() {
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 100, 300, 400),
            bounds(2, ServiceClass::Ugs, 100, 200, 300),
        ];
        let lo = allocate_case2(&bs, 200);
        assert_eq!((lo.get(Cid(1)), lo.get(Cid(2))), (100, 100));
        let hi = allocate_case2(&bs, 500);
        assert_eq!((hi.get(Cid(1)), hi.get(Cid(2))), (300, 200));
    }

    #[test]
    fn wpf_share_hand_value() {
        // (0.6*0.6 + 0.5*0.4) * 500 = 280
        let s = wpf_share(600, 1_000, 5, 10, (0.6, 0.4), 500);
        assert!((s - 280.0).abs() < 1e-9);
    }

    #[test]
    fn wpf_share_zero_phi_sum_shifts_weight() {
        let s = wpf_share(600, 1_000, 0, 0, (0.6, 0.4), 500);
        assert!((s - 300.0).abs() < 1e-9);
    }

    #[test]
    fn wpf_share_zero_class_demand() {
        assert_eq!(wpf_share(0, 0, 3, 3, (0.6, 0.4), 500), 0.0);
    }

    #[test]
    fn wpf_raw_shares_telescope() {
        let maxes = [600u64, 250, 150];
        let phis = [5u64, 3, 0];
        let class: u64 = maxes.iter().sum();
        let phi_sum: u64 = phis.iter().sum();
        let total: f64 = maxes
            .iter()
            .zip(phis)
            .map(|(&m, p)| wpf_share(m, class, p, phi_sum, (0.6, 0.4), 777))
            .sum();
        assert!((total - 777.0).abs() < 1e-6);
    }

    fn schedule_of(tiers: [(&[u32], ServiceClass); 5]) -> PrioritySchedule {
        let queues: Vec<RankingQueue> = tiers
            .iter()
            .map(|(cids, class)| RankingQueue {
                class: *class,
                ordered_cids: cids.iter().map(|&c| Cid(c)).collect(),
            })
            .collect();
        elevate(queues.try_into().unwrap(), &[], &[], &[])
    }

    #[test]
    fn case3_priority_walk_with_partial_grant() {
        let sched = schedule_of([
            (&[1], ServiceClass::Ugs),
            (&[2], ServiceClass::ErtVr),
            (&[3], ServiceClass::RtVr),
            (&[], ServiceClass::NrtVr),
            (&[], ServiceClass::Be),
        ]);
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 300, 400, 500),
            bounds(2, ServiceClass::ErtVr, 200, 300, 400),
            bounds(3, ServiceClass::RtVr, 200, 300, 400),
        ];
        let phis = BTreeMap::new();
        let g = allocate_case3(&sched, &bs, &phis, &WpfWeights::default(), 450);
        assert_eq!(g.get(Cid(1)), 300);
        assert_eq!(g.get(Cid(2)), 150);
        assert_eq!(g.get(Cid(3)), 0);
    }

    #[test]
    fn case3_nothing_left_for_tgs() {
        let sched = schedule_of([
            (&[1], ServiceClass::Ugs),
            (&[], ServiceClass::ErtVr),
            (&[], ServiceClass::RtVr),
            (&[2], ServiceClass::NrtVr),
            (&[3], ServiceClass::Be),
        ]);
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 500, 600, 700),
            bounds(2, ServiceClass::NrtVr, 100, 200, 300),
            bounds(3, ServiceClass::Be, 200, 200, 300),
        ];
        let g = allocate_case3(&sched, &bs, &BTreeMap::new(), &WpfWeights::default(), 500);
        assert_eq!(g.get(Cid(1)), 500);
        assert_eq!(g.get(Cid(2)), 0);
        assert_eq!(g.get(Cid(3)), 0);
    }

    #[test]
    fn case3_nrt_minima_then_be_wpf() {
        // after the DCS walk B_rem 800; NRT minimum 300 -> BE pool 500
        let sched = schedule_of([
            (&[1], ServiceClass::Ugs),
            (&[], ServiceClass::ErtVr),
            (&[], ServiceClass::RtVr),
            (&[2], ServiceClass::NrtVr),
            (&[3], ServiceClass::Be),
        ]);
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 200, 300, 400),
            bounds(2, ServiceClass::NrtVr, 300, 400, 500),
            bounds(3, ServiceClass::Be, 400, 400, 900),
        ];
        let mut phis = BTreeMap::new();
        phis.insert(Cid(3), 2);
        let g = allocate_case3(&sched, &bs, &phis, &WpfWeights::default(), 1_000);
        assert_eq!(g.get(Cid(1)), 200);
        assert_eq!(g.get(Cid(2)), 300);
        // one BE connection: share (0.6*1 + 1*0.4) * 500 = 500, capped at b_max 400
        assert_eq!(g.get(Cid(3)), 400);
    }

    #[test]
    fn case3_wpf_to_nrt_when_minima_unaffordable() {
        let sched = schedule_of([
            (&[1], ServiceClass::Ugs),
            (&[], ServiceClass::ErtVr),
            (&[], ServiceClass::RtVr),
            (&[2, 3], ServiceClass::NrtVr),
            (&[], ServiceClass::Be),
        ]);
        let bs = vec![
            bounds(1, ServiceClass::Ugs, 500, 600, 700),
            bounds(2, ServiceClass::NrtVr, 400, 600, 700),
            bounds(3, ServiceClass::NrtVr, 100, 200, 900),
        ];
        // B_rem after DCS = 100 <= nrt_min 500: WPF over NRT, capped
        let g = allocate_case3(&sched, &bs, &BTreeMap::new(), &WpfWeights::default(), 600);
        assert_eq!(g.get(Cid(1)), 500);
        let nrt_total = g.get(Cid(2)) + g.get(Cid(3));
        assert!(nrt_total <= 100);
        assert!(g.get(Cid(2)) <= 600 && g.get(Cid(3)) <= 200);
    }

    #[test]
    fn largest_remainder_exact_total() {
        let items = vec![(Cid(1), 3u64), (Cid(2), 3), (Cid(3), 3)];
        let out = split_largest_remainder(&items, 7);
        let total: u64 = out.values().sum();
        assert_eq!(total, 7);
        // ties by ascending cid: cids 1 and 2 take the two extra bytes
        assert_eq!(out[&Cid(1)], 3);
        assert_eq!(out[&Cid(2)], 2);
        assert_eq!(out[&Cid(3)], 2);
    }
}
