//! Per-connection downlink arrival generation and finite-queue drop
//! semantics.
//!
//! Three arrival processes are provided: CBR (deterministic, uniformly
//! spaced), exponential ON/OFF (CBR at peak rate while on), and Poisson
//! batch arrivals. Each connection owns an independent RNG substream so
//! adding a connection never perturbs the traffic of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::types::{Cid, ConnectionState, FrameBudget, PacketRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    Cbr,
    OnOff,
    Poisson,
}

/// Arrival-process parameters for one connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub kind: TrafficKind,
    /// Long-run mean offered rate, bits per second.
    pub mean_rate_bps: u64,
    /// Mean ON duration, microseconds (ON/OFF only).
    #[serde(default)]
    pub mean_on_us: u64,
    /// Mean OFF duration, microseconds (ON/OFF only).
    #[serde(default)]
    pub mean_off_us: u64,
}

impl TrafficModel {
    pub fn validate(&self, cid: Cid) -> Result<(), crate::error::SimError> {
        if self.mean_rate_bps == 0 {
            return Err(crate::error::SimError::Scenario(format!(
                "connection {cid}: traffic mean_rate must be > 0"
            )));
        }
        if self.kind == TrafficKind::OnOff && (self.mean_on_us == 0 || self.mean_off_us == 0) {
            return Err(crate::error::SimError::Scenario(format!(
                "connection {cid}: on_off traffic needs mean_on and mean_off > 0"
            )));
        }
        Ok(())
    }
}

/// Bit·microsecond cost of one packet; the unit of the CBR accumulator.
fn packet_cost(size_bytes: u64) -> u128 {
    size_bytes as u128 * 8 * 1_000_000
}

#[derive(Debug, Clone)]
enum SourceState {
    Cbr {
        /// Accrued bit·microseconds not yet emitted as whole packets.
        acc: u128,
    },
    OnOff {
        on: bool,
        /// Absolute time at which the current on/off period ends.
        ends_at_us: u64,
        /// Accrued bit·microseconds of on-time at peak rate.
        acc: u128,
        peak_rate_bps: u64,
    },
    Poisson {
        mean_packets_per_frame: f64,
    },
}

/// Stateful arrival generator for one connection.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    cid: Cid,
    packet_size: u64,
    model: TrafficModel,
    rng: ChaCha12Rng,
    state: SourceState,
}

impl TrafficSource {
    /// `seed` is the scenario seed; the substream is keyed by CID.
    pub fn new(cid: Cid, packet_size: u64, model: TrafficModel, seed: u64, frame_duration_us: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(cid.0 as u64);
        let state = match model.kind {
            TrafficKind::Cbr => SourceState::Cbr { acc: 0 },
            TrafficKind::OnOff => {
                let duty_num = model.mean_on_us as u128 + model.mean_off_us as u128;
                let peak = (model.mean_rate_bps as u128 * duty_num / model.mean_on_us as u128) as u64;
                // ends_at_us = 0 forces a period draw on first use; the
                // toggle flips this to ON with a fresh on-duration
                SourceState::OnOff {
                    on: false,
                    ends_at_us: 0,
                    acc: 0,
                    peak_rate_bps: peak,
                }
            }
            TrafficKind::Poisson => {
                let bytes_per_frame =
                    model.mean_rate_bps as f64 * frame_duration_us as f64 / 8.0 / 1e6;
                SourceState::Poisson {
                    mean_packets_per_frame: bytes_per_frame / packet_size as f64,
                }
            }
        };
        TrafficSource { cid, packet_size, model, rng, state }
    }

    /// Emits this frame's arrivals, sorted by arrival time, each within
    /// [frame.now, frame.now + duration).
    pub fn generate_arrivals(&mut self, frame: &FrameBudget) -> Vec<PacketRecord> {
        let start = frame.now_us;
        let end = frame.now_us + frame.frame_duration_us;
        let cost = packet_cost(self.packet_size);
        let cid = self.cid;
        let size = self.packet_size;

        match &mut self.state {
            SourceState::Cbr { acc } => {
                *acc += self.model.mean_rate_bps as u128 * frame.frame_duration_us as u128;
                let n = (*acc / cost) as u64;
                *acc -= n as u128 * cost;
                spaced_packets(cid, size, start, frame.frame_duration_us, n)
            }
            SourceState::OnOff { on, ends_at_us, acc, peak_rate_bps } => {
                let mut out = Vec::new();
                let mut t = start;
                while t < end {
                    if *ends_at_us <= t {
                        // draw the next period; toggling happens when a
                        // period is exhausted, starting from the current state
                        let mean = if *on { self.model.mean_off_us } else { self.model.mean_on_us };
                        *on = !*on;
                        let exp = Exp::new(1.0 / mean.max(1) as f64).expect("positive mean");
                        let dur = exp.sample(&mut self.rng).round().max(1.0) as u64;
                        *ends_at_us = t + dur;
                    }
                    let seg_end = (*ends_at_us).min(end);
                    if *on {
                        *acc += *peak_rate_bps as u128 * (seg_end - t) as u128;
                        let n = (*acc / cost) as u64;
                        *acc -= n as u128 * cost;
                        out.extend(spaced_packets(cid, size, t, seg_end - t, n));
                    }
                    t = seg_end;
                }
                out
            }
            SourceState::Poisson { mean_packets_per_frame } => {
                let poi = Poisson::new((*mean_packets_per_frame).max(f64::MIN_POSITIVE))
                    .expect("positive mean");
                let n = poi.sample(&mut self.rng) as u64;
                let mut times: Vec<u64> = (0..n)
                    .map(|_| self.rng.gen_range(start..end))
                    .collect();
                times.sort_unstable();
                times
                    .into_iter()
                    .map(|t| PacketRecord { cid, arrival_us: t, size_bytes: size })
                    .collect()
            }
        }
    }
}

/// `n` packets uniformly spaced over [start, start + span).
fn spaced_packets(cid: Cid, size: u64, start: u64, span: u64, n: u64) -> Vec<PacketRecord> {
    (0..n)
        .map(|k| PacketRecord {
            cid,
            arrival_us: start + k * span / n.max(1),
            size_bytes: size,
        })
        .collect()
}

/// Appends `packets` in order until the queue is full; returns the drop
/// count. Offered/dropped byte accounting is updated on the connection.
pub fn enqueue_with_drop(conn: &mut ConnectionState, packets: &[PacketRecord]) -> u64 {
    let mut dropped = 0;
    for p in packets {
        conn.stats.offered_bytes += p.size_bytes;
        if !conn.try_enqueue(*p) {
            dropped += 1;
            conn.stats.dropped_packets += 1;
            conn.stats.dropped_bytes += p.size_bytes;
        }
    }
    dropped
}
