//! Per-class throughput/delay metrics over frame windows and the CSV
//! report that carries them.
//!
//! CSV schema (documented contract, stable across runs with equal
//! inputs): one header row, then one row per
//! (window, scheduler, class, metric, value). Window is the 0-based
//! window index for series rows and the literal `summary` for
//! run-cumulative rows. Delay with zero served packets is reported as
//! the absent marker `NA`, never as zero.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::baselines::SchedulerKind;
use crate::engine::RunResult;
use crate::error::SimError;
use crate::scenario::Scenario;
use crate::types::{ServiceClass, ALL_CLASSES};

pub const CSV_HEADER: &str = "window,scheduler,class,metric,value";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMetrics {
    /// Average per-connection throughput per window, bits per second.
    pub throughput_bps: Vec<f64>,
    /// Mean delay of packets served in each window, milliseconds;
    /// `None` when the window served nothing.
    pub delay_ms: Vec<Option<f64>>,
    /// Run-cumulative mean per-connection throughput, bits per second.
    pub cum_throughput_bps: f64,
    /// Run-cumulative mean delay, milliseconds; `None` if nothing served.
    pub cum_delay_ms: Option<f64>,
    pub dropped_packets: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub scenario_hash: u64,
    pub window_frames: u64,
    pub frame_duration_us: u64,
    /// Keyed by scheduler name to keep emission order stable.
    pub per_scheduler: BTreeMap<&'static str, BTreeMap<ServiceClass, ClassMetrics>>,
}

/// Mean per-connection throughput of one class per window of `window`
/// frames, bits per second.
pub fn average_throughput(
    run: &RunResult,
    class: ServiceClass,
    window: u64,
    frame_duration_us: u64,
) -> Vec<f64> {
    assert!(window >= 1);
    let n_conns = run.connections.iter().filter(|c| c.class == class).count();
    if n_conns == 0 {
        return Vec::new();
    }
    throughput_series(run, class, window, frame_duration_us, n_conns)
}

/// Mean delay of the packets of one class served in each window,
/// milliseconds; `None` for windows that served nothing.
pub fn average_delay_series(
    run: &RunResult,
    class: ServiceClass,
    window: u64,
) -> Vec<Option<f64>> {
    assert!(window >= 1);
    run.frames
        .chunks(window as usize)
        .map(|chunk| {
            let (delay_us, pkts) = chunk
                .iter()
                .flat_map(|f| f.per_conn.iter())
                .filter(|c| c.class == class)
                .fold((0u64, 0u64), |(d, n), c| (d + c.delay_sum_us, n + c.served_packets));
            if pkts == 0 {
                None
            } else {
                Some(delay_us as f64 / pkts as f64 / 1_000.0)
            }
        })
        .collect()
}

/// Run-cumulative mean delay of one class, milliseconds. Absent (not
/// zero) when no packet of the class was served.
pub fn average_delay(run: &RunResult, class: ServiceClass) -> Option<f64> {
    let (delay_us, pkts) = run
        .connections
        .iter()
        .filter(|c| c.class == class)
        .fold((0u64, 0u64), |(d, n), c| (d + c.stats.delay_sum_us, n + c.stats.served_packets));
    if pkts == 0 {
        None
    } else {
        Some(delay_us as f64 / pkts as f64 / 1_000.0)
    }
}

/// Builds the full report for a set of runs over one scenario.
pub fn build_report(scenario: &Scenario, runs: &[RunResult], window: u64) -> MetricsReport {
    let mut per_scheduler = BTreeMap::new();
    for run in runs {
        let mut per_class = BTreeMap::new();
        for class in ALL_CLASSES {
            let n_conns = run.connections.iter().filter(|c| c.class == class).count();
            if n_conns == 0 {
                continue;
            }
            let throughput_bps =
                throughput_series(run, class, window, scenario.frame_duration_us, n_conns);
            let total_secs =
                run.frames.len() as f64 * scenario.frame_duration_us as f64 / 1e6;
            let total_bytes: u64 = run
                .connections
                .iter()
                .filter(|c| c.class == class)
                .map(|c| c.stats.served_bytes)
                .sum();
            let dropped: u64 = run
                .connections
                .iter()
                .filter(|c| c.class == class)
                .map(|c| c.stats.dropped_packets)
                .sum();
            per_class.insert(
                class,
                ClassMetrics {
                    throughput_bps,
                    delay_ms: average_delay_series(run, class, window),
                    cum_throughput_bps: total_bytes as f64 * 8.0 / total_secs / n_conns as f64,
                    cum_delay_ms: average_delay(run, class),
                    dropped_packets: dropped,
                },
            );
        }
        per_scheduler.insert(run.scheduler.name(), per_class);
    }
    MetricsReport {
        seed: scenario.seed,
        scenario_hash: scenario.fingerprint(),
        window_frames: window,
        frame_duration_us: scenario.frame_duration_us,
        per_scheduler,
    }
}

fn throughput_series(
    run: &RunResult,
    class: ServiceClass,
    window: u64,
    frame_duration_us: u64,
    n_conns: usize,
) -> Vec<f64> {
    run.frames
        .chunks(window as usize)
        .map(|chunk| {
            let bytes: u64 = chunk
                .iter()
                .flat_map(|f| f.per_conn.iter())
                .filter(|c| c.class == class)
                .map(|c| c.served_bytes)
                .sum();
            let secs = chunk.len() as f64 * frame_duration_us as f64 / 1e6;
            bytes as f64 * 8.0 / secs / n_conns as f64
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

/// Writes the report as CSV. Byte-identical output for equal inputs.
pub fn emit_csv(report: &MetricsReport, out: &mut dyn Write) -> Result<(), SimError> {
    writeln!(out, "{CSV_HEADER}")?;
    writeln!(out, "meta,,,seed,{}", report.seed)?;
    writeln!(out, "meta,,,scenario_hash,{:016x}", report.scenario_hash)?;
    writeln!(out, "meta,,,window_frames,{}", report.window_frames)?;
    for (sched, per_class) in &report.per_scheduler {
        for (class, m) in per_class {
            for (w, v) in m.throughput_bps.iter().enumerate() {
                writeln!(out, "{w},{sched},{},avg_throughput_bps,{v}", class.name())?;
            }
            for (w, v) in m.delay_ms.iter().enumerate() {
                writeln!(out, "{w},{sched},{},avg_delay_ms,{}", class.name(), fmt_opt(*v))?;
            }
            writeln!(
                out,
                "summary,{sched},{},avg_throughput_bps,{}",
                class.name(),
                m.cum_throughput_bps
            )?;
            writeln!(
                out,
                "summary,{sched},{},avg_delay_ms,{}",
                class.name(),
                fmt_opt(m.cum_delay_ms)
            )?;
            writeln!(out, "summary,{sched},{},dropped_packets,{}", class.name(), m.dropped_packets)?;
        }
    }
    Ok(())
}

pub fn emit_csv_file(report: &MetricsReport, path: &Path) -> Result<(), SimError> {
    let mut buf = Vec::new();
    emit_csv(report, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| {
        SimError::Scenario(format!("cannot write {}: {e}", path.display()))
    })
}

/// Parses a CSV produced by [`emit_csv`] back into its values; the
/// round trip is exact.
pub fn parse_csv(text: &str) -> Result<MetricsReport, SimError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(SimError::Parse(format!("unexpected csv header: {header}")));
    }
    let mut report = MetricsReport {
        seed: 0,
        scenario_hash: 0,
        window_frames: 0,
        frame_duration_us: 0,
        per_scheduler: BTreeMap::new(),
    };
    let sched_name = |s: &str| -> Result<&'static str, SimError> {
        s.parse::<SchedulerKind>()
            .map(|k| k.name())
            .map_err(SimError::Parse)
    };
    let class_of = |s: &str| -> Result<ServiceClass, SimError> {
        ALL_CLASSES
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| SimError::Parse(format!("unknown class {s}")))
    };
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(SimError::Parse(format!("bad row: {line}")));
        }
        let (window, sched, class, metric, value) =
            (cols[0], cols[1], cols[2], cols[3], cols[4]);
        if window == "meta" {
            match metric {
                "seed" => report.seed = value.parse().map_err(|_| SimError::Parse(line.into()))?,
                "scenario_hash" => {
                    report.scenario_hash = u64::from_str_radix(value, 16)
                        .map_err(|_| SimError::Parse(line.into()))?
                }
                "window_frames" => {
                    report.window_frames =
                        value.parse().map_err(|_| SimError::Parse(line.into()))?
                }
                other => return Err(SimError::Parse(format!("unknown meta key {other}"))),
            }
            continue;
        }
        let entry = report
            .per_scheduler
            .entry(sched_name(sched)?)
            .or_default()
            .entry(class_of(class)?)
            .or_default();
        let opt = |v: &str| -> Result<Option<f64>, SimError> {
            if v == "NA" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| SimError::Parse(v.into()))
            }
        };
        match (window, metric) {
            ("summary", "avg_throughput_bps") => {
                entry.cum_throughput_bps =
                    value.parse().map_err(|_| SimError::Parse(line.into()))?
            }
            ("summary", "avg_delay_ms") => entry.cum_delay_ms = opt(value)?,
            ("summary", "dropped_packets") => {
                entry.dropped_packets = value.parse().map_err(|_| SimError::Parse(line.into()))?
            }
            (_, "avg_throughput_bps") => entry
                .throughput_bps
                .push(value.parse().map_err(|_| SimError::Parse(line.into()))?),
            (_, "avg_delay_ms") => entry.delay_ms.push(opt(value)?),
            (_, m) => return Err(SimError::Parse(format!("unknown metric {m}"))),
        }
    }
    Ok(report)
}
