//! Feature schema, trace storage, normalization, and the live process sampler.
//!
//! Every process is described by a fixed vector of 26 machine-activity
//! metrics sampled at 1 Hz. The entry order is part of the on-disk trace
//! format and is documented in `docs/trace-format.md`; code should address
//! entries through the constants in [`feature`].

mod sampler;
mod tracefile;

pub use sampler::{ProcessSampler, SampleSweep, SamplerWarning};
pub use tracefile::{read_traces, write_traces};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices into a [`FeatureVector`]. The order is normative.
pub mod feature {
    pub const CPU_SYSTEM_PCT: usize = 0;
    pub const CPU_USER_PCT: usize = 1;
    pub const MEM_TOTAL_BYTES: usize = 2;
    pub const MEM_PHYSICAL_BYTES: usize = 3;
    pub const MEM_SWAP_BYTES: usize = 4;
    pub const CHILD_PROCESS_COUNT: usize = 5;
    pub const MAX_PROCESS_ID: usize = 6;
    pub const THREAD_COUNT: usize = 7;
    pub const IO_READ_BYTES: usize = 8;
    pub const IO_WRITE_BYTES: usize = 9;
    pub const IO_OTHER_BYTES: usize = 10;
    pub const IO_READ_COUNT: usize = 11;
    pub const IO_WRITE_COUNT: usize = 12;
    pub const IO_OTHER_COUNT: usize = 13;
    pub const PROCESS_PRIORITY: usize = 14;
    pub const IO_PRIORITY: usize = 15;
    pub const CMDLINE_ARG_COUNT: usize = 16;
    pub const HANDLE_COUNT: usize = 17;
    pub const SECONDS_SINCE_START: usize = 18;
    pub const TCP_PACKET_COUNT: usize = 19;
    pub const UDP_PACKET_COUNT: usize = 20;
    pub const OPEN_CONNECTION_COUNT: usize = 21;
    pub const PORT_STATUS_LISTEN: usize = 22;
    pub const PORT_STATUS_ESTABLISHED: usize = 23;
    pub const PORT_STATUS_WAIT: usize = 24;
    pub const PORT_STATUS_OTHER: usize = 25;

    /// Number of features in the schema.
    pub const COUNT: usize = 26;

    /// Canonical feature names, index-aligned with the vector layout.
    pub const NAMES: [&str; COUNT] = [
        "cpu_system_pct",
        "cpu_user_pct",
        "mem_total_bytes",
        "mem_physical_bytes",
        "mem_swap_bytes",
        "child_process_count",
        "max_process_id",
        "thread_count",
        "io_read_bytes",
        "io_write_bytes",
        "io_other_bytes",
        "io_read_count",
        "io_write_count",
        "io_other_count",
        "process_priority",
        "io_priority",
        "cmdline_arg_count",
        "handle_count",
        "seconds_since_start",
        "tcp_packet_count",
        "udp_packet_count",
        "open_connection_count",
        "port_status_listen",
        "port_status_established",
        "port_status_wait",
        "port_status_other",
    ];
}

/// One process's 26 machine-activity metrics at a single 1 Hz tick.
///
/// Counter-like OS metrics (I/O bytes and counts, packet counts) are stored
/// as per-second deltas, not cumulative totals, so a snapshot reads the same
/// regardless of where it falls in a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; feature::COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector([0.0; feature::COUNT])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Default for FeatureVector {
    fn default() -> Self {
        Self::zeros()
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for FeatureVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Ground-truth class of an application and every process it launches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        matches!(self, Label::Malicious)
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Benign => write!(f, "benign"),
            Label::Malicious => write!(f, "malicious"),
        }
    }
}

/// One process observation at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSnapshot {
    pub process_id: u32,
    pub parent_id: Option<u32>,
    pub app_id: u32,
    /// Seconds since scenario start.
    pub tick: u64,
    pub features: FeatureVector,
}

/// Per-process time series plus the label inherited from its application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTrace {
    pub process_id: u32,
    pub app_id: u32,
    pub label: Label,
    /// Strictly increasing in tick.
    pub snapshots: Vec<ProcessSnapshot>,
    /// Total seconds the process runs if never killed.
    pub unkilled_duration_s: u64,
}

impl ProcessTrace {
    /// Tick of the first snapshot (process birth), 0 for empty traces.
    pub fn birth_tick(&self) -> u64 {
        self.snapshots.first().map(|s| s.tick).unwrap_or(0)
    }

    /// Fraction of the unkilled trace remaining after the snapshot at
    /// `index`, clamped to [0, 1]. 1 at birth, approaching 0 at the end.
    pub fn time_left(&self, index: usize) -> f64 {
        let d = self.unkilled_duration_s.max(1) as f64;
        let elapsed = match (self.snapshots.get(index), self.snapshots.first()) {
            (Some(s), Some(first)) => s.tick.saturating_sub(first.tick) as f64,
            _ => 0.0,
        };
        ((d - elapsed) / d).clamp(0.0, 1.0)
    }
}

/// Per-feature mean and standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Identity stats: mean 0, std 1 for every feature.
    pub fn identity() -> Self {
        NormalizationStats {
            mean: vec![0.0; feature::COUNT],
            std: vec![1.0; feature::COUNT],
        }
    }
}

/// Per-feature mean and population standard deviation over every snapshot of
/// every training trace. A zero standard deviation is replaced by 1 so that
/// constant features normalize to 0 instead of dividing by zero.
///
/// Values are sorted per feature before summation, which makes the result
/// bitwise independent of trace and snapshot ordering.
pub fn compute_stats(training_traces: &[ProcessTrace]) -> Result<NormalizationStats> {
    let n: usize = training_traces.iter().map(|t| t.snapshots.len()).sum();
    if n == 0 {
        return Err(Error::input("no training data"));
    }

    let mut mean = vec![0.0; feature::COUNT];
    let mut std = vec![0.0; feature::COUNT];
    let mut column = Vec::with_capacity(n);
    for f in 0..feature::COUNT {
        column.clear();
        for trace in training_traces {
            for snap in &trace.snapshots {
                column.push(snap.features[f]);
            }
        }
        column.sort_by(f64::total_cmp);
        let mu = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        mean[f] = mu;
        let sigma = var.sqrt();
        std[f] = if sigma > 0.0 { sigma } else { 1.0 };
    }

    Ok(NormalizationStats { mean, std })
}

/// Center and scale a feature vector: `(v - mean) / std`.
pub fn normalize(v: &FeatureVector, stats: &NormalizationStats) -> FeatureVector {
    let mut out = FeatureVector::zeros();
    for f in 0..feature::COUNT {
        out[f] = (v[f] - stats.mean[f]) / stats.std[f];
    }
    out
}

/// Inverse of [`normalize`].
pub fn denormalize(v: &FeatureVector, stats: &NormalizationStats) -> FeatureVector {
    let mut out = FeatureVector::zeros();
    for f in 0..feature::COUNT {
        out[f] = v[f] * stats.std[f] + stats.mean[f];
    }
    out
}

/// Group traces by (app_id, process_id) for lookup-heavy callers.
pub fn traces_by_key(traces: &[ProcessTrace]) -> BTreeMap<(u32, u32), &ProcessTrace> {
    traces
        .iter()
        .map(|t| ((t.app_id, t.process_id), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_with(features: Vec<[f64; feature::COUNT]>) -> ProcessTrace {
        let snapshots = features
            .into_iter()
            .enumerate()
            .map(|(i, f)| ProcessSnapshot {
                process_id: 1,
                parent_id: None,
                app_id: 0,
                tick: i as u64,
                features: FeatureVector(f),
            })
            .collect::<Vec<_>>();
        let n = snapshots.len() as u64;
        ProcessTrace {
            process_id: 1,
            app_id: 0,
            label: Label::Benign,
            snapshots,
            unkilled_duration_s: n,
        }
    }

    #[test]
    fn stats_single_snapshot_uses_degenerate_guard() {
        let trace = trace_with(vec![[5.0; feature::COUNT]]);
        let stats = compute_stats(std::slice::from_ref(&trace)).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 5.0));
        assert!(stats.std.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn stats_population_std_on_two_points() {
        let mut a = [0.0; feature::COUNT];
        let mut b = [0.0; feature::COUNT];
        a[0] = 0.0;
        b[0] = 2.0;
        let trace = trace_with(vec![a, b]);
        let stats = compute_stats(std::slice::from_ref(&trace)).unwrap();
        assert_eq!(stats.mean[0], 1.0);
        // population std of {0, 2} is 1, not the sample std sqrt(2)
        assert_eq!(stats.std[0], 1.0);
    }

    #[test]
    fn stats_empty_input_errors() {
        let err = compute_stats(&[]).unwrap_err();
        assert!(err.to_string().contains("no training data"));
    }

    #[test]
    fn stats_ignore_non_training_traces() {
        let train = trace_with(vec![[1.0; feature::COUNT], [3.0; feature::COUNT]]);
        let stats_before = compute_stats(std::slice::from_ref(&train)).unwrap();
        // adding test traces to a *separate* collection must not matter:
        // stats are a function of the training split alone
        let stats_after = compute_stats(&[train]).unwrap();
        assert_eq!(stats_before, stats_after);
    }

    #[test]
    fn normalize_mean_gives_zero_and_mean_plus_std_gives_one() {
        let mut stats = NormalizationStats::identity();
        for f in 0..feature::COUNT {
            stats.mean[f] = (f + 1) as f64;
            stats.std[f] = 2.0;
        }
        let v = FeatureVector(std::array::from_fn(|f| (f + 1) as f64));
        let z = normalize(&v, &stats);
        assert!(z.as_slice().iter().all(|&x| x == 0.0));

        let w = FeatureVector(std::array::from_fn(|f| (f + 1) as f64 + 2.0));
        let o = normalize(&w, &stats);
        assert!(o.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn normalize_hand_value() {
        let mut stats = NormalizationStats::identity();
        stats.mean[0] = 1.0;
        stats.std[0] = 4.0;
        let mut v = FeatureVector::zeros();
        v[0] = 3.0;
        assert_eq!(normalize(&v, &stats)[0], 0.5);
    }

    #[test]
    fn normalize_roundtrip() {
        let mut stats = NormalizationStats::identity();
        for f in 0..feature::COUNT {
            stats.mean[f] = f as f64 * 3.25 - 10.0;
            stats.std[f] = 0.5 + f as f64;
        }
        let v = FeatureVector(std::array::from_fn(|f| (f as f64).sin() * 100.0));
        let back = denormalize(&normalize(&v, &stats), &stats);
        for f in 0..feature::COUNT {
            let rel = (back[f] - v[f]).abs() / v[f].abs().max(1.0);
            assert!(rel < 1e-9, "feature {f}: {} vs {}", back[f], v[f]);
        }
    }

    #[test]
    fn stats_are_permutation_invariant() {
        let a = trace_with(vec![[1.5; feature::COUNT], [2.5; feature::COUNT]]);
        let mut b = trace_with(vec![[-4.0; feature::COUNT], [0.125; feature::COUNT]]);
        b.process_id = 2;
        let fwd = compute_stats(&[a.clone(), b.clone()]).unwrap();
        let rev = compute_stats(&[b, a]).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn time_left_spans_unit_interval() {
        let trace = trace_with(vec![[0.0; feature::COUNT]; 10]);
        assert_eq!(trace.time_left(0), 1.0);
        assert!(trace.time_left(9) > 0.0);
        assert!(trace.time_left(9) < trace.time_left(0));
    }
}
