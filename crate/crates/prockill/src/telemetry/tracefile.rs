//! Line-delimited trace storage.
//!
//! One snapshot per line, UTF-8 JSON with the keys
//! `{app_id, pid, ppid, tick, label, f}` where `f` is the 26-entry feature
//! array in the normative order. The format is append-friendly during live
//! capture and streams trivially.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{feature, FeatureVector, Label, ProcessSnapshot, ProcessTrace};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    app_id: u32,
    pid: u32,
    ppid: Option<u32>,
    tick: u64,
    label: Label,
    f: Vec<f64>,
}

/// Write traces as line-delimited records, one snapshot per line.
///
/// Traces are emitted sorted by (app_id, pid) and snapshots by tick, so the
/// same dataset always serializes to identical bytes.
pub fn write_traces(traces: &[ProcessTrace], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);

    let mut ordered: Vec<&ProcessTrace> = traces.iter().collect();
    ordered.sort_by_key(|t| (t.app_id, t.process_id));

    for trace in ordered {
        for snap in &trace.snapshots {
            let record = TraceRecord {
                app_id: trace.app_id,
                pid: trace.process_id,
                ppid: snap.parent_id,
                tick: snap.tick,
                label: trace.label,
                f: snap.features.as_slice().to_vec(),
            };
            serde_json::to_writer(&mut out, &record)
                .map_err(|e| Error::input(format!("serialize trace record: {e}")))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a trace file back into per-process traces.
///
/// Records are grouped by (app_id, pid) and sorted by tick. The unkilled
/// duration is reconstructed as `last_tick - first_tick + 1`, which matches
/// 1 Hz capture of a process's full lifetime.
pub fn read_traces(path: &Path) -> Result<Vec<ProcessTrace>> {
    let file = File::open(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);

    let mut groups: BTreeMap<(u32, u32), Vec<(TraceRecord, usize)>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("line {}: malformed record: {e}", lineno + 1)))?;
        if record.f.len() != feature::COUNT {
            return Err(Error::input(format!(
                "line {}: record app_id={} pid={} tick={} has {} features, expected {}",
                lineno + 1,
                record.app_id,
                record.pid,
                record.tick,
                record.f.len(),
                feature::COUNT
            )));
        }
        if record.ppid == Some(record.pid) {
            return Err(Error::input(format!(
                "line {}: pid {} is its own parent",
                lineno + 1,
                record.pid
            )));
        }
        groups
            .entry((record.app_id, record.pid))
            .or_default()
            .push((record, lineno + 1));
    }

    let mut traces = Vec::with_capacity(groups.len());
    for ((app_id, pid), mut records) in groups {
        records.sort_by_key(|(r, _)| r.tick);
        for pair in records.windows(2) {
            if pair[1].0.tick <= pair[0].0.tick {
                return Err(Error::input(format!(
                    "line {}: duplicate tick {} for app_id={} pid={}",
                    pair[1].1, pair[1].0.tick, app_id, pid
                )));
            }
        }
        let label = records[0].0.label;
        if let Some((_, line)) = records.iter().find(|(r, _)| r.label != label) {
            return Err(Error::input(format!(
                "line {line}: conflicting label for app_id={app_id} pid={pid}"
            )));
        }
        let first_tick = records[0].0.tick;
        let last_tick = records[records.len() - 1].0.tick;
        let snapshots = records
            .into_iter()
            .map(|(r, _)| {
                let mut fv = FeatureVector::zeros();
                fv.0.copy_from_slice(&r.f);
                ProcessSnapshot {
                    process_id: r.pid,
                    parent_id: r.ppid,
                    app_id: r.app_id,
                    tick: r.tick,
                    features: fv,
                }
            })
            .collect();
        traces.push(ProcessTrace {
            process_id: pid,
            app_id,
            label,
            snapshots,
            unkilled_duration_s: last_tick - first_tick + 1,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traces() -> Vec<ProcessTrace> {
        let mut traces = Vec::new();
        for pid in [10u32, 11] {
            let snapshots = (0..4)
                .map(|i| ProcessSnapshot {
                    process_id: pid,
                    parent_id: if pid == 11 { Some(10) } else { None },
                    app_id: 1,
                    tick: i + 2,
                    features: FeatureVector(std::array::from_fn(|f| {
                        f as f64 * 0.1 + i as f64 + pid as f64
                    })),
                })
                .collect();
            traces.push(ProcessTrace {
                process_id: pid,
                app_id: 1,
                label: Label::Malicious,
                snapshots,
                unkilled_duration_s: 4,
            });
        }
        traces
    }

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let traces = sample_traces();
        write_traces(&traces, &path).unwrap();
        let back = read_traces(&path).unwrap();
        assert_eq!(back, traces);
    }

    #[test]
    fn wrong_arity_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut file = File::create(&path).unwrap();
        let f25: Vec<f64> = vec![0.0; 25];
        writeln!(
            file,
            "{}",
            serde_json::json!({"app_id": 0, "pid": 7, "ppid": null, "tick": 3, "label": "benign", "f": f25})
        )
        .unwrap();
        let err = read_traces(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("pid=7"), "{err}");
        assert!(err.contains("25 features"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let traces = sample_traces();
        write_traces(&traces, &path).unwrap();
        let mut file = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(file, "{{not json").unwrap();
        let err = read_traces(&path).unwrap_err().to_string();
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        assert!(read_traces(&path).unwrap().is_empty());
    }

    #[test]
    fn self_parent_and_label_flips_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f: Vec<f64> = vec![0.0; feature::COUNT];

        let path = dir.path().join("self.jsonl");
        let mut file = File::create(&path).unwrap();
        writeln!(
            file,
            "{}",
            serde_json::json!({"app_id": 0, "pid": 7, "ppid": 7, "tick": 0, "label": "benign", "f": f})
        )
        .unwrap();
        assert!(read_traces(&path).unwrap_err().to_string().contains("own parent"));

        let path = dir.path().join("flip.jsonl");
        let mut file = File::create(&path).unwrap();
        for (tick, label) in [(0, "benign"), (1, "malicious")] {
            writeln!(
                file,
                "{}",
                serde_json::json!({"app_id": 0, "pid": 8, "ppid": null, "tick": tick, "label": label, "f": f})
            )
            .unwrap();
        }
        let err = read_traces(&path).unwrap_err().to_string();
        assert!(err.contains("conflicting label"), "{err}");
    }
}
