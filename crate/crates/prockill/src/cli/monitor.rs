//! Live 1 Hz monitor: sample every host process, score each snapshot with
//! the forest, and kill flagged process trees.
//!
//! Safety posture: dry-run by default (verdicts are logged as `would_kill`),
//! the monitor's own process and everything on the allowlist are exempt even
//! under `--enforce`, and kills cascade only to descendants of the flagged
//! pid observed in the current sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forest::ForestClassifier;
use crate::telemetry::{ProcessSampler, ProcessSnapshot};

#[derive(Debug, Clone)]
pub struct MonitorOptions {
    pub enforce: bool,
    pub allowlist_path: Option<PathBuf>,
    pub interval_ms: u64,
    pub max_ticks: Option<u64>,
    /// JSON-lines event log; stdout when absent.
    pub log_path: Option<PathBuf>,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions {
            enforce: false,
            allowlist_path: None,
            interval_ms: 1000,
            max_ticks: None,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorEvent {
    pub ts_ms: u128,
    pub tick: u64,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pid: Option<u32>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct MonitorSummary {
    pub ticks: u64,
    pub verdicts: u64,
    pub kills: u64,
    pub mean_interval_ms: f64,
}

/// Allowlist entries: numeric lines are pids, anything else is an exact
/// process (comm) name.
#[derive(Debug, Default)]
struct Allowlist {
    pids: BTreeSet<u32>,
    names: BTreeSet<String>,
}

impl Allowlist {
    fn load(path: &PathBuf) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let mut list = Allowlist::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.parse::<u32>() {
                Ok(pid) => {
                    list.pids.insert(pid);
                }
                Err(_) => {
                    list.names.insert(line.to_string());
                }
            }
        }
        Ok(list)
    }

    fn exempts(&self, pid: u32) -> bool {
        if self.pids.contains(&pid) {
            return true;
        }
        if self.names.is_empty() {
            return false;
        }
        comm_name(pid).is_some_and(|name| self.names.contains(&name))
    }
}

#[cfg(target_os = "linux")]
fn comm_name(pid: u32) -> Option<String> {
    std::fs::read_to_string(format!("/proc/{pid}/comm"))
        .ok()
        .map(|s| s.trim().to_string())
}

#[cfg(not(target_os = "linux"))]
fn comm_name(_pid: u32) -> Option<String> {
    None
}

/// SIGKILL a process and every descendant visible in the pid->ppid map,
/// deepest first. Returns the pids actually signaled.
#[cfg(unix)]
pub fn kill_process_tree(root: u32, parent_of: &BTreeMap<u32, Option<u32>>) -> Vec<u32> {
    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&pid, &ppid) in parent_of {
        if let Some(ppid) = ppid {
            children.entry(ppid).or_default().push(pid);
        }
    }
    let mut order = Vec::new();
    collect_subtree(root, &children, &mut order);
    let mut signaled = Vec::new();
    for &pid in order.iter().rev() {
        let rc = unsafe { libc::kill(pid as libc::pid_t, libc::SIGKILL) };
        if rc == 0 {
            signaled.push(pid);
        }
    }
    signaled
}

#[cfg(not(unix))]
pub fn kill_process_tree(_root: u32, _parent_of: &BTreeMap<u32, Option<u32>>) -> Vec<u32> {
    Vec::new()
}

fn collect_subtree(pid: u32, children: &BTreeMap<u32, Vec<u32>>, out: &mut Vec<u32>) {
    out.push(pid);
    if let Some(kids) = children.get(&pid) {
        for &kid in kids {
            collect_subtree(kid, children, out);
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct EventLog {
    out: Box<dyn Write>,
}

impl EventLog {
    fn open(path: &Option<PathBuf>) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(std::io::stdout()),
        };
        Ok(EventLog { out })
    }

    fn emit(&mut self, event: &MonitorEvent) -> Result<()> {
        serde_json::to_writer(&mut self.out, event)
            .map_err(|e| Error::input(format!("serialize monitor event: {e}")))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

/// Run the monitor loop: absolute-deadline scheduling keeps the mean
/// sampling period on the configured interval even when a sweep is slow.
pub fn run_monitor(forest: &ForestClassifier, options: &MonitorOptions) -> Result<MonitorSummary> {
    let allowlist = match &options.allowlist_path {
        Some(path) => Allowlist::load(path)?,
        None => Allowlist::default(),
    };
    let mut log = EventLog::open(&options.log_path)?;
    let self_pid = std::process::id();

    // polling priority hint; degraded gracefully when denied
    #[cfg(unix)]
    {
        let rc = unsafe { libc::setpriority(libc::PRIO_PROCESS, 0, -10) };
        if rc != 0 {
            log.emit(&MonitorEvent {
                ts_ms: now_ms(),
                tick: 0,
                kind: "warning".to_string(),
                pid: None,
                detail: "high-priority scheduling hint denied".to_string(),
            })?;
        }
    }

    let mut sampler = ProcessSampler::new();
    let interval = Duration::from_millis(options.interval_ms.max(1));
    let start = Instant::now();
    let mut sweep_times: Vec<f64> = Vec::new();
    let mut verdict_count = 0u64;
    let mut kill_count = 0u64;
    // processes already handled (killed or exempted); no repeat verdicts
    let mut handled: BTreeSet<u32> = BTreeSet::new();

    let mut tick = 0u64;
    loop {
        if let Some(max) = options.max_ticks {
            if tick >= max {
                break;
            }
        }
        let deadline = start + interval * tick as u32;
        if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }

        let sweep = sampler.sample()?;
        sweep_times.push(start.elapsed().as_secs_f64() * 1000.0);
        log.emit(&MonitorEvent {
            ts_ms: now_ms(),
            tick,
            kind: "sweep".to_string(),
            pid: None,
            detail: format!(
                "{} processes, {} terminated, {} warnings",
                sweep.snapshots.len(),
                sweep.terminated.len(),
                sweep.warnings.len()
            ),
        })?;

        let parent_of: BTreeMap<u32, Option<u32>> = sweep
            .snapshots
            .iter()
            .map(|s| (s.process_id, s.parent_id))
            .collect();

        for snap in &sweep.snapshots {
            handle_snapshot(
                snap,
                forest,
                options,
                &allowlist,
                self_pid,
                &parent_of,
                &mut handled,
                &mut verdict_count,
                &mut kill_count,
                tick,
                &mut log,
            )?;
        }
        for pid in &sweep.terminated {
            handled.remove(pid);
        }

        tick += 1;
    }

    let mean_interval_ms = if sweep_times.len() < 2 {
        options.interval_ms as f64
    } else {
        let diffs: Vec<f64> = sweep_times.windows(2).map(|w| w[1] - w[0]).collect();
        diffs.iter().sum::<f64>() / diffs.len() as f64
    };

    Ok(MonitorSummary {
        ticks: tick,
        verdicts: verdict_count,
        kills: kill_count,
        mean_interval_ms,
    })
}

#[allow(clippy::too_many_arguments)]
fn handle_snapshot(
    snap: &ProcessSnapshot,
    forest: &ForestClassifier,
    options: &MonitorOptions,
    allowlist: &Allowlist,
    self_pid: u32,
    parent_of: &BTreeMap<u32, Option<u32>>,
    handled: &mut BTreeSet<u32>,
    verdict_count: &mut u64,
    kill_count: &mut u64,
    tick: u64,
    log: &mut EventLog,
) -> Result<()> {
    let pid = snap.process_id;
    if handled.contains(&pid) {
        return Ok(());
    }
    if forest.predict(&snap.features) == 0 {
        return Ok(());
    }
    *verdict_count += 1;

    if pid == self_pid {
        handled.insert(pid);
        log.emit(&MonitorEvent {
            ts_ms: now_ms(),
            tick,
            kind: "exempt".to_string(),
            pid: Some(pid),
            detail: "monitor's own process".to_string(),
        })?;
        return Ok(());
    }
    if allowlist.exempts(pid) {
        handled.insert(pid);
        log.emit(&MonitorEvent {
            ts_ms: now_ms(),
            tick,
            kind: "exempt".to_string(),
            pid: Some(pid),
            detail: "allowlisted".to_string(),
        })?;
        return Ok(());
    }

    if options.enforce {
        let signaled = kill_process_tree(pid, parent_of);
        *kill_count += signaled.len() as u64;
        for dead in &signaled {
            handled.insert(*dead);
        }
        log.emit(&MonitorEvent {
            ts_ms: now_ms(),
            tick,
            kind: "kill".to_string(),
            pid: Some(pid),
            detail: format!("signaled {} processes: {:?}", signaled.len(), signaled),
        })?;
    } else {
        handled.insert(pid);
        log.emit(&MonitorEvent {
            ts_ms: now_ms(),
            tick,
            kind: "would_kill".to_string(),
            pid: Some(pid),
            detail: format!("would kill pid {pid} and descendants"),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{DecisionTree, ForestConfig, TreeNode};

    fn constant_forest(class: u8) -> ForestClassifier {
        ForestClassifier {
            trees: vec![DecisionTree {
                nodes: vec![TreeNode::Leaf { class }],
            }],
            tree_seeds: vec![0],
            config: ForestConfig::default(),
        }
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn dry_run_never_kills_and_logs_would_kill() {
        let mut child = std::process::Command::new("sleep")
            .arg("20")
            .spawn()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let options = MonitorOptions {
            enforce: false,
            interval_ms: 50,
            max_ticks: Some(2),
            log_path: Some(log.clone()),
            ..MonitorOptions::default()
        };
        // a forest that flags everything: maximum kill pressure in dry-run
        let summary = run_monitor(&constant_forest(1), &options).unwrap();
        assert_eq!(summary.kills, 0);
        assert!(summary.verdicts > 0);

        // the sleeper must still be alive
        assert!(child.try_wait().unwrap().is_none());
        child.kill().unwrap();
        child.wait().unwrap();

        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.contains("would_kill"));
        assert!(!text.contains("\"kind\":\"kill\""));
        // the monitor's own process is exempt, not merely unflagged
        let me = std::process::id();
        assert!(text.contains(&format!("\"pid\":{me},\"detail\":\"monitor's own process\"")));
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn allowlisted_name_is_exempt_even_when_flagged() {
        let mut child = std::process::Command::new("sleep")
            .arg("20")
            .spawn()
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let allow = dir.path().join("allow.txt");
        std::fs::write(&allow, "sleep\n").unwrap();
        let log = dir.path().join("events.jsonl");
        let options = MonitorOptions {
            enforce: false,
            allowlist_path: Some(allow),
            interval_ms: 50,
            max_ticks: Some(1),
            log_path: Some(log.clone()),
        };
        run_monitor(&constant_forest(1), &options).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let pid = child.id();
        assert!(
            text.contains(&format!("\"pid\":{pid},\"detail\":\"allowlisted\"")),
            "no exempt event for the sleeper in:\n{text}"
        );
        child.kill().unwrap();
        child.wait().unwrap();
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn benign_forest_raises_no_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let options = MonitorOptions {
            interval_ms: 30,
            max_ticks: Some(2),
            log_path: Some(dir.path().join("l.jsonl")),
            ..MonitorOptions::default()
        };
        let summary = run_monitor(&constant_forest(0), &options).unwrap();
        assert_eq!(summary.verdicts, 0);
        assert_eq!(summary.kills, 0);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn sampling_interval_stays_near_configured_period() {
        let dir = tempfile::tempdir().unwrap();
        let options = MonitorOptions {
            interval_ms: 150,
            max_ticks: Some(6),
            log_path: Some(dir.path().join("l.jsonl")),
            ..MonitorOptions::default()
        };
        let summary = run_monitor(&constant_forest(0), &options).unwrap();
        let err = (summary.mean_interval_ms - 150.0).abs() / 150.0;
        assert!(
            err < 0.10,
            "mean interval {} ms deviates more than 10%",
            summary.mean_interval_ms
        );
    }

    #[cfg(unix)]
    #[test]
    fn kill_process_tree_kills_own_spawned_child() {
        let mut child = std::process::Command::new("sleep")
            .arg("30")
            .spawn()
            .unwrap();
        let pid = child.id();
        let mut map = BTreeMap::new();
        map.insert(pid, Some(std::process::id()));
        let signaled = kill_process_tree(pid, &map);
        assert_eq!(signaled, vec![pid]);
        let status = child.wait().unwrap();
        assert!(!status.success());
    }
}
