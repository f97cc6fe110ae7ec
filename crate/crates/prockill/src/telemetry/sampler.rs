//! Live per-process sampler.
//!
//! Reads procfs once per sweep and emits one [`ProcessSnapshot`] per visible
//! process. Counter-like metrics (CPU time, I/O bytes and counts) are
//! reported as deltas since the previous sweep; the first observation of a
//! process reports 0 for all deltas so a process birth never looks like an
//! activity spike.
//!
//! Per-process TCP/UDP packet counts are not exposed by procfs and are
//! reported as 0; connection counts and port-status buckets come from the
//! process's socket inodes joined against `/proc/net/{tcp,tcp6,udp,udp6}`.
//!
//! A process we cannot read at all is skipped with a warning; unreadable
//! individual fields (commonly `io` and `fd` for foreign processes) fall
//! back to 0 rather than failing the sweep.

use std::collections::HashMap;

use super::{feature, FeatureVector, ProcessSnapshot};
use crate::error::Result;

/// Cumulative OS counters for one process, as read from the host.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CounterSet {
    pub utime_ticks: u64,
    pub stime_ticks: u64,
    pub rchar: u64,
    pub wchar: u64,
    pub syscr: u64,
    pub syscw: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct CounterDeltas {
    pub cpu_user_pct: f64,
    pub cpu_system_pct: f64,
    pub io_read_bytes: f64,
    pub io_write_bytes: f64,
    pub io_other_bytes: f64,
    pub io_read_count: f64,
    pub io_write_count: f64,
    pub io_other_count: f64,
}

/// Deltas between two sweeps of one process. `prev = None` (first
/// observation) and counter resets both yield zeros.
pub(crate) fn counter_deltas(
    prev: Option<&CounterSet>,
    cur: &CounterSet,
    interval_s: f64,
    clock_ticks_per_s: f64,
) -> CounterDeltas {
    let Some(prev) = prev else {
        return CounterDeltas::default();
    };
    let interval = interval_s.max(1e-6);
    let d = |now: u64, before: u64| now.saturating_sub(before) as f64;

    let read_bytes = d(cur.read_bytes, prev.read_bytes);
    let write_bytes = d(cur.write_bytes, prev.write_bytes);
    // rchar/wchar cover all read/write traffic including page cache hits;
    // the slice beyond block-device bytes is reported as "other" I/O.
    let other_bytes =
        (d(cur.rchar, prev.rchar) - read_bytes).max(0.0) + (d(cur.wchar, prev.wchar) - write_bytes).max(0.0);

    CounterDeltas {
        cpu_user_pct: d(cur.utime_ticks, prev.utime_ticks) / clock_ticks_per_s / interval * 100.0,
        cpu_system_pct: d(cur.stime_ticks, prev.stime_ticks) / clock_ticks_per_s / interval * 100.0,
        io_read_bytes: read_bytes,
        io_write_bytes: write_bytes,
        io_other_bytes: other_bytes,
        io_read_count: d(cur.syscr, prev.syscr),
        io_write_count: d(cur.syscw, prev.syscw),
        io_other_count: 0.0,
    }
}

/// Warning recorded for a process that could not be fully sampled.
#[derive(Debug, Clone)]
pub struct SamplerWarning {
    pub process_id: u32,
    pub message: String,
}

/// Result of one 1 Hz sweep.
#[derive(Debug, Clone)]
pub struct SampleSweep {
    /// Sweep counter since the sampler was created.
    pub tick: u64,
    pub snapshots: Vec<ProcessSnapshot>,
    /// Processes seen last sweep but gone now.
    pub terminated: Vec<u32>,
    pub warnings: Vec<SamplerWarning>,
}

/// Stateful host sampler. Exactly one sampler should run per host; it holds
/// exclusive ownership of the previous-sweep counters.
pub struct ProcessSampler {
    prev: HashMap<u32, CounterSet>,
    tick: u64,
    last_sweep: Option<std::time::Instant>,
    #[cfg(target_os = "linux")]
    clock_ticks_per_s: f64,
    #[cfg(target_os = "linux")]
    page_size: u64,
}

impl ProcessSampler {
    pub fn new() -> Self {
        ProcessSampler {
            prev: HashMap::new(),
            tick: 0,
            last_sweep: None,
            #[cfg(target_os = "linux")]
            clock_ticks_per_s: unsafe { libc::sysconf(libc::_SC_CLK_TCK) as f64 },
            #[cfg(target_os = "linux")]
            page_size: unsafe { libc::sysconf(libc::_SC_PAGESIZE) as u64 },
        }
    }

    /// Sweep every visible process once.
    #[cfg(target_os = "linux")]
    pub fn sample(&mut self) -> Result<SampleSweep> {
        use std::fs;

        let now = std::time::Instant::now();
        let interval_s = self
            .last_sweep
            .map(|t| now.duration_since(t).as_secs_f64())
            .unwrap_or(1.0);
        self.last_sweep = Some(now);

        let socket_table = linux::read_socket_table();
        let uptime_s = linux::read_uptime().unwrap_or(0.0);

        let mut raws = Vec::new();
        let mut warnings = Vec::new();
        let proc_dir = fs::read_dir("/proc").map_err(crate::error::Error::from)?;
        for entry in proc_dir.flatten() {
            let name = entry.file_name();
            let Some(pid) = name.to_str().and_then(|s| s.parse::<u32>().ok()) else {
                continue;
            };
            match linux::read_process(pid, self.page_size) {
                Ok(raw) => raws.push(raw),
                Err(msg) => warnings.push(SamplerWarning {
                    process_id: pid,
                    message: msg,
                }),
            }
        }
        raws.sort_by_key(|r| r.pid);

        // parent -> (child count, max child pid)
        let mut children: HashMap<u32, (u32, u32)> = HashMap::new();
        for raw in &raws {
            let slot = children.entry(raw.ppid).or_insert((0, 0));
            slot.0 += 1;
            slot.1 = slot.1.max(raw.pid);
        }

        let mut snapshots = Vec::with_capacity(raws.len());
        let mut next_prev = HashMap::with_capacity(raws.len());
        for raw in &raws {
            let deltas = counter_deltas(
                self.prev.get(&raw.pid),
                &raw.counters,
                interval_s,
                self.clock_ticks_per_s,
            );
            next_prev.insert(raw.pid, raw.counters);

            let (child_count, max_child_pid) =
                children.get(&raw.pid).copied().unwrap_or((0, 0));
            let mut conn_total = 0.0;
            let mut ports = [0.0; 4];
            for inode in &raw.socket_inodes {
                if let Some(class) = socket_table.get(inode) {
                    conn_total += 1.0;
                    ports[*class as usize] += 1.0;
                }
            }

            let mut f = FeatureVector::zeros();
            f[feature::CPU_SYSTEM_PCT] = deltas.cpu_system_pct;
            f[feature::CPU_USER_PCT] = deltas.cpu_user_pct;
            f[feature::MEM_TOTAL_BYTES] = raw.vsize_bytes as f64;
            f[feature::MEM_PHYSICAL_BYTES] = raw.rss_bytes as f64;
            f[feature::MEM_SWAP_BYTES] = raw.swap_bytes as f64;
            f[feature::CHILD_PROCESS_COUNT] = child_count as f64;
            f[feature::MAX_PROCESS_ID] = max_child_pid as f64;
            f[feature::THREAD_COUNT] = raw.num_threads as f64;
            f[feature::IO_READ_BYTES] = deltas.io_read_bytes;
            f[feature::IO_WRITE_BYTES] = deltas.io_write_bytes;
            f[feature::IO_OTHER_BYTES] = deltas.io_other_bytes;
            f[feature::IO_READ_COUNT] = deltas.io_read_count;
            f[feature::IO_WRITE_COUNT] = deltas.io_write_count;
            f[feature::IO_OTHER_COUNT] = deltas.io_other_count;
            f[feature::PROCESS_PRIORITY] = raw.nice as f64;
            f[feature::IO_PRIORITY] = raw.io_priority as f64;
            f[feature::CMDLINE_ARG_COUNT] = raw.cmdline_args as f64;
            f[feature::HANDLE_COUNT] = raw.fd_count as f64;
            f[feature::SECONDS_SINCE_START] =
                (uptime_s - raw.start_after_boot_s).max(0.0);
            f[feature::TCP_PACKET_COUNT] = 0.0;
            f[feature::UDP_PACKET_COUNT] = 0.0;
            f[feature::OPEN_CONNECTION_COUNT] = conn_total;
            f[feature::PORT_STATUS_LISTEN] = ports[0];
            f[feature::PORT_STATUS_ESTABLISHED] = ports[1];
            f[feature::PORT_STATUS_WAIT] = ports[2];
            f[feature::PORT_STATUS_OTHER] = ports[3];

            snapshots.push(ProcessSnapshot {
                process_id: raw.pid,
                parent_id: if raw.ppid == 0 { None } else { Some(raw.ppid) },
                app_id: 0,
                tick: self.tick,
                features: f,
            });
        }

        let terminated: Vec<u32> = {
            let mut gone: Vec<u32> = self
                .prev
                .keys()
                .filter(|pid| !next_prev.contains_key(pid))
                .copied()
                .collect();
            gone.sort_unstable();
            gone
        };
        self.prev = next_prev;

        let sweep = SampleSweep {
            tick: self.tick,
            snapshots,
            terminated,
            warnings,
        };
        self.tick += 1;
        Ok(sweep)
    }

    #[cfg(not(target_os = "linux"))]
    pub fn sample(&mut self) -> Result<SampleSweep> {
        let _ = (&self.prev, self.tick, self.last_sweep);
        Err(crate::error::Error::sampler(
            "live process sampling is only implemented for Linux",
        ))
    }
}

impl Default for ProcessSampler {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(target_os = "linux")]
mod linux {
    use super::CounterSet;
    use std::collections::HashMap;
    use std::fs;

    /// Port-status bucket: 0 listen, 1 established, 2 wait-type, 3 other.
    pub(super) type SocketClass = u8;

    pub(super) struct RawProcess {
        pub pid: u32,
        pub ppid: u32,
        pub nice: i64,
        pub num_threads: u64,
        pub vsize_bytes: u64,
        pub rss_bytes: u64,
        pub swap_bytes: u64,
        pub start_after_boot_s: f64,
        pub cmdline_args: usize,
        pub fd_count: usize,
        pub io_priority: i32,
        pub socket_inodes: Vec<u64>,
        pub counters: CounterSet,
    }

    pub(super) fn read_uptime() -> Option<f64> {
        let text = fs::read_to_string("/proc/uptime").ok()?;
        text.split_whitespace().next()?.parse().ok()
    }

    /// Read one process. An unreadable stat file fails the whole process
    /// (caller records the warning and skips it); everything else degrades
    /// to zeros.
    pub(super) fn read_process(pid: u32, page_size: u64) -> Result<RawProcess, String> {
        let clk = unsafe { libc::sysconf(libc::_SC_CLK_TCK) as f64 };
        let stat = fs::read_to_string(format!("/proc/{pid}/stat"))
            .map_err(|e| format!("stat unreadable: {e}"))?;
        // comm may contain spaces and parentheses; fields resume after ')'.
        let after = stat
            .rfind(')')
            .map(|i| &stat[i + 2..])
            .ok_or_else(|| "stat malformed".to_string())?;
        let fields: Vec<&str> = after.split_whitespace().collect();
        if fields.len() < 22 {
            return Err("stat too short".to_string());
        }
        let get_u64 = |i: usize| fields.get(i).and_then(|s| s.parse::<u64>().ok()).unwrap_or(0);
        let get_i64 = |i: usize| fields.get(i).and_then(|s| s.parse::<i64>().ok()).unwrap_or(0);
        // indices relative to field 3 ("state"): ppid=0, utime=11, stime=12,
        // nice=16, num_threads=17, starttime=19, vsize=20, rss=21
        let ppid = get_u64(1) as u32;
        let utime = get_u64(11);
        let stime = get_u64(12);
        let nice = get_i64(16);
        let num_threads = get_u64(17);
        let starttime_ticks = get_u64(19);
        let vsize = get_u64(20);
        let rss_pages = get_u64(21);

        let swap_bytes = fs::read_to_string(format!("/proc/{pid}/status"))
            .ok()
            .and_then(|s| {
                s.lines().find(|l| l.starts_with("VmSwap:")).and_then(|l| {
                    l.split_whitespace()
                        .nth(1)
                        .and_then(|kb| kb.parse::<u64>().ok())
                        .map(|kb| kb * 1024)
                })
            })
            .unwrap_or(0);

        let mut counters = CounterSet {
            utime_ticks: utime,
            stime_ticks: stime,
            ..CounterSet::default()
        };
        if let Ok(io) = fs::read_to_string(format!("/proc/{pid}/io")) {
            for line in io.lines() {
                let mut parts = line.split(':');
                let key = parts.next().unwrap_or("").trim();
                let value: u64 = parts
                    .next()
                    .and_then(|v| v.trim().parse().ok())
                    .unwrap_or(0);
                match key {
                    "rchar" => counters.rchar = value,
                    "wchar" => counters.wchar = value,
                    "syscr" => counters.syscr = value,
                    "syscw" => counters.syscw = value,
                    "read_bytes" => counters.read_bytes = value,
                    "write_bytes" => counters.write_bytes = value,
                    _ => {}
                }
            }
        }

        let cmdline_args = fs::read(format!("/proc/{pid}/cmdline"))
            .map(|bytes| {
                bytes
                    .split(|b| *b == 0)
                    .filter(|part| !part.is_empty())
                    .count()
            })
            .unwrap_or(0);

        let mut fd_count = 0;
        let mut socket_inodes = Vec::new();
        if let Ok(entries) = fs::read_dir(format!("/proc/{pid}/fd")) {
            for entry in entries.flatten() {
                fd_count += 1;
                if let Ok(target) = fs::read_link(entry.path()) {
                    let target = target.to_string_lossy();
                    if let Some(inode) = target
                        .strip_prefix("socket:[")
                        .and_then(|s| s.strip_suffix(']'))
                        .and_then(|s| s.parse::<u64>().ok())
                    {
                        socket_inodes.push(inode);
                    }
                }
            }
        }

        let io_priority = unsafe {
            // IOPRIO_WHO_PROCESS = 1
            let r = libc::syscall(libc::SYS_ioprio_get, 1, pid as libc::c_int);
            if r < 0 {
                0
            } else {
                r as i32
            }
        };

        Ok(RawProcess {
            pid,
            ppid,
            nice,
            num_threads,
            vsize_bytes: vsize,
            rss_bytes: rss_pages * page_size,
            swap_bytes,
            start_after_boot_s: starttime_ticks as f64 / clk,
            cmdline_args,
            fd_count,
            io_priority,
            socket_inodes,
            counters,
        })
    }

    /// inode -> port-status class for every socket on the host.
    pub(super) fn read_socket_table() -> HashMap<u64, SocketClass> {
        let mut table = HashMap::new();
        for (path, is_tcp) in [
            ("/proc/net/tcp", true),
            ("/proc/net/tcp6", true),
            ("/proc/net/udp", false),
            ("/proc/net/udp6", false),
        ] {
            let Ok(text) = fs::read_to_string(path) else {
                continue;
            };
            for line in text.lines().skip(1) {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < 10 {
                    continue;
                }
                let Ok(state) = u8::from_str_radix(fields[3], 16) else {
                    continue;
                };
                let Ok(inode) = fields[9].parse::<u64>() else {
                    continue;
                };
                let class: SocketClass = if !is_tcp {
                    3
                } else {
                    match state {
                        0x0A => 0,                             // LISTEN
                        0x01 => 1,                             // ESTABLISHED
                        0x04 | 0x05 | 0x06 | 0x08 | 0x09 => 2, // FIN_WAIT*, TIME_WAIT, CLOSE_WAIT, LAST_ACK
                        _ => 3,
                    }
                };
                table.insert(inode, class);
            }
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_observation_reports_zero_deltas() {
        let cur = CounterSet {
            utime_ticks: 500,
            stime_ticks: 100,
            rchar: 4096,
            wchar: 2048,
            syscr: 10,
            syscw: 5,
            read_bytes: 1024,
            write_bytes: 512,
        };
        assert_eq!(counter_deltas(None, &cur, 1.0, 100.0), CounterDeltas::default());
    }

    #[test]
    fn quiet_interval_reports_zero_io_deltas() {
        let counters = CounterSet {
            utime_ticks: 500,
            stime_ticks: 100,
            rchar: 4096,
            wchar: 2048,
            syscr: 10,
            syscw: 5,
            read_bytes: 1024,
            write_bytes: 512,
        };
        let d = counter_deltas(Some(&counters), &counters, 1.0, 100.0);
        assert_eq!(d, CounterDeltas::default());
    }

    #[test]
    fn busy_interval_deltas_hand_checked() {
        let prev = CounterSet {
            utime_ticks: 100,
            stime_ticks: 50,
            rchar: 10_000,
            wchar: 5_000,
            syscr: 100,
            syscw: 40,
            read_bytes: 8_000,
            write_bytes: 4_000,
        };
        let cur = CounterSet {
            utime_ticks: 150, // +50 ticks at 100 Hz over 1 s = 50% cpu
            stime_ticks: 60,
            rchar: 13_000,
            wchar: 6_500,
            syscr: 130,
            syscw: 55,
            read_bytes: 10_000,
            write_bytes: 5_000,
        };
        let d = counter_deltas(Some(&prev), &cur, 1.0, 100.0);
        assert_eq!(d.cpu_user_pct, 50.0);
        assert_eq!(d.cpu_system_pct, 10.0);
        assert_eq!(d.io_read_bytes, 2_000.0);
        assert_eq!(d.io_write_bytes, 1_000.0);
        // other = (3000 - 2000) + (1500 - 1000)
        assert_eq!(d.io_other_bytes, 1_500.0);
        assert_eq!(d.io_read_count, 30.0);
        assert_eq!(d.io_write_count, 15.0);
    }

    #[test]
    fn counter_reset_clamps_to_zero() {
        let prev = CounterSet {
            rchar: 10_000,
            ..CounterSet::default()
        };
        let cur = CounterSet {
            rchar: 100,
            ..CounterSet::default()
        };
        let d = counter_deltas(Some(&prev), &cur, 1.0, 100.0);
        assert_eq!(d.io_other_bytes, 0.0);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn sweep_contains_own_process() {
        let mut sampler = ProcessSampler::new();
        let sweep = sampler.sample().unwrap();
        let me = std::process::id();
        assert!(sweep.snapshots.iter().any(|s| s.process_id == me));
        assert_eq!(sweep.tick, 0);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn vanished_process_lands_in_terminated_set() {
        let mut sampler = ProcessSampler::new();
        let mut child = std::process::Command::new("sleep")
            .arg("30")
            .spawn()
            .expect("spawn sleep");
        let pid = child.id();
        let first = sampler.sample().unwrap();
        assert!(first.snapshots.iter().any(|s| s.process_id == pid));
        child.kill().unwrap();
        child.wait().unwrap();
        let second = sampler.sample().unwrap();
        assert!(second.terminated.contains(&pid));
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn ticks_strictly_increase_per_process() {
        let mut sampler = ProcessSampler::new();
        let a = sampler.sample().unwrap();
        let b = sampler.sample().unwrap();
        let me = std::process::id();
        let ta = a.snapshots.iter().find(|s| s.process_id == me).unwrap().tick;
        let tb = b.snapshots.iter().find(|s| s.process_id == me).unwrap().tick;
        assert!(tb > ta);
    }
}
