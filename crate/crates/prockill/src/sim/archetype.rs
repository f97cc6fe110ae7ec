//! Application archetypes: parameterized templates from which the simulator
//! synthesizes labeled process trees and their feature streams.
//!
//! An archetype describes a small process tree (spawn offsets and durations),
//! a per-feature stochastic generator (baseline + Gaussian jitter + optional
//! drift and scripted bursts), and, for ransomware-like behavior, a damage
//! specification in files modified per second of execution.
//!
//! Archetypes are plain data and load from a JSON library file, so captured
//! real traces can replace the synthetic ones without touching code.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{feature, Label};

/// Additive burst: `gain` is added to the feature during
/// `[start_offset_s, start_offset_s + duration_s)` of the process lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub start_offset_s: u64,
    pub duration_s: u64,
    pub gain: f64,
}

/// Generator for one feature of one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureGen {
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub drift_per_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bursts: Vec<BurstSpec>,
}

/// Per-feature generators keyed by canonical feature name. Features not
/// mentioned stay at a constant 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureProfile(pub BTreeMap<String, FeatureGen>);

impl FeatureProfile {
    /// Expand to an index-aligned generator table, rejecting unknown names.
    pub fn resolve(&self) -> Result<Vec<FeatureGen>> {
        let mut table = vec![FeatureGen::default(); feature::COUNT];
        for (name, gen) in &self.0 {
            let idx = feature::NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(format!("unknown feature name {name:?}")))?;
            table[idx] = gen.clone();
        }
        Ok(table)
    }
}

/// Files-modified accrual for ransomware-like processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageSpec {
    /// Seconds after process birth before damage starts.
    pub onset_delay_s: u64,
    pub files_per_second: f64,
}

/// One node of an archetype's process tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessTemplate {
    /// Seconds after the parent's birth (after app launch for the root).
    #[serde(default)]
    pub spawn_offset_s: u64,
    pub duration_s: u64,
    /// Whether this node accrues the archetype's damage spec.
    #[serde(default)]
    pub does_damage: bool,
    /// Feature profile override; the archetype profile applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<FeatureProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProcessTemplate>,
}

impl ProcessTemplate {
    pub fn process_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.process_count()).sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.duration_s == 0 {
            return Err(Error::config("process template duration must be > 0"));
        }
        if let Some(profile) = &self.profile {
            profile.resolve()?;
        }
        for child in &self.children {
            child.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppArchetype {
    pub name: String,
    pub label: Label,
    pub root: ProcessTemplate,
    pub profile: FeatureProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageSpec>,
}

impl AppArchetype {
    pub fn validate(&self) -> Result<()> {
        self.profile.resolve()?;
        self.root.validate()?;
        if let Some(d) = &self.damage {
            if d.files_per_second < 0.0 {
                return Err(Error::config(format!(
                    "{}: files_per_second must be >= 0",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

const LIBRARY_FORMAT: &str = "prockill.archetypes.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeLibrary {
    pub archetypes: Vec<AppArchetype>,
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    format: String,
    archetypes: Vec<AppArchetype>,
}

impl ArchetypeLibrary {
    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::config("archetype library is empty"));
        }
        for a in &self.archetypes {
            a.validate()?;
        }
        Ok(())
    }

    pub fn with_label(&self, label: Label) -> Vec<&AppArchetype> {
        self.archetypes.iter().filter(|a| a.label == label).collect()
    }

    /// Restrict to a subset of archetype names (e.g. ransomware-only runs).
    pub fn filtered(&self, keep: &dyn Fn(&AppArchetype) -> bool) -> ArchetypeLibrary {
        ArchetypeLibrary {
            archetypes: self.archetypes.iter().filter(|a| keep(a)).cloned().collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = LibraryFile {
            format: LIBRARY_FORMAT.to_string(),
            archetypes: self.archetypes.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::config(format!("serialize archetype library: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let file: LibraryFile = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: not an archetype library: {e}", path.display())))?;
        if file.format != LIBRARY_FORMAT {
            return Err(Error::config(format!(
                "{}: unsupported library format {:?}",
                path.display(),
                file.format
            )));
        }
        let lib = ArchetypeLibrary {
            archetypes: file.archetypes,
        };
        lib.validate()?;
        Ok(lib)
    }

    /// Built-in library: four benign desktop archetypes and two malicious
    /// ones. The bursty benign archetype transiently resembles malicious
    /// I/O so false-positive pressure exists in synthetic corpora.
    pub fn builtin() -> Self {
        let lib = ArchetypeLibrary {
            archetypes: vec![
                benign_idle(),
                benign_worker(),
                benign_bursty(),
                benign_server(),
                malicious_ransomware(),
                malicious_beacon(),
            ],
        };
        debug_assert!(lib.validate().is_ok());
        lib
    }
}

fn gen(base: f64, jitter: f64) -> FeatureGen {
    FeatureGen {
        base,
        jitter,
        drift_per_s: 0.0,
        bursts: Vec::new(),
    }
}

fn profile(entries: &[(&str, FeatureGen)]) -> FeatureProfile {
    FeatureProfile(
        entries
            .iter()
            .map(|(name, g)| (name.to_string(), g.clone()))
            .collect(),
    )
}

fn benign_idle() -> AppArchetype {
    AppArchetype {
        name: "benign_idle".to_string(),
        label: Label::Benign,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 50,
            does_damage: false,
            profile: None,
            children: Vec::new(),
        },
        profile: profile(&[
            ("cpu_user_pct", gen(2.0, 0.8)),
            ("cpu_system_pct", gen(1.0, 0.5)),
            ("mem_total_bytes", gen(8.0e7, 5.0e6)),
            ("mem_physical_bytes", gen(4.0e7, 3.0e6)),
            ("thread_count", gen(3.0, 0.5)),
            ("handle_count", gen(40.0, 5.0)),
            ("io_read_bytes", gen(2.0e4, 1.0e4)),
            ("io_write_bytes", gen(5.0e3, 3.0e3)),
            ("io_read_count", gen(4.0, 2.0)),
            ("io_write_count", gen(2.0, 1.0)),
            ("cmdline_arg_count", gen(2.0, 0.0)),
            ("process_priority", gen(0.0, 0.0)),
        ]),
        damage: None,
    }
}

fn benign_worker() -> AppArchetype {
    AppArchetype {
        name: "benign_worker".to_string(),
        label: Label::Benign,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 55,
            does_damage: false,
            profile: None,
            children: vec![ProcessTemplate {
                spawn_offset_s: 2,
                duration_s: 40,
                does_damage: false,
                profile: None,
                children: Vec::new(),
            }],
        },
        profile: profile(&[
            ("cpu_user_pct", gen(25.0, 5.0)),
            ("cpu_system_pct", gen(8.0, 2.0)),
            ("mem_total_bytes", gen(2.0e8, 1.5e7)),
            ("mem_physical_bytes", gen(1.2e8, 8.0e6)),
            ("thread_count", gen(6.0, 1.0)),
            ("handle_count", gen(90.0, 10.0)),
            ("io_read_bytes", gen(3.0e5, 1.0e5)),
            ("io_write_bytes", gen(1.5e5, 5.0e4)),
            ("io_read_count", gen(40.0, 10.0)),
            ("io_write_count", gen(25.0, 8.0)),
            ("io_other_count", gen(10.0, 3.0)),
            ("cmdline_arg_count", gen(3.0, 0.0)),
        ]),
        damage: None,
    }
}

fn benign_bursty() -> AppArchetype {
    // looks like ransomware I/O for a few seconds at a time, at a lower level
    let write_bursts = vec![
        BurstSpec { start_offset_s: 8, duration_s: 4, gain: 3.2e6 },
        BurstSpec { start_offset_s: 30, duration_s: 3, gain: 2.6e6 },
    ];
    AppArchetype {
        name: "benign_bursty".to_string(),
        label: Label::Benign,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 55,
            does_damage: false,
            profile: None,
            children: vec![ProcessTemplate {
                spawn_offset_s: 1,
                duration_s: 30,
                does_damage: false,
                profile: None,
                children: Vec::new(),
            }],
        },
        profile: profile(&[
            ("cpu_user_pct", FeatureGen {
                base: 10.0,
                jitter: 3.0,
                drift_per_s: 0.0,
                bursts: vec![
                    BurstSpec { start_offset_s: 8, duration_s: 4, gain: 35.0 },
                    BurstSpec { start_offset_s: 30, duration_s: 3, gain: 28.0 },
                ],
            }),
            ("cpu_system_pct", gen(4.0, 1.5)),
            ("mem_total_bytes", gen(1.5e8, 1.0e7)),
            ("mem_physical_bytes", gen(9.0e7, 6.0e6)),
            ("thread_count", gen(5.0, 1.0)),
            ("handle_count", gen(70.0, 8.0)),
            ("io_read_bytes", gen(1.0e5, 4.0e4)),
            ("io_write_bytes", FeatureGen {
                base: 2.0e4,
                jitter: 1.0e4,
                drift_per_s: 0.0,
                bursts: write_bursts,
            }),
            ("io_write_count", FeatureGen {
                base: 10.0,
                jitter: 4.0,
                drift_per_s: 0.0,
                bursts: vec![
                    BurstSpec { start_offset_s: 8, duration_s: 4, gain: 450.0 },
                    BurstSpec { start_offset_s: 30, duration_s: 3, gain: 380.0 },
                ],
            }),
            ("io_read_count", gen(15.0, 5.0)),
            ("cmdline_arg_count", gen(4.0, 0.0)),
        ]),
        damage: None,
    }
}

fn benign_server() -> AppArchetype {
    AppArchetype {
        name: "benign_server".to_string(),
        label: Label::Benign,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 60,
            does_damage: false,
            profile: None,
            children: Vec::new(),
        },
        profile: profile(&[
            ("cpu_user_pct", gen(12.0, 4.0)),
            ("cpu_system_pct", gen(6.0, 2.0)),
            ("mem_total_bytes", gen(2.5e8, 2.0e7)),
            ("mem_physical_bytes", gen(1.5e8, 1.0e7)),
            ("thread_count", gen(12.0, 2.0)),
            ("handle_count", gen(120.0, 12.0)),
            ("io_read_bytes", gen(8.0e4, 3.0e4)),
            ("io_write_bytes", gen(6.0e4, 2.0e4)),
            ("io_read_count", gen(20.0, 6.0)),
            ("io_write_count", gen(15.0, 5.0)),
            ("tcp_packet_count", gen(25.0, 8.0)),
            ("open_connection_count", gen(6.0, 2.0)),
            ("port_status_listen", gen(2.0, 0.5)),
            ("port_status_established", gen(4.0, 1.0)),
            ("cmdline_arg_count", gen(5.0, 0.0)),
        ]),
        damage: None,
    }
}

fn malicious_ransomware() -> AppArchetype {
    // archetype profile = encryption payload; the dropper root and the
    // enumeration helper override it
    let dropper = profile(&[
        ("cpu_user_pct", gen(12.0, 3.0)),
        ("cpu_system_pct", gen(30.0, 5.0)),
        ("mem_total_bytes", gen(1.0e8, 8.0e6)),
        ("mem_physical_bytes", gen(6.0e7, 5.0e6)),
        ("thread_count", gen(4.0, 0.8)),
        ("handle_count", gen(70.0, 8.0)),
        ("io_read_bytes", gen(8.0e5, 2.0e5)),
        ("io_read_count", gen(120.0, 25.0)),
        ("io_other_count", gen(45.0, 8.0)),
        ("cmdline_arg_count", gen(8.0, 1.0)),
    ]);
    let helper = profile(&[
        ("cpu_user_pct", gen(20.0, 4.0)),
        ("cpu_system_pct", gen(10.0, 2.0)),
        ("mem_total_bytes", gen(9.0e7, 6.0e6)),
        ("mem_physical_bytes", gen(5.0e7, 4.0e6)),
        ("thread_count", gen(3.0, 0.5)),
        ("handle_count", gen(60.0, 6.0)),
        ("io_read_bytes", gen(1.8e6, 3.0e5)),
        ("io_read_count", gen(500.0, 80.0)),
        ("io_other_count", gen(35.0, 6.0)),
        ("cmdline_arg_count", gen(6.0, 1.0)),
    ]);
    AppArchetype {
        name: "malicious_ransomware".to_string(),
        label: Label::Malicious,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 58,
            does_damage: false,
            profile: Some(dropper),
            children: vec![
                ProcessTemplate {
                    spawn_offset_s: 2,
                    duration_s: 54,
                    does_damage: true,
                    profile: None,
                    children: Vec::new(),
                },
                ProcessTemplate {
                    spawn_offset_s: 3,
                    duration_s: 18,
                    does_damage: false,
                    profile: Some(helper),
                    children: Vec::new(),
                },
            ],
        },
        profile: profile(&[
            ("cpu_user_pct", gen(55.0, 8.0)),
            ("cpu_system_pct", gen(18.0, 4.0)),
            ("mem_total_bytes", gen(3.0e8, 2.0e7)),
            ("mem_physical_bytes", gen(2.0e8, 1.5e7)),
            ("thread_count", gen(8.0, 1.0)),
            ("handle_count", FeatureGen {
                base: 150.0,
                jitter: 15.0,
                drift_per_s: 2.0,
                bursts: Vec::new(),
            }),
            ("io_read_bytes", gen(2.5e6, 5.0e5)),
            ("io_write_bytes", gen(5.0e6, 8.0e5)),
            ("io_read_count", gen(350.0, 60.0)),
            ("io_write_count", gen(700.0, 100.0)),
            ("io_other_count", gen(60.0, 10.0)),
            ("cmdline_arg_count", gen(2.0, 0.0)),
        ]),
        damage: Some(DamageSpec {
            onset_delay_s: 1,
            files_per_second: 12.0,
        }),
    }
}

fn malicious_beacon() -> AppArchetype {
    let exfil = profile(&[
        ("cpu_user_pct", gen(15.0, 3.0)),
        ("cpu_system_pct", gen(5.0, 1.5)),
        ("mem_total_bytes", gen(1.1e8, 8.0e6)),
        ("mem_physical_bytes", gen(7.0e7, 5.0e6)),
        ("thread_count", gen(4.0, 0.6)),
        ("handle_count", gen(55.0, 6.0)),
        ("io_read_bytes", gen(2.2e6, 4.0e5)),
        ("io_read_count", gen(280.0, 50.0)),
        ("tcp_packet_count", gen(70.0, 12.0)),
        ("open_connection_count", gen(3.0, 1.0)),
        ("cmdline_arg_count", gen(3.0, 0.0)),
    ]);
    AppArchetype {
        name: "malicious_beacon".to_string(),
        label: Label::Malicious,
        root: ProcessTemplate {
            spawn_offset_s: 0,
            duration_s: 60,
            does_damage: false,
            profile: None,
            children: vec![ProcessTemplate {
                spawn_offset_s: 5,
                duration_s: 30,
                does_damage: false,
                profile: Some(exfil),
                children: Vec::new(),
            }],
        },
        profile: profile(&[
            ("cpu_user_pct", gen(6.0, 2.0)),
            ("cpu_system_pct", gen(3.0, 1.0)),
            ("mem_total_bytes", gen(9.0e7, 6.0e6)),
            ("mem_physical_bytes", gen(5.5e7, 4.0e6)),
            ("thread_count", gen(3.0, 0.5)),
            ("handle_count", gen(50.0, 5.0)),
            ("io_read_bytes", gen(4.0e4, 2.0e4)),
            ("io_write_bytes", gen(2.0e4, 1.0e4)),
            ("udp_packet_count", gen(45.0, 10.0)),
            ("tcp_packet_count", gen(30.0, 8.0)),
            ("open_connection_count", gen(5.0, 1.0)),
            ("port_status_other", gen(2.0, 0.5)),
            ("cmdline_arg_count", gen(4.0, 0.0)),
        ]),
        damage: None,
    }
}
