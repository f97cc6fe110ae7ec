//! Deterministic multi-application scenario generator and replayer.
//!
//! A scenario is a fully materialized script: staggered application
//! launches, per-process birth ticks and durations, and every feature
//! stream, all derived from one seed. Replaying a scenario with a detector
//! (see [`engine`]) applies online verdicts and kill cascades and produces
//! the evaluation record.

mod archetype;
mod engine;

pub use archetype::{
    AppArchetype, ArchetypeLibrary, BurstSpec, DamageSpec, FeatureGen, FeatureProfile,
    ProcessTemplate,
};
pub use engine::{
    kill_records, run_with_detector, unkilled_damage, DamageLedger, Detector, KillTrigger,
    NeverFire, RunResult, SimEvent, SimulationState,
};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{feature, FeatureVector, Label, ProcessSnapshot, ProcessTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// 1 to 35 benign applications.
    pub benign_app_count: usize,
    /// 1 or 2 malicious applications.
    pub malicious_app_count: usize,
    /// Seconds between consecutive application launches.
    pub stagger_s: u64,
    /// Scenario horizon in ticks.
    pub duration_s: u64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=35).contains(&self.benign_app_count) {
            return Err(Error::config(format!(
                "benign_app_count {} outside [1, 35]",
                self.benign_app_count
            )));
        }
        if !(1..=2).contains(&self.malicious_app_count) {
            return Err(Error::config(format!(
                "malicious_app_count {} outside [1, 2]",
                self.malicious_app_count
            )));
        }
        if self.duration_s == 0 {
            return Err(Error::config("duration_s must be > 0"));
        }
        Ok(())
    }
}

/// One launched application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppInstance {
    pub app_id: u32,
    pub archetype: String,
    pub label: Label,
    pub launch_tick: u64,
}

/// One scripted process with its materialized feature stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProcess {
    pub pid: u32,
    pub parent: Option<u32>,
    pub app_id: u32,
    pub birth_tick: u64,
    /// Effective unkilled duration, truncated at the scenario horizon.
    pub duration_s: u64,
    pub damage: Option<DamageSpec>,
    /// Row `i` is the feature vector at tick `birth_tick + i`.
    pub rows: Vec<FeatureVector>,
}

impl SimProcess {
    pub fn end_tick(&self) -> u64 {
        self.birth_tick + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub apps: Vec<AppInstance>,
    /// Ordered by pid.
    pub processes: Vec<SimProcess>,
}

/// Sidecar ground truth: app labels, the process tree with unkilled
/// durations and damage specs, and (for exported runs) the kill log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub config: ScenarioConfig,
    pub apps: Vec<AppInstance>,
    pub processes: Vec<TruthProcess>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kill_log: Vec<KillRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthProcess {
    pub pid: u32,
    pub ppid: Option<u32>,
    pub app_id: u32,
    pub label: Label,
    pub birth_tick: u64,
    pub unkilled_duration_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<DamageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillRecord {
    pub tick: u64,
    pub pid: u32,
    pub trigger: KillTrigger,
}

const TRUTH_FORMAT: &str = "prockill.truth.v1";

impl Scenario {
    pub fn label_of_app(&self, app_id: u32) -> Label {
        self.apps
            .iter()
            .find(|a| a.app_id == app_id)
            .map(|a| a.label)
            .unwrap_or(Label::Benign)
    }

    pub fn process_count(&self) -> usize {
        self.processes.len()
    }

    /// Export the unkilled per-process traces in the telemetry format.
    pub fn to_traces(&self) -> Vec<ProcessTrace> {
        self.processes
            .iter()
            .map(|p| ProcessTrace {
                process_id: p.pid,
                app_id: p.app_id,
                label: self.label_of_app(p.app_id),
                snapshots: p
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(i, features)| ProcessSnapshot {
                        process_id: p.pid,
                        parent_id: p.parent,
                        app_id: p.app_id,
                        tick: p.birth_tick + i as u64,
                        features: *features,
                    })
                    .collect(),
                unkilled_duration_s: p.duration_s,
            })
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            format: TRUTH_FORMAT.to_string(),
            config: self.config,
            apps: self.apps.clone(),
            processes: self
                .processes
                .iter()
                .map(|p| TruthProcess {
                    pid: p.pid,
                    ppid: p.parent,
                    app_id: p.app_id,
                    label: self.label_of_app(p.app_id),
                    birth_tick: p.birth_tick,
                    unkilled_duration_s: p.duration_s,
                    damage: p.damage,
                })
                .collect(),
            kill_log: Vec::new(),
        }
    }

    /// Rebuild a scenario from exported traces plus the ground-truth sidecar.
    pub fn assemble(traces: &[ProcessTrace], truth: &GroundTruth) -> Result<Scenario> {
        if truth.format != TRUTH_FORMAT {
            return Err(Error::input(format!(
                "unsupported ground-truth format {:?}",
                truth.format
            )));
        }
        let by_pid: std::collections::BTreeMap<u32, &ProcessTrace> =
            traces.iter().map(|t| (t.process_id, t)).collect();
        let mut processes = Vec::with_capacity(truth.processes.len());
        for tp in &truth.processes {
            let trace = by_pid.get(&tp.pid).ok_or_else(|| {
                Error::input(format!("sidecar process pid={} missing from traces", tp.pid))
            })?;
            if trace.snapshots.len() as u64 != tp.unkilled_duration_s {
                return Err(Error::input(format!(
                    "pid={}: trace has {} snapshots but sidecar says {} seconds",
                    tp.pid,
                    trace.snapshots.len(),
                    tp.unkilled_duration_s
                )));
            }
            processes.push(SimProcess {
                pid: tp.pid,
                parent: tp.ppid,
                app_id: tp.app_id,
                birth_tick: tp.birth_tick,
                duration_s: tp.unkilled_duration_s,
                damage: tp.damage,
                rows: trace.snapshots.iter().map(|s| s.features).collect(),
            });
        }
        processes.sort_by_key(|p| p.pid);
        Ok(Scenario {
            config: truth.config,
            apps: truth.apps.clone(),
            processes,
        })
    }

    /// Write `traces.jsonl` and `truth.json` into a directory.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.save_run_dir(dir, &[])
    }

    /// Export a replayed run: the unkilled traces plus the sidecar with the
    /// run's kill log embedded.
    pub fn save_run_dir(&self, dir: &Path, kill_log: &[KillRecord]) -> Result<()> {
        fs::create_dir_all(dir)?;
        crate::telemetry::write_traces(&self.to_traces(), &dir.join("traces.jsonl"))?;
        let mut truth = self.ground_truth();
        truth.kill_log = kill_log.to_vec();
        let text = serde_json::to_string_pretty(&truth)
            .map_err(|e| Error::input(format!("serialize ground truth: {e}")))?;
        fs::write(dir.join("truth.json"), text)?;
        Ok(())
    }

    /// Load a scenario directory written by [`save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Scenario> {
        let traces = crate::telemetry::read_traces(&dir.join("traces.jsonl"))?;
        let text = fs::read_to_string(dir.join("truth.json"))
            .map_err(|e| Error::input(format!("{}: {e}", dir.join("truth.json").display())))?;
        let truth: GroundTruth = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("truth.json: {e}")))?;
        Scenario::assemble(&traces, &truth)
    }
}

/// Standard normal via Box-Muller on the scenario RNG stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate a fully scripted scenario: seeded archetype draws, staggered
/// launches, and materialized feature streams. Byte-for-byte deterministic
/// for a given (config, library).
pub fn generate_scenario(
    config: &ScenarioConfig,
    library: &ArchetypeLibrary,
) -> Result<Scenario> {
    config.validate()?;
    library.validate()?;
    let benign_pool = library.with_label(Label::Benign);
    let malicious_pool = library.with_label(Label::Malicious);
    if benign_pool.is_empty() || malicious_pool.is_empty() {
        return Err(Error::config(
            "archetype library must contain both benign and malicious archetypes",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.benign_app_count + config.malicious_app_count;

    // choose which launch slots are malicious
    let mut slots: Vec<usize> = (0..total).collect();
    let mut malicious_slots = Vec::with_capacity(config.malicious_app_count);
    for _ in 0..config.malicious_app_count {
        let pick = rng.gen_range(0..slots.len());
        malicious_slots.push(slots.swap_remove(pick));
    }

    let mut apps = Vec::with_capacity(total);
    let mut processes = Vec::new();
    let mut next_pid = 1000u32;

    for slot in 0..total {
        let is_malicious = malicious_slots.contains(&slot);
        let pool = if is_malicious { &malicious_pool } else { &benign_pool };
        let archetype = pool[rng.gen_range(0..pool.len())];
        let app_id = slot as u32;
        let launch_tick = slot as u64 * config.stagger_s;
        apps.push(AppInstance {
            app_id,
            archetype: archetype.name.clone(),
            label: archetype.label,
            launch_tick,
        });
        materialize_tree(
            &archetype.root,
            archetype,
            app_id,
            None,
            launch_tick,
            config,
            &mut next_pid,
            &mut processes,
        )?;
    }

    // structural features derive from the realized tree, not the profile
    apply_structural_features(&mut processes);

    Ok(Scenario {
        config: *config,
        apps,
        processes,
    })
}

#[allow(clippy::too_many_arguments)]
fn materialize_tree(
    template: &ProcessTemplate,
    archetype: &AppArchetype,
    app_id: u32,
    parent: Option<u32>,
    parent_birth: u64,
    config: &ScenarioConfig,
    next_pid: &mut u32,
    out: &mut Vec<SimProcess>,
) -> Result<()> {
    let birth = parent_birth + template.spawn_offset_s;
    if birth >= config.duration_s {
        return Ok(()); // never spawns within the horizon
    }
    let duration = template.duration_s.min(config.duration_s - birth);
    let pid = *next_pid;
    *next_pid += 1;

    let profile = template.profile.as_ref().unwrap_or(&archetype.profile);
    let gens = profile.resolve()?;
    let mut stream_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, pid as u64));
    let mut rows = Vec::with_capacity(duration as usize);
    for i in 0..duration {
        let mut v = FeatureVector::zeros();
        for (f, gen) in gens.iter().enumerate() {
            let mut value = gen.base + gen.drift_per_s * i as f64;
            for burst in &gen.bursts {
                if i >= burst.start_offset_s && i < burst.start_offset_s + burst.duration_s {
                    value += burst.gain;
                }
            }
            if gen.jitter > 0.0 {
                value += gen.jitter * normal(&mut stream_rng);
            }
            if f != feature::PROCESS_PRIORITY {
                value = value.max(0.0);
            }
            v[f] = value;
        }
        rows.push(v);
    }

    out.push(SimProcess {
        pid,
        parent,
        app_id,
        birth_tick: birth,
        duration_s: duration,
        damage: if template.does_damage { archetype.damage } else { None },
        rows,
    });

    for child in &template.children {
        materialize_tree(child, archetype, app_id, Some(pid), birth, config, next_pid, out)?;
    }
    Ok(())
}

/// Overwrite the tree-derived features (child counts, max child pid,
/// seconds since start) with values computed from the realized forest.
fn apply_structural_features(processes: &mut [SimProcess]) {
    let spans: Vec<(u32, Option<u32>, u64, u64)> = processes
        .iter()
        .map(|p| (p.pid, p.parent, p.birth_tick, p.end_tick()))
        .collect();

    for proc in processes.iter_mut() {
        let children: Vec<&(u32, Option<u32>, u64, u64)> = spans
            .iter()
            .filter(|(_, parent, _, _)| *parent == Some(proc.pid))
            .collect();
        for (i, row) in proc.rows.iter_mut().enumerate() {
            let tick = proc.birth_tick + i as u64;
            let mut count = 0.0;
            let mut max_pid = 0.0;
            for (cpid, _, cbirth, cend) in children.iter() {
                if *cbirth <= tick && tick < *cend {
                    count += 1.0;
                    max_pid = f64::max(max_pid, *cpid as f64);
                }
            }
            row[feature::CHILD_PROCESS_COUNT] = count;
            row[feature::MAX_PROCESS_ID] = max_pid;
            row[feature::SECONDS_SINCE_START] = i as f64;
        }
    }
}
