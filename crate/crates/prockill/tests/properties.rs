//! Property tests for the format and metric invariants, plus the
//! brute-force report recomputation oracle.

use proptest::collection::vec;
use proptest::prelude::*;

use prockill::forest::{DecisionTree, ForestClassifier, ForestConfig, TreeNode};
use prockill::metrics::{fnr_over_time, EvaluationReport, ProcessOutcome};
use prockill::model::{modified_loss, ModifiedVariant};
use prockill::telemetry::{
    compute_stats, denormalize, feature, normalize, read_traces, write_traces, FeatureVector,
    Label, NormalizationStats, ProcessSnapshot, ProcessTrace,
};

fn feature_vector() -> impl Strategy<Value = FeatureVector> {
    vec(-1.0e9..1.0e9f64, feature::COUNT)
        .prop_map(|v| FeatureVector(std::array::from_fn(|i| v[i])))
}

fn trace(pid: u32) -> impl Strategy<Value = ProcessTrace> {
    (vec(feature_vector(), 1..8), any::<bool>(), 0u64..50).prop_map(
        move |(rows, malicious, start)| {
            let n = rows.len() as u64;
            ProcessTrace {
                process_id: pid,
                app_id: pid / 4,
                label: if malicious { Label::Malicious } else { Label::Benign },
                snapshots: rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, features)| ProcessSnapshot {
                        process_id: pid,
                        parent_id: if pid.is_multiple_of(3) { None } else { Some(pid - 1) },
                        app_id: pid / 4,
                        tick: start + i as u64,
                        features,
                    })
                    .collect(),
                unkilled_duration_s: n,
            }
        },
    )
}

fn traces() -> impl Strategy<Value = Vec<ProcessTrace>> {
    (1usize..6).prop_flat_map(|n| {
        (0..n as u32)
            .map(|pid| trace(pid * 7 + 1).boxed())
            .collect::<Vec<_>>()
    })
}

proptest! {
    #[test]
    fn trace_file_roundtrip_is_identity(ts in traces()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_traces(&ts, &path).unwrap();
        let back = read_traces(&path).unwrap();
        let mut sorted = ts.clone();
        sorted.sort_by_key(|t| (t.app_id, t.process_id));
        prop_assert_eq!(back, sorted);
    }

    #[test]
    fn normalization_is_invertible(v in feature_vector(), raw_stats in vec((-1.0e6..1.0e6f64, 1.0e-3..1.0e6f64), feature::COUNT)) {
        let stats = NormalizationStats {
            mean: raw_stats.iter().map(|(m, _)| *m).collect(),
            std: raw_stats.iter().map(|(_, s)| *s).collect(),
        };
        let back = denormalize(&normalize(&v, &stats), &stats);
        for f in 0..feature::COUNT {
            let rel = (back[f] - v[f]).abs() / v[f].abs().max(1.0);
            prop_assert!(rel < 1e-9, "feature {}: {} vs {}", f, back[f], v[f]);
        }
    }

    #[test]
    fn stats_are_order_independent(ts in traces(), seed in any::<u64>()) {
        let baseline = compute_stats(&ts).unwrap();
        let mut shuffled = ts.clone();
        // cheap deterministic shuffle
        let n = shuffled.len();
        for i in 0..n {
            let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
            shuffled.swap(i, j);
        }
        prop_assert_eq!(compute_stats(&shuffled).unwrap(), baseline);
    }

    #[test]
    fn kill_aware_loss_is_nonnegative(
        p in vec(0.0..=1.0f64, 1..20),
        seed in any::<u64>(),
    ) {
        let y: Vec<f64> = (0..p.len()).map(|i| ((seed >> (i % 60)) & 1) as f64).collect();
        let t: Vec<f64> = p.iter().map(|x| (x * 0.73 + 0.11).min(1.0)).collect();
        let loss = modified_loss(&p, &y, &t, ModifiedVariant::Default).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn forest_vote_survives_tree_reordering(
        classes in vec(0u8..=1, 1..15),
        v in feature_vector(),
    ) {
        let forest = ForestClassifier {
            trees: classes
                .iter()
                .map(|&c| DecisionTree { nodes: vec![TreeNode::Leaf { class: c }] })
                .collect(),
            tree_seeds: vec![0; classes.len()],
            config: ForestConfig::default(),
        };
        let mut reversed = forest.clone();
        reversed.trees.reverse();
        prop_assert_eq!(forest.predict(&v), reversed.predict(&v));
    }

    #[test]
    fn miss_rate_over_time_bounded_and_monotone(
        durations in vec(1u64..200, 1..12),
        cut in 0.0..=1.0f64,
    ) {
        let make = |runtimes: &[u64]| -> Vec<ProcessOutcome> {
            durations
                .iter()
                .zip(runtimes)
                .enumerate()
                .map(|(i, (&d, &r))| ProcessOutcome {
                    process_id: i as u32,
                    app_id: 0,
                    label: Label::Malicious,
                    birth_tick: 0,
                    unkilled_duration_s: d,
                    runtime_s: r,
                    killed_at: (r < d).then_some(r),
                    verdict_malicious: r < d,
                })
                .collect()
        };
        let full: Vec<u64> = durations.clone();
        let cut_runtimes: Vec<u64> = durations.iter().map(|&d| ((d as f64) * cut) as u64).collect();

        let (rate_full, _) = fnr_over_time(&make(&full));
        let (rate_cut, _) = fnr_over_time(&make(&cut_runtimes));
        prop_assert!((0.0..=1.0).contains(&rate_full));
        prop_assert!((0.0..=1.0).contains(&rate_cut));
        prop_assert!(rate_full == 1.0);
        // earlier kills never increase the time-weighted miss rate
        prop_assert!(rate_cut <= rate_full);
    }
}

/// Recompute every report rate from nothing but the raw event log and the
/// scenario script, and demand an exact match with the engine's outcomes.
#[test]
fn report_rates_match_brute_force_event_log_pass() {
    use prockill::sim::{
        generate_scenario, run_with_detector, ArchetypeLibrary, ScenarioConfig, SimEvent,
    };

    struct Twitchy;
    impl prockill::sim::Detector for Twitchy {
        fn window_len(&self) -> usize {
            1
        }
        fn score(&self, pid: u32, history: &[FeatureVector]) -> f64 {
            ((pid as usize * 13 + history.len() * 31) % 100) as f64 / 100.0
        }
    }

    let library = ArchetypeLibrary::builtin();
    for seed in [5u64, 23, 77] {
        let scenario = generate_scenario(
            &ScenarioConfig {
                benign_app_count: 7,
                malicious_app_count: 2,
                stagger_s: 1,
                duration_s: 50,
                seed,
            },
            &library,
        )
        .unwrap();
        let run = run_with_detector(&scenario, &Twitchy, 0.85);
        let report = EvaluationReport::compute("val", "twitchy", run.outcomes.clone());

        // independent pass: derive per-process records from events alone
        let brute: Vec<ProcessOutcome> = scenario
            .processes
            .iter()
            .map(|p| {
                let killed_at = run.events.iter().find_map(|e| match e {
                    SimEvent::Kill { tick, pid, .. } | SimEvent::Suppress { tick, pid }
                        if *pid == p.pid =>
                    {
                        Some(*tick)
                    }
                    _ => None,
                });
                let spawned = run
                    .events
                    .iter()
                    .any(|e| matches!(e, SimEvent::Spawn { pid, .. } if *pid == p.pid));
                let runtime = match killed_at {
                    Some(k) if !spawned => {
                        let _ = k;
                        0
                    }
                    Some(k) => k.min(p.end_tick()).saturating_sub(p.birth_tick),
                    None => p.duration_s,
                };
                ProcessOutcome {
                    process_id: p.pid,
                    app_id: p.app_id,
                    label: scenario.label_of_app(p.app_id),
                    birth_tick: p.birth_tick,
                    unkilled_duration_s: p.duration_s,
                    runtime_s: runtime,
                    killed_at,
                    verdict_malicious: killed_at.is_some(),
                }
            })
            .collect();
        let recomputed = EvaluationReport::compute("val", "twitchy", brute);

        assert_eq!(report.accuracy, recomputed.accuracy);
        assert_eq!(report.fpr, recomputed.fpr);
        assert_eq!(report.fnr, recomputed.fnr);
        assert_eq!(report.fpr_over_time, recomputed.fpr_over_time);
        assert_eq!(report.fnr_over_time, recomputed.fnr_over_time);
        assert_eq!(report.combined, recomputed.combined);
    }
}
