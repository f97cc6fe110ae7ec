//! Ransomware damage case study: run seeded scenarios with no detector and
//! with the distilled forest in the kill loop, and compare how many files
//! the payloads manage to modify.
//!
//! Run with `cargo run --example ransomware_damage`.

use prockill::decision::{default_grid, threshold_sweep};
use prockill::forest::{distill, DistillConfig, ForestConfig};
use prockill::model::{train, Hyperparameters, LossSpec, ModifiedVariant, TrainOptions};
use prockill::sim::{
    generate_scenario, run_with_detector, unkilled_damage, ArchetypeLibrary, NeverFire,
    Scenario, ScenarioConfig,
};
use prockill::telemetry::{Label, ProcessTrace};

fn main() {
    // ransomware-only malicious pool so every malicious app has a damage model
    let library = ArchetypeLibrary::builtin()
        .filtered(&|a| a.label == Label::Benign || a.name == "malicious_ransomware");

    let make = |seed: u64, benign: usize| {
        generate_scenario(
            &ScenarioConfig {
                benign_app_count: benign,
                malicious_app_count: 1,
                stagger_s: 1,
                duration_s: 60,
                seed,
            },
            &library,
        )
        .unwrap()
    };

    let train_traces: Vec<ProcessTrace> = (0..8)
        .flat_map(|i| make(900 + i, 8).to_traces())
        .collect();
    let hyper = Hyperparameters {
        hidden_neurons: 16,
        depth: 1,
        batch_size: 64,
        epochs: 8,
        dropout_rate: 0.0,
        window_size: 4,
        loss: LossSpec::modified(ModifiedVariant::Default),
        seed: 7,
    };
    let mut teacher = train(&train_traces, &hyper, &TrainOptions::default())
        .unwrap()
        .model;
    let val = make(950, 14);
    teacher.threshold = threshold_sweep(&val, &teacher, &default_grid())
        .unwrap()
        .best_theta;
    let (student, _) = distill(
        &teacher,
        &train_traces,
        &DistillConfig {
            forest: ForestConfig {
                seed: 11,
                allow_single_class: true,
                ..ForestConfig::default()
            },
            holdout_frac: 0.2,
            label_subsample: None,
        },
    )
    .unwrap();

    let cases: Vec<Scenario> = (0..10).map(|i| make(1000 + i, 6 + (i as usize % 8))).collect();
    let mut total_without = 0.0;
    let mut total_with = 0.0;
    println!("scenario  files unprotected  files with detector  kill tick of payload");
    for (i, scenario) in cases.iter().enumerate() {
        let baseline = run_with_detector(scenario, &NeverFire, 0.5);
        debug_assert_eq!(baseline.damage.total(), unkilled_damage(scenario).total());
        let protected = run_with_detector(scenario, &student, 0.5);

        let payload_kill = scenario
            .processes
            .iter()
            .filter(|p| p.damage.is_some())
            .filter_map(|p| {
                protected.outcomes.iter().find(|o| o.process_id == p.pid).and_then(|o| o.killed_at)
            })
            .min();
        println!(
            "{:>8}  {:>17.0}  {:>19.0}  {}",
            i,
            baseline.damage.total(),
            protected.damage.total(),
            payload_kill.map(|t| t.to_string()).unwrap_or_else(|| "never".to_string())
        );
        total_without += baseline.damage.total();
        total_with += protected.damage.total();
    }
    println!(
        "\ntotals: {:.0} files without intervention, {:.0} with the distilled detector",
        total_without, total_with
    );
    println!(
        "reduction: {:.2}% fewer files compromised",
        (1.0 - total_with / total_without) * 100.0
    );
}
