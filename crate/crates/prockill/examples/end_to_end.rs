//! Full pipeline on a synthetic corpus: generate scenarios, train a GRU
//! with the kill-aware loss, calibrate its threshold against online
//! killing, distill it into a snapshot forest, and measure classification
//! accuracy and ransomware damage reduction on held-out scenarios.
//!
//! Run with `cargo run --example end_to_end`.

use std::time::Instant;

use prockill::decision;
use prockill::forest::{distill, DistillConfig, ForestConfig};
use prockill::metrics::{accuracy, fpr, fnr_over_time};
use prockill::model::{train, Hyperparameters, LossSpec, ModifiedVariant, TrainOptions};
use prockill::sim::{
    generate_scenario, run_with_detector, unkilled_damage, ArchetypeLibrary, Scenario,
    ScenarioConfig,
};
use prockill::telemetry::{Label, ProcessTrace};

fn scenario_suite(library: &ArchetypeLibrary) -> Vec<Scenario> {
    // 20 scenarios, from small (3 apps) up to the full 36-app scale
    let sizes = [3usize, 6, 10, 14, 35];
    (0..20)
        .map(|i| {
            let config = ScenarioConfig {
                benign_app_count: sizes[i % sizes.len()],
                malicious_app_count: 1 + (i % 2),
                stagger_s: 1,
                duration_s: 60,
                seed: 100 + i as u64,
            };
            generate_scenario(&config, library).expect("valid scenario config")
        })
        .collect()
}

fn main() {
    let started = Instant::now();
    // ransomware-only malicious pool so damage is measurable on every
    // malicious app
    let library = ArchetypeLibrary::builtin()
        .filtered(&|a| a.label == Label::Benign || a.name == "malicious_ransomware");

    let scenarios = scenario_suite(&library);
    let (train_scenarios, rest) = scenarios.split_at(14);
    let (val_scenarios, test_scenarios) = rest.split_at(1);
    println!(
        "suite: {} train / {} val / {} test scenarios, biggest has {} processes",
        train_scenarios.len(),
        val_scenarios.len(),
        test_scenarios.len(),
        scenarios.iter().map(|s| s.process_count()).max().unwrap()
    );

    let train_traces: Vec<ProcessTrace> = train_scenarios
        .iter()
        .flat_map(|s| s.to_traces())
        .collect();
    println!(
        "training corpus: {} traces, {} snapshots",
        train_traces.len(),
        train_traces.iter().map(|t| t.snapshots.len()).sum::<usize>()
    );

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
    let outcome = train(&train_traces, &hyper, &TrainOptions::default()).expect("train");
    println!("epoch losses: {:?}", outcome.epoch_loss);
    let mut teacher = outcome.model;

    let sweep = decision::threshold_sweep(&val_scenarios[0], &teacher, &decision::default_grid())
        .expect("sweep");
    teacher.threshold = sweep.best_theta;
    println!("calibrated theta = {}", teacher.threshold);
    for row in sweep.rows.iter().step_by(10) {
        println!(
            "  theta {:.2}: fpr {:.4} fnr_over_time {:.4} combined {:.4}",
            row.theta, row.fpr, row.fnr_over_time, row.combined
        );
    }

    let (student, report) = distill(
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
    .expect("distill");
    println!(
        "distilled: agreement {:.4}, teacher positive fraction {:.4}",
        report.agreement, report.teacher_positive_frac
    );

    // held-out evaluation: student in the kill loop vs. the no-detector баseline
    let mut all_outcomes = Vec::new();
    let mut damage_with = 0.0;
    let mut damage_without = 0.0;
    for scenario in test_scenarios {
        let run = run_with_detector(scenario, &student, 0.5);
        damage_with += run.damage.total();
        damage_without += unkilled_damage(scenario).total();
        all_outcomes.extend(run.outcomes);
    }
    let acc = accuracy(&all_outcomes);
    let (fpr_v, _) = fpr(&all_outcomes);
    let (fnr_t, _) = fnr_over_time(&all_outcomes);
    println!(
        "test split: {} processes, accuracy {:.4}, fpr {:.4}, fnr_over_time {:.4}",
        all_outcomes.len(),
        acc,
        fpr_v,
        fnr_t
    );
    println!(
        "ransomware damage: {:.0} files with detector vs {:.0} without ({:.2}% reduction)",
        damage_with,
        damage_without,
        (1.0 - damage_with / damage_without) * 100.0
    );
    println!("total time: {:.1}s", started.elapsed().as_secs_f64());
}
