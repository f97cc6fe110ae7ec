//! Distill a calibrated recurrent teacher into a snapshot-only forest and
//! measure what the distillation buys: per-prediction latency without a
//! window buffer or normalization stage.
//!
//! Run with `cargo run --example distill_forest`.

use std::time::Instant;

use prockill::decision::{default_grid, threshold_sweep};
use prockill::forest::{distill, DistillConfig, ForestConfig};
use prockill::model::{train, Hyperparameters, LossSpec, ModifiedVariant, TrainOptions};
use prockill::sim::{generate_scenario, ArchetypeLibrary, ScenarioConfig};
use prockill::telemetry::{FeatureVector, ProcessTrace};

fn main() {
    let library = ArchetypeLibrary::builtin();
    let train_traces: Vec<ProcessTrace> = (0..6)
        .flat_map(|i| {
            generate_scenario(
                &ScenarioConfig {
                    benign_app_count: 10,
                    malicious_app_count: 1,
                    stagger_s: 1,
                    duration_s: 60,
                    seed: 300 + i,
                },
                &library,
            )
            .unwrap()
            .to_traces()
        })
        .collect();

    let hyper = Hyperparameters {
        hidden_neurons: 24,
        depth: 1,
        batch_size: 64,
        epochs: 6,
        dropout_rate: 0.0,
        window_size: 5,
        loss: LossSpec::modified(ModifiedVariant::Default),
        seed: 7,
    };
    let mut teacher = train(&train_traces, &hyper, &TrainOptions::default())
        .expect("train")
        .model;

    let val = generate_scenario(
        &ScenarioConfig {
            benign_app_count: 12,
            malicious_app_count: 1,
            stagger_s: 1,
            duration_s: 60,
            seed: 400,
        },
        &library,
    )
    .unwrap();
    teacher.threshold = threshold_sweep(&val, &teacher, &default_grid())
        .expect("sweep")
        .best_theta;
    println!("teacher calibrated to theta = {}", teacher.threshold);

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
        "student: {} trees, trained on {} snapshots, agreement {:.4} on {} held out",
        student.trees.len(),
        report.train_size,
        report.agreement,
        report.holdout_size
    );

    // latency: snapshot-only student vs windowed teacher on the same data
    let snapshots: Vec<FeatureVector> = train_traces
        .iter()
        .flat_map(|t| t.snapshots.iter().map(|s| s.features))
        .take(10_000)
        .collect();
    let w = teacher.hyper.window_size;

    let t0 = Instant::now();
    let mut votes = 0u64;
    for s in &snapshots {
        votes += student.predict(s) as u64;
    }
    let student_us = t0.elapsed().as_secs_f64() * 1e6 / snapshots.len() as f64;

    let t0 = Instant::now();
    let mut acc = 0.0;
    for i in 0..snapshots.len() {
        let start = (i + 1).saturating_sub(w);
        acc += teacher.score_recent_raw(&snapshots[start..=i]);
    }
    let teacher_us = t0.elapsed().as_secs_f64() * 1e6 / snapshots.len() as f64;

    println!(
        "latency over {} predictions: student {:.2} us/snapshot, teacher {:.2} us/window ({:.1}x)",
        snapshots.len(),
        student_us,
        teacher_us,
        teacher_us / student_us
    );
    println!(
        "student flagged {:.2}% of snapshots (mean teacher score {:.4})",
        votes as f64 / snapshots.len() as f64 * 100.0,
        acc / snapshots.len() as f64
    );
}
