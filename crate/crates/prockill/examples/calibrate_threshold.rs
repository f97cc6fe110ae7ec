//! Threshold calibration: replay a validation scenario with online killing
//! at each threshold in [0.5, 1.0] and pick the one minimizing the mean of
//! FPR and FNR-over-time. A briefly trained model is used on purpose so the
//! curve has visible shape.
//!
//! Run with `cargo run --example calibrate_threshold`.

use prockill::decision::{default_grid, threshold_sweep};
use prockill::model::{train, Hyperparameters, LossSpec, TrainOptions};
use prockill::sim::{generate_scenario, ArchetypeLibrary, ScenarioConfig};
use prockill::telemetry::ProcessTrace;

fn main() {
    let library = ArchetypeLibrary::builtin();
    let train_traces: Vec<ProcessTrace> = (0..3)
        .flat_map(|i| {
            generate_scenario(
                &ScenarioConfig {
                    benign_app_count: 8,
                    malicious_app_count: 1,
                    stagger_s: 1,
                    duration_s: 60,
                    seed: 700 + i,
                },
                &library,
            )
            .unwrap()
            .to_traces()
        })
        .collect();

    // a single epoch of plain MSE: accurate enough to rank processes but
    // eager enough to throw false positives at low thresholds
    let hyper = Hyperparameters {
        hidden_neurons: 16,
        depth: 1,
        batch_size: 64,
        epochs: 1,
        dropout_rate: 0.0,
        window_size: 4,
        loss: LossSpec::mse(),
        seed: 3,
    };
    let model = train(&train_traces, &hyper, &TrainOptions::default())
        .expect("train")
        .model;

    let val = generate_scenario(
        &ScenarioConfig {
            benign_app_count: 14,
            malicious_app_count: 1,
            stagger_s: 1,
            duration_s: 60,
            seed: 800,
        },
        &library,
    )
    .unwrap();

    let sweep = threshold_sweep(&val, &model, &default_grid()).expect("sweep");
    println!("theta    fpr      fnr_over_time  combined");
    for row in sweep.rows.iter().step_by(5) {
        println!(
            "{:<8.2} {:<8.4} {:<14.4} {:<8.4}",
            row.theta, row.fpr, row.fnr_over_time, row.combined
        );
    }
    println!("\nbest theta = {} (ties break toward fewer kills)", sweep.best_theta);
}
