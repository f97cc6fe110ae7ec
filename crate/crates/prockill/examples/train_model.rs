//! Train the windowed GRU classifier twice on the same corpus: once with
//! plain MSE and once with the kill-aware loss, and compare their online
//! behavior at the default threshold.
//!
//! Run with `cargo run --example train_model`.

use prockill::metrics::{fnr_over_time, fpr};
use prockill::model::{train, Hyperparameters, LossSpec, ModifiedVariant, TrainOptions};
use prockill::sim::{generate_scenario, run_with_detector, ArchetypeLibrary, ScenarioConfig};
use prockill::telemetry::ProcessTrace;

fn main() {
    let library = ArchetypeLibrary::builtin();
    let train_traces: Vec<ProcessTrace> = (0..6)
        .flat_map(|i| {
            generate_scenario(
                &ScenarioConfig {
                    benign_app_count: 8,
                    malicious_app_count: 1,
                    stagger_s: 1,
                    duration_s: 60,
                    seed: 500 + i,
                },
                &library,
            )
            .unwrap()
            .to_traces()
        })
        .collect();
    let val = generate_scenario(
        &ScenarioConfig {
            benign_app_count: 12,
            malicious_app_count: 2,
            stagger_s: 1,
            duration_s: 60,
            seed: 600,
        },
        &library,
    )
    .unwrap();

    for (name, loss) in [
        ("mse", LossSpec::mse()),
        ("kill-aware", LossSpec::modified(ModifiedVariant::Default)),
    ] {
        let hyper = Hyperparameters {
            hidden_neurons: 16,
            depth: 1,
            batch_size: 64,
            epochs: 6,
            dropout_rate: 0.0,
            window_size: 4,
            loss,
            seed: 7,
        };
        let outcome = train(&train_traces, &hyper, &TrainOptions::default()).expect("train");
        let losses: Vec<String> = outcome
            .epoch_loss
            .iter()
            .map(|l| format!("{l:.4}"))
            .collect();
        println!("{name} loss per epoch: {}", losses.join(" "));

        // online behavior at theta = 0.5, before any calibration
        let run = run_with_detector(&val, &outcome.model, 0.5);
        println!(
            "{name} online at theta=0.5: fpr {:.3}, fnr_over_time {:.3}, {} kills\n",
            fpr(&run.outcomes).0,
            fnr_over_time(&run.outcomes).0,
            run.verdicts.len()
        );
    }
}
