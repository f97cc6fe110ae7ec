//! Dry-run the live monitor against the real host for a few seconds: train
//! a forest on synthetic data, then sample every visible process at 1 Hz
//! and log what the detector would do. No kill signal is ever sent without
//! `--enforce`, and this example never sets it.
//!
//! Run with `cargo run --example live_monitor` (Linux).

use prockill::cli::{run_monitor, MonitorOptions};
use prockill::forest::{distill, DistillConfig, ForestConfig};
use prockill::model::{train, Hyperparameters, LossSpec, ModifiedVariant, TrainOptions};
use prockill::sim::{generate_scenario, ArchetypeLibrary, ScenarioConfig};
use prockill::telemetry::ProcessTrace;

fn main() {
    let library = ArchetypeLibrary::builtin();
    let train_traces: Vec<ProcessTrace> = (0..4)
        .flat_map(|i| {
            generate_scenario(
                &ScenarioConfig {
                    benign_app_count: 8,
                    malicious_app_count: 1,
                    stagger_s: 1,
                    duration_s: 60,
                    seed: 20 + i,
                },
                &library,
            )
            .unwrap()
            .to_traces()
        })
        .collect();
    let hyper = Hyperparameters {
        hidden_neurons: 16,
        depth: 1,
        batch_size: 64,
        epochs: 6,
        dropout_rate: 0.0,
        window_size: 4,
        loss: LossSpec::modified(ModifiedVariant::Default),
        seed: 7,
    };
    let teacher = train(&train_traces, &hyper, &TrainOptions::default())
        .unwrap()
        .model;
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

    println!("dry-run monitoring this host for 5 sweeps at 1 Hz; events follow as JSON lines\n");
    let options = MonitorOptions {
        enforce: false,
        allowlist_path: None,
        interval_ms: 1000,
        max_ticks: Some(5),
        log_path: None, // stdout
    };
    match run_monitor(&student, &options) {
        Ok(summary) => {
            println!(
                "\n{} sweeps, mean interval {:.1} ms, {} verdicts, {} kills (dry-run)",
                summary.ticks, summary.mean_interval_ms, summary.verdicts, summary.kills
            );
        }
        Err(e) => {
            eprintln!("monitor unavailable on this host: {e}");
        }
    }
}
