//! Generate a multi-application scenario from the built-in archetype
//! library and export it in the on-disk formats (line-delimited traces plus
//! the ground-truth sidecar).
//!
//! Run with `cargo run --example generate_scenario`.

use prockill::sim::{generate_scenario, ArchetypeLibrary, ScenarioConfig};
use prockill::telemetry::feature;

fn main() {
    let library = ArchetypeLibrary::builtin();
    println!("archetype library:");
    for a in &library.archetypes {
        println!(
            "  {:<22} {:<9} {} process(es){}",
            a.name,
            a.label.to_string(),
            a.root.process_count(),
            a.damage
                .map(|d| format!(
                    ", damage {} files/s after {}s",
                    d.files_per_second, d.onset_delay_s
                ))
                .unwrap_or_default()
        );
    }

    let config = ScenarioConfig {
        benign_app_count: 8,
        malicious_app_count: 1,
        stagger_s: 2,
        duration_s: 60,
        seed: 42,
    };
    let scenario = generate_scenario(&config, &library).expect("valid config");

    println!("\nscenario seed {}: {} applications", config.seed, scenario.apps.len());
    for app in &scenario.apps {
        println!(
            "  app {:>2}: {:<22} {:<9} launches at t={}",
            app.app_id, app.archetype, app.label.to_string(), app.launch_tick
        );
    }
    println!("\nprocess tree ({} processes):", scenario.process_count());
    for p in &scenario.processes {
        println!(
            "  pid {:>5} (parent {:>5}) app {:>2}: born t={:<3} runs {:>2}s{}",
            p.pid,
            p.parent.map(|x| x.to_string()).unwrap_or_else(|| "-".to_string()),
            p.app_id,
            p.birth_tick,
            p.duration_s,
            if p.damage.is_some() { "  [damage]" } else { "" }
        );
    }

    // peek at one malicious process's feature stream
    let hot = scenario
        .processes
        .iter()
        .find(|p| p.damage.is_some())
        .or_else(|| {
            scenario
                .processes
                .iter()
                .find(|p| scenario.label_of_app(p.app_id).is_malicious())
        })
        .expect("a malicious process exists");
    println!("\nmalicious pid {} io_write_bytes per second:", hot.pid);
    let col: Vec<String> = hot
        .rows
        .iter()
        .take(10)
        .map(|r| format!("{:.2e}", r[feature::IO_WRITE_BYTES]))
        .collect();
    println!("  first 10 ticks: {}", col.join(" "));

    let out = std::env::temp_dir().join("prockill-example-scenario");
    scenario.save_dir(&out).expect("writable temp dir");
    println!("\nexported traces.jsonl + truth.json -> {}", out.display());

    let lib_path = out.join("library.json");
    library.save(&lib_path).expect("library export");
    println!("editable archetype library -> {}", lib_path.display());
}
