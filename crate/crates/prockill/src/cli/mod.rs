//! Operator entry points. The `prockill` binary is a thin dispatcher over
//! these functions; every subcommand is a library call so tests and the
//! examples drive the same code.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration error,
//! 3 missing or invalid input, 4 live-sampler failure.

mod monitor;

pub use monitor::{kill_process_tree, run_monitor, MonitorOptions, MonitorSummary};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::decision;
use crate::error::{Error, Result};
use crate::forest::{self, DistillConfig, ForestClassifier, ForestConfig};
use crate::metrics::{self, EvaluationReport, ProcessOutcome};
use crate::model::{
    GruClassifier, Hyperparameters, LossSpec, ModifiedVariant, SearchObjective, SearchSpace,
    TrainOptions,
};
use crate::sim::{self, ArchetypeLibrary, Scenario, ScenarioConfig};
use crate::telemetry::read_traces;

#[derive(Parser)]
#[command(
    name = "prockill",
    version,
    about = "Run-time malicious process detection with automated killing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario (traces + ground-truth sidecar).
    Generate(GenerateArgs),
    /// Train a GRU classifier on a trace file.
    Train(TrainArgs),
    /// Random hyperparameter search.
    Search(SearchArgs),
    /// Calibrate the decision threshold on a validation scenario.
    Sweep(SweepArgs),
    /// Distill a calibrated teacher into a snapshot-only forest.
    Distill(DistillArgs),
    /// Evaluate models on a scenario; six-model table when all are given.
    Evaluate(EvaluateArgs),
    /// Live 1 Hz host monitor (dry-run unless --enforce).
    Monitor(MonitorArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory for traces.jsonl and truth.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub benign_apps: usize,
    #[arg(long, default_value_t = 1)]
    pub malicious_apps: usize,
    /// Seconds between application launches.
    #[arg(long, default_value_t = 1)]
    pub stagger: u64,
    /// Scenario length in ticks.
    #[arg(long, default_value_t = 60)]
    pub duration: u64,
    /// Archetype library file; the built-in library when omitted.
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV training log (epoch,loss).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    /// mse | modified | modified-literal | modified-prose
    #[arg(long, default_value = "modified")]
    pub loss: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on windows per class (default: smaller class size).
    #[arg(long)]
    pub balance_cap: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Validation traces for the offline objective (mean of FPR and FNR).
    #[arg(long, conflicts_with = "val_scenario")]
    pub val_traces: Option<PathBuf>,
    /// Validation scenario directory for the online kill-loop objective.
    #[arg(long)]
    pub val_scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value = "modified")]
    pub loss: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV trial log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub hidden_min: usize,
    #[arg(long, default_value_t = 5000)]
    pub hidden_max: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    pub depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256])]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub epochs_min: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs_max: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5])]
    pub dropouts: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub window_min: usize,
    #[arg(long, default_value_t = 30)]
    pub window_max: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long)]
    pub balance_cap: Option<usize>,
    /// Threshold used by the online objective during search.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Model file; updated in place with the best threshold.
    #[arg(long)]
    pub model: PathBuf,
    /// Validation scenario directory.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 51)]
    pub points: usize,
    /// Output CSV table (theta, fpr, fnr_over_time, combined).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DistillArgs {
    /// Calibrated teacher model file. Required unless --direct.
    #[arg(long, required_unless_present = "direct")]
    pub teacher: Option<PathBuf>,
    /// Train the comparison baseline directly from ground-truth labels
    /// instead of distilling from a teacher.
    #[arg(long, default_value_t = false)]
    pub direct: bool,
    #[arg(long)]
    pub traces: PathBuf,
    /// Output forest file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 16)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
    #[arg(long, default_value_t = 6)]
    pub feature_subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
    /// Optional cap on labeled snapshots (all window positions by default).
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Scenario directory (traces.jsonl + truth.json).
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// MSE-trained GRU; contributes offline-verdict rows at 0.5 and best θ.
    #[arg(long)]
    pub offline_model: Option<PathBuf>,
    /// Kill-aware-loss GRU; contributes kill-loop rows at 0.5 and best θ.
    #[arg(long)]
    pub online_model: Option<PathBuf>,
    #[arg(long)]
    pub distilled: Option<PathBuf>,
    #[arg(long)]
    pub direct: Option<PathBuf>,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-process detail records (one file per row).
    #[arg(long)]
    pub detail_dir: Option<PathBuf>,
    /// Aggregate rates per application instead of per process.
    #[arg(long, default_value_t = false)]
    pub app_level: bool,
}

#[derive(Args)]
pub struct MonitorArgs {
    /// Forest model used for snapshot scoring.
    #[arg(long)]
    pub forest: PathBuf,
    /// Actually send kill signals. Without this flag the monitor only logs
    /// what it would do.
    #[arg(long, default_value_t = false)]
    pub enforce: bool,
    /// File of exempt entries: one pid or process name per line.
    #[arg(long)]
    pub allowlist: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub interval_ms: u64,
    /// Stop after this many sweeps (runs until interrupted when omitted).
    #[arg(long)]
    pub max_ticks: Option<u64>,
    /// Event log path (JSON lines); stdout when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("prockill: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Search(args) => cmd_search(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Distill(args) => cmd_distill(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Monitor(args) => cmd_monitor(&args),
    }
}

fn parse_loss(name: &str) -> Result<LossSpec> {
    match name {
        "mse" => Ok(LossSpec::mse()),
        "modified" => Ok(LossSpec::modified(ModifiedVariant::Default)),
        "modified-literal" => Ok(LossSpec::modified(ModifiedVariant::Literal)),
        "modified-prose" => Ok(LossSpec::modified(ModifiedVariant::Prose)),
        other => Err(Error::config(format!(
            "unknown loss {other:?}; expected mse | modified | modified-literal | modified-prose"
        ))),
    }
}

fn load_library(path: &Option<PathBuf>) -> Result<ArchetypeLibrary> {
    match path {
        Some(p) => ArchetypeLibrary::load(p),
        None => Ok(ArchetypeLibrary::builtin()),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let library = load_library(&args.library)?;
    let config = ScenarioConfig {
        benign_app_count: args.benign_apps,
        malicious_app_count: args.malicious_apps,
        stagger_s: args.stagger,
        duration_s: args.duration,
        seed: args.seed,
    };
    let scenario = sim::generate_scenario(&config, &library)?;
    scenario.save_dir(&args.out)?;
    let snapshots: usize = scenario.processes.iter().map(|p| p.rows.len()).sum();
    println!(
        "generated scenario: {} apps, {} processes, {} snapshots -> {}",
        scenario.apps.len(),
        scenario.process_count(),
        snapshots,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let traces = read_traces(&args.traces)?;
    let hyper = Hyperparameters {
        hidden_neurons: args.hidden,
        depth: args.depth,
        batch_size: args.batch,
        epochs: args.epochs,
        dropout_rate: args.dropout,
        window_size: args.window,
        loss: parse_loss(&args.loss)?,
        seed: args.seed,
    };
    let mut opts = TrainOptions {
        balance_cap: args.balance_cap,
        ..TrainOptions::default()
    };
    opts.adam.learning_rate = args.learning_rate;

    let outcome = crate::model::train(&traces, &hyper, &opts)?;
    outcome.model.save(&args.out)?;
    if let Some(log) = &args.log {
        let mut text = String::from("epoch,loss\n");
        for (i, loss) in outcome.epoch_loss.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, loss));
        }
        std::fs::write(log, text)?;
    }
    println!(
        "trained model ({} epochs, final loss {:.6}) -> {}",
        outcome.epoch_loss.len(),
        outcome.epoch_loss.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_search(args: &SearchArgs) -> Result<()> {
    let traces = read_traces(&args.traces)?;
    let loss = parse_loss(&args.loss)?;
    let space = SearchSpace {
        hidden_neurons: (args.hidden_min, args.hidden_max),
        depth: args.depths.clone(),
        batch_size: args.batches.clone(),
        epochs: (args.epochs_min, args.epochs_max),
        dropout_rate: args.dropouts.clone(),
        window_size: (args.window_min, args.window_max),
    };
    let mut opts = TrainOptions {
        balance_cap: args.balance_cap,
        ..TrainOptions::default()
    };
    opts.adam.learning_rate = args.learning_rate;

    let val_traces;
    let val_scenario;
    let objective = match (&args.val_traces, &args.val_scenario) {
        (Some(path), None) => {
            val_traces = read_traces(path)?;
            SearchObjective::Offline {
                val_traces: &val_traces,
            }
        }
        (None, Some(dir)) => {
            val_scenario = Scenario::load_dir(dir)?;
            SearchObjective::Online {
                scenario: &val_scenario,
                theta: args.theta,
            }
        }
        _ => {
            return Err(Error::config(
                "exactly one of --val-traces or --val-scenario is required",
            ))
        }
    };

    let outcome = crate::model::random_search(
        &space,
        args.trials,
        loss,
        &traces,
        &objective,
        &opts,
        args.seed,
    )?;
    outcome.model.save(&args.out)?;
    if let Some(log) = &args.log {
        let mut text =
            String::from("trial,objective,hidden,depth,batch,epochs,dropout,window\n");
        for t in &outcome.trials {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t.index,
                t.objective,
                t.hyper.hidden_neurons,
                t.hyper.depth,
                t.hyper.batch_size,
                t.hyper.epochs,
                t.hyper.dropout_rate,
                t.hyper.window_size
            ));
        }
        std::fs::write(log, text)?;
    }
    println!(
        "search done: {} trials, best trial {} (objective {:.4}) -> {}",
        outcome.trials.len(),
        outcome.best.index,
        outcome.best.objective,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut model = GruClassifier::load(&args.model)?;
    let scenario = Scenario::load_dir(&args.scenario)?;
    let grid = decision::grid(args.points.max(1));
    let result = decision::threshold_sweep(&scenario, &model, &grid)?;
    decision::write_sweep_csv(&result, &args.out)?;
    model.threshold = result.best_theta;
    model.save(&args.model)?;
    println!(
        "sweep over {} thresholds: best theta = {} -> {} (model updated)",
        result.rows.len(),
        result.best_theta,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_distill(args: &DistillArgs) -> Result<()> {
    let traces = read_traces(&args.traces)?;
    let forest_config = ForestConfig {
        n_trees: args.trees,
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        feature_subsample: args.feature_subsample,
        seed: args.seed,
        allow_single_class: !args.direct,
    };

    if args.direct {
        let direct = forest::train_forest_direct(&traces, &forest_config)?;
        direct.save(&args.out)?;
        println!(
            "trained data-direct forest ({} trees on ground-truth labels) -> {}",
            direct.trees.len(),
            args.out.display()
        );
        return Ok(());
    }

    let teacher_path = args
        .teacher
        .as_ref()
        .ok_or_else(|| Error::config("--teacher is required unless --direct"))?;
    let teacher = GruClassifier::load(teacher_path)?;
    let config = DistillConfig {
        forest: forest_config,
        holdout_frac: args.holdout_frac,
        label_subsample: args.subsample,
    };
    let (student, report) = forest::distill(&teacher, &traces, &config)?;
    student.save(&args.out)?;
    println!(
        "distilled {} trees from {} labeled snapshots ({} held out): \
         teacher agreement {:.4}, teacher positive fraction {:.4} -> {}",
        student.trees.len(),
        report.train_size + report.holdout_size,
        report.holdout_size,
        report.agreement,
        report.teacher_positive_frac,
        args.out.display()
    );
    Ok(())
}

/// How a variant row is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Post-hoc verdict from the mean window score; nothing is killed, so
    /// the over-time columns are the degenerate no-intervention values.
    OfflineMean,
    /// Online detection with automatic kill cascades.
    OnlineKill,
}

/// Report plus the kill log of the run (empty for offline evaluations).
pub struct VariantOutcome {
    pub report: EvaluationReport,
    pub kill_log: Vec<sim::KillRecord>,
}

/// Evaluate one GRU or forest variant on a scenario.
pub fn evaluate_variant(
    scenario: &Scenario,
    split: &str,
    name: &str,
    detector: &dyn sim::Detector,
    theta: f64,
    mode: EvalMode,
) -> Result<VariantOutcome> {
    let (outcomes, kill_log) = match mode {
        EvalMode::OnlineKill => {
            let run = sim::run_with_detector(scenario, detector, theta);
            (run.outcomes, sim::kill_records(&run.events))
        }
        EvalMode::OfflineMean => (offline_outcomes(scenario, detector, theta)?, Vec::new()),
    };
    Ok(VariantOutcome {
        report: EvaluationReport::compute(split, name, outcomes),
        kill_log,
    })
}

fn offline_outcomes(
    scenario: &Scenario,
    detector: &dyn sim::Detector,
    theta: f64,
) -> Result<Vec<ProcessOutcome>> {
    let mut outcomes = Vec::with_capacity(scenario.processes.len());
    for p in &scenario.processes {
        let mut history: Vec<crate::telemetry::FeatureVector> = Vec::new();
        let mut scores = Vec::with_capacity(p.rows.len());
        let window_len = detector.window_len().max(1);
        for row in &p.rows {
            history.push(*row);
            if history.len() > window_len {
                history.remove(0);
            }
            scores.push(detector.score(p.pid, &history));
        }
        let final_tick = p.birth_tick + p.duration_s.saturating_sub(1);
        let verdict = decision::offline_verdict(p.pid, final_tick, &scores, theta)?;
        outcomes.push(ProcessOutcome {
            process_id: p.pid,
            app_id: p.app_id,
            label: scenario.label_of_app(p.app_id),
            birth_tick: p.birth_tick,
            unkilled_duration_s: p.duration_s,
            runtime_s: p.duration_s,
            killed_at: None,
            verdict_malicious: verdict.decision == decision::Verdict::Malicious,
        });
    }
    Ok(outcomes)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let scenario = Scenario::load_dir(&args.scenario)?;
    let mut outcomes: Vec<VariantOutcome> = Vec::new();

    if let Some(path) = &args.offline_model {
        let model = GruClassifier::load(path)?;
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            "offline_gru theta=0.5",
            &model,
            0.5,
            EvalMode::OfflineMean,
        )?);
        let best = format!("offline_gru theta={}", model.threshold);
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            &best,
            &model,
            model.threshold,
            EvalMode::OfflineMean,
        )?);
    }
    if let Some(path) = &args.online_model {
        let model = GruClassifier::load(path)?;
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            "online_gru theta=0.5",
            &model,
            0.5,
            EvalMode::OnlineKill,
        )?);
        let best = format!("online_gru theta={}", model.threshold);
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            &best,
            &model,
            model.threshold,
            EvalMode::OnlineKill,
        )?);
    }
    if let Some(path) = &args.distilled {
        let student = ForestClassifier::load(path)?;
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            "distilled_forest",
            &student,
            0.5,
            EvalMode::OnlineKill,
        )?);
    }
    if let Some(path) = &args.direct {
        let direct = ForestClassifier::load(path)?;
        outcomes.push(evaluate_variant(
            &scenario,
            &args.split,
            "direct_forest",
            &direct,
            0.5,
            EvalMode::OnlineKill,
        )?);
    }
    if outcomes.is_empty() {
        return Err(Error::config("no models given; nothing to evaluate"));
    }
    if args.app_level {
        for o in &mut outcomes {
            let rolled = metrics::rollup_to_applications(&o.report.detail);
            o.report = EvaluationReport::compute(&o.report.split, &o.report.model, rolled);
        }
    }

    let reports: Vec<EvaluationReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    metrics::write_report_csv(&reports, &args.out)?;
    if let Some(dir) = &args.detail_dir {
        std::fs::create_dir_all(dir)?;
        for (i, o) in outcomes.iter().enumerate() {
            let stem = format!("{i:02}_{}", o.report.model.replace([' ', '='], "_"));
            metrics::write_detail_jsonl(&o.report, &dir.join(format!("{stem}.jsonl")))?;
            if !o.kill_log.is_empty() {
                let text = serde_json::to_string_pretty(&o.kill_log)
                    .map_err(|e| Error::input(format!("serialize kill log: {e}")))?;
                std::fs::write(dir.join(format!("{stem}_kills.json")), text)?;
            }
        }
    }
    print!("{}", metrics::format_report_table(&reports));
    println!("report -> {}", args.out.display());
    Ok(())
}

pub fn cmd_monitor(args: &MonitorArgs) -> Result<()> {
    let forest = ForestClassifier::load(&args.forest)?;
    let options = MonitorOptions {
        enforce: args.enforce,
        allowlist_path: args.allowlist.clone(),
        interval_ms: args.interval_ms,
        max_ticks: args.max_ticks,
        log_path: args.log.clone(),
    };
    let summary = run_monitor(&forest, &options)?;
    eprintln!(
        "monitor stopped after {} sweeps: {} verdicts, {} kills ({}), mean interval {:.1} ms",
        summary.ticks,
        summary.verdicts,
        summary.kills,
        if args.enforce { "enforced" } else { "dry-run" },
        summary.mean_interval_ms
    );
    Ok(())
}
