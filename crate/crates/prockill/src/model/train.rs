//! Windowed dataset construction, the training loop, and random
//! hyperparameter search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::gru::GruGradients;
use super::loss::LossSpec;
use super::{GruClassifier, Hyperparameters};
use crate::error::{Error, Result};
use crate::telemetry::{compute_stats, normalize, FeatureVector, ProcessTrace};

/// One training sample: a window of normalized features ending at some
/// snapshot, the trace label, and the normalized fraction of the unkilled
/// trace remaining at the window's final tick.
#[derive(Debug, Clone)]
pub struct WindowedSample {
    /// Oldest row first; short prefixes are front-padded with zeros.
    pub window: Vec<FeatureVector>,
    pub label: f64,
    pub time_left: f64,
}

impl WindowedSample {
    /// Build the window ending at `end_index` of `trace`.
    pub fn from_trace(
        trace: &ProcessTrace,
        stats: &crate::telemetry::NormalizationStats,
        window_size: usize,
        end_index: usize,
    ) -> Self {
        let mut window = vec![FeatureVector::zeros(); window_size];
        let start = (end_index + 1).saturating_sub(window_size);
        let rows = &trace.snapshots[start..=end_index];
        let pad = window_size - rows.len();
        for (i, snap) in rows.iter().enumerate() {
            window[pad + i] = normalize(&snap.features, stats);
        }
        WindowedSample {
            window,
            label: if trace.label.is_malicious() { 1.0 } else { 0.0 },
            time_left: trace.time_left(end_index),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    /// Upper bound on windows sampled per class; defaults to the smaller
    /// class size (class-balanced without replacement).
    pub balance_cap: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GruClassifier,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Train a GRU classifier on the traces. Normalization stats come from this
/// split alone; the returned model carries them and a threshold of 0.5.
///
/// Deterministic: a fixed seed yields bitwise-identical parameters.
pub fn train(
    traces: &[ProcessTrace],
    hyper: &Hyperparameters,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let has_malicious = traces.iter().any(|t| t.label.is_malicious());
    let has_benign = traces.iter().any(|t| !t.label.is_malicious());
    if !has_malicious || !has_benign {
        return Err(Error::input(
            "training data contains a single class; both labels are required",
        ));
    }

    let stats = compute_stats(traces)?;
    let mut model = GruClassifier::init(hyper.clone(), stats);

    // window references per class: (trace index, end snapshot index)
    let mut malicious: Vec<(usize, usize)> = Vec::new();
    let mut benign: Vec<(usize, usize)> = Vec::new();
    for (ti, trace) in traces.iter().enumerate() {
        let bucket = if trace.label.is_malicious() {
            &mut malicious
        } else {
            &mut benign
        };
        for end in 0..trace.snapshots.len() {
            bucket.push((ti, end));
        }
    }
    let mut per_class = malicious.len().min(benign.len());
    if let Some(cap) = opts.balance_cap {
        per_class = per_class.min(cap);
    }
    if per_class == 0 {
        return Err(Error::input("no training windows in one of the classes"));
    }

    // distinct stream from the init draw so the loop is decoupled from
    // parameter initialization
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9E37_79B9_7F4A_7C15);
    malicious.shuffle(&mut rng);
    benign.shuffle(&mut rng);
    malicious.truncate(per_class);
    benign.truncate(per_class);
    let mut order: Vec<(usize, usize)> = malicious.into_iter().chain(benign).collect();

    let mut params = model.network.flatten();
    let mut adam_state = AdamState::new(params.len());
    let mut epoch_loss = Vec::with_capacity(hyper.epochs);

    for _epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_acc = 0.0;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let mut caches = Vec::with_capacity(chunk.len());
            let mut p = Vec::with_capacity(chunk.len());
            let mut y = Vec::with_capacity(chunk.len());
            let mut t = Vec::with_capacity(chunk.len());
            for &(ti, end) in chunk {
                let sample =
                    WindowedSample::from_trace(&traces[ti], &model.stats, hyper.window_size, end);
                let rows: Vec<&[f64]> = sample.window.iter().map(|v| v.as_slice()).collect();
                let cache = model
                    .network
                    .forward_train(&rows, hyper.dropout_rate, &mut rng);
                p.push(cache.score);
                y.push(sample.label);
                t.push(sample.time_left);
                caches.push(cache);
            }
            let (value, dp) = hyper.loss.value_and_grad(&p, &y, &t)?;
            loss_acc += value * chunk.len() as f64;

            let mut grads = GruGradients::zeros_like(&model.network);
            for (cache, d) in caches.iter().zip(&dp) {
                model.network.backward(cache, *d, &mut grads);
            }
            adam_step(&mut params, &grads.flatten(), &mut adam_state, &opts.adam);
            model.network.unflatten(&params);
        }
        epoch_loss.push(loss_acc / order.len() as f64);
    }

    Ok(TrainOutcome { model, epoch_loss })
}

/// Random-search sampling ranges. Defaults cover the full search space;
/// narrow them for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Inclusive bounds.
    pub hidden_neurons: (usize, usize),
    pub depth: Vec<usize>,
    pub batch_size: Vec<usize>,
    /// Inclusive bounds.
    pub epochs: (usize, usize),
    pub dropout_rate: Vec<f64>,
    /// Inclusive bounds.
    pub window_size: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            hidden_neurons: (50, 5000),
            depth: vec![1, 2, 3],
            batch_size: vec![64, 128, 256],
            epochs: (1, 200),
            dropout_rate: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            window_size: (1, 30),
        }
    }
}

impl SearchSpace {
    pub fn sample(&self, loss: LossSpec, rng: &mut ChaCha8Rng) -> Hyperparameters {
        Hyperparameters {
            hidden_neurons: rng.gen_range(self.hidden_neurons.0..=self.hidden_neurons.1),
            depth: *self.depth.as_slice().choose(rng).expect("non-empty depth set"),
            batch_size: *self
                .batch_size
                .as_slice()
                .choose(rng)
                .expect("non-empty batch set"),
            epochs: rng.gen_range(self.epochs.0..=self.epochs.1),
            dropout_rate: *self
                .dropout_rate
                .as_slice()
                .choose(rng)
                .expect("non-empty dropout set"),
            window_size: rng.gen_range(self.window_size.0..=self.window_size.1),
            loss,
            seed: rng.gen(),
        }
    }

    pub fn contains(&self, h: &Hyperparameters) -> bool {
        (self.hidden_neurons.0..=self.hidden_neurons.1).contains(&h.hidden_neurons)
            && self.depth.contains(&h.depth)
            && self.batch_size.contains(&h.batch_size)
            && (self.epochs.0..=self.epochs.1).contains(&h.epochs)
            && self.dropout_rate.contains(&h.dropout_rate)
            && (self.window_size.0..=self.window_size.1).contains(&h.window_size)
    }
}

/// How a trial's model is scored on validation data (lower is better).
pub enum SearchObjective<'a> {
    /// (FPR + FNR) / 2 from offline mean-score verdicts at threshold 0.5.
    Offline { val_traces: &'a [ProcessTrace] },
    /// (FPR + FNR-over-time) / 2 from a kill-loop replay of a validation
    /// scenario at the given threshold.
    Online {
        scenario: &'a crate::sim::Scenario,
        theta: f64,
    },
}

impl SearchObjective<'_> {
    pub fn evaluate(&self, model: &GruClassifier) -> Result<f64> {
        match self {
            SearchObjective::Offline { val_traces } => {
                let mut fp = 0usize;
                let mut fnc = 0usize;
                let mut benign = 0usize;
                let mut malicious = 0usize;
                for trace in val_traces.iter() {
                    if trace.snapshots.is_empty() {
                        continue;
                    }
                    let scores = model.score_trace(trace);
                    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                    let predicted_malicious = mean > model.threshold;
                    if trace.label.is_malicious() {
                        malicious += 1;
                        if !predicted_malicious {
                            fnc += 1;
                        }
                    } else {
                        benign += 1;
                        if predicted_malicious {
                            fp += 1;
                        }
                    }
                }
                let fpr = if benign == 0 { 0.0 } else { fp as f64 / benign as f64 };
                let fnr = if malicious == 0 {
                    0.0
                } else {
                    fnc as f64 / malicious as f64
                };
                Ok((fpr + fnr) / 2.0)
            }
            SearchObjective::Online { scenario, theta } => {
                let run = crate::sim::run_with_detector(scenario, model, *theta);
                let fpr = crate::metrics::fpr(&run.outcomes).0;
                let fnr_t = crate::metrics::fnr_over_time(&run.outcomes).0;
                Ok((fpr + fnr_t) / 2.0)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub index: usize,
    pub hyper: Hyperparameters,
    pub objective: f64,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best: TrialRecord,
    pub model: GruClassifier,
    pub trials: Vec<TrialRecord>,
}

/// Draw `n_trials` configurations uniformly from the space, train each, and
/// return the one with the lowest validation objective. Ties break toward
/// the earlier trial.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    loss: LossSpec,
    train_traces: &[ProcessTrace],
    objective: &SearchObjective<'_>,
    opts: &TrainOptions,
    seed: u64,
) -> Result<SearchOutcome> {
    if n_trials == 0 {
        return Err(Error::config("random search needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    let mut best: Option<(TrialRecord, GruClassifier)> = None;

    for index in 0..n_trials {
        let hyper = space.sample(loss, &mut rng);
        let outcome = train(train_traces, &hyper, opts)?;
        let score = objective.evaluate(&outcome.model)?;
        let record = TrialRecord {
            index,
            hyper,
            objective: score,
        };
        trials.push(record.clone());
        let better = match &best {
            None => true,
            Some((b, _)) => score < b.objective,
        };
        if better {
            best = Some((record, outcome.model));
        }
    }

    let (best, model) = best.expect("n_trials >= 1");
    Ok(SearchOutcome {
        best,
        model,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{Label, ProcessSnapshot};

    /// Separable synthetic corpus: two informative features with the rest 0.
    fn synthetic_traces(per_class: usize, len: usize) -> Vec<ProcessTrace> {
        let mut traces = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..per_class * 2 {
            let malicious = i % 2 == 0;
            let snapshots = (0..len)
                .map(|tick| {
                    let mut f = FeatureVector::zeros();
                    let base = if malicious { 4.0 } else { -4.0 };
                    f[0] = base + rng.gen_range(-0.5..0.5);
                    f[1] = -base + rng.gen_range(-0.5..0.5);
                    ProcessSnapshot {
                        process_id: i as u32,
                        parent_id: None,
                        app_id: i as u32,
                        tick: tick as u64,
                        features: f,
                    }
                })
                .collect();
            traces.push(ProcessTrace {
                process_id: i as u32,
                app_id: i as u32,
                label: if malicious { Label::Malicious } else { Label::Benign },
                snapshots,
                unkilled_duration_s: len as u64,
            });
        }
        traces
    }

    fn tiny_hyper(epochs: usize) -> Hyperparameters {
        Hyperparameters {
            hidden_neurons: 8,
            depth: 1,
            batch_size: 16,
            epochs,
            dropout_rate: 0.0,
            window_size: 3,
            loss: LossSpec::mse(),
            seed: 7,
        }
    }

    #[test]
    fn loss_decreases_over_first_epochs_on_separable_data() {
        let traces = synthetic_traces(8, 12);
        let outcome = train(&traces, &tiny_hyper(5), &TrainOptions::default()).unwrap();
        assert_eq!(outcome.epoch_loss.len(), 5);
        for pair in outcome.epoch_loss.windows(2) {
            assert!(pair[1] < pair[0], "loss not decreasing: {:?}", outcome.epoch_loss);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let traces = synthetic_traces(2, 5);
        let hyper = tiny_hyper(0);
        let outcome = train(&traces, &hyper, &TrainOptions::default()).unwrap();
        let stats = compute_stats(&traces).unwrap();
        let init = GruClassifier::init(hyper, stats);
        assert_eq!(outcome.model, init);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let traces = synthetic_traces(4, 8);
        let a = train(&traces, &tiny_hyper(3), &TrainOptions::default()).unwrap();
        let b = train(&traces, &tiny_hyper(3), &TrainOptions::default()).unwrap();
        assert_eq!(a.model.network.flatten(), b.model.network.flatten());
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn single_class_data_is_rejected() {
        let mut traces = synthetic_traces(2, 5);
        traces.retain(|t| t.label == Label::Benign);
        let err = train(&traces, &tiny_hyper(1), &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn dropout_training_is_still_deterministic() {
        let traces = synthetic_traces(4, 8);
        let mut hyper = tiny_hyper(2);
        hyper.dropout_rate = 0.3;
        hyper.depth = 2;
        let a = train(&traces, &hyper, &TrainOptions::default()).unwrap();
        let b = train(&traces, &hyper, &TrainOptions::default()).unwrap();
        assert_eq!(a.model.network.flatten(), b.model.network.flatten());
    }

    #[test]
    fn search_samples_stay_in_bounds() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let h = space.sample(LossSpec::mse(), &mut rng);
            assert!(space.contains(&h));
            assert!((50..=5000).contains(&h.hidden_neurons));
        }
    }

    #[test]
    fn search_trial_sequence_is_seed_deterministic() {
        let space = SearchSpace::default();
        let mut a_rng = ChaCha8Rng::seed_from_u64(11);
        let mut b_rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = space.sample(LossSpec::mse(), &mut a_rng);
            let b = space.sample(LossSpec::mse(), &mut b_rng);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_trial_search_returns_that_trial() {
        let traces = synthetic_traces(3, 6);
        let space = SearchSpace {
            hidden_neurons: (4, 8),
            depth: vec![1],
            batch_size: vec![16],
            epochs: (1, 2),
            dropout_rate: vec![0.0],
            window_size: (2, 3),
        };
        let outcome = random_search(
            &space,
            1,
            LossSpec::mse(),
            &traces,
            &SearchObjective::Offline { val_traces: &traces },
            &TrainOptions::default(),
            3,
        )
        .unwrap();
        assert_eq!(outcome.best.index, 0);
        assert_eq!(outcome.trials.len(), 1);
    }
}
