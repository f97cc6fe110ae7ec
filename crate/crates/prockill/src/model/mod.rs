//! Windowed recurrent binary classifier.
//!
//! A [`GruClassifier`] bundles the GRU network with the normalization stats
//! computed on its training split, the window size it was trained for, and
//! a decision threshold. Inference takes the most recent `window_size`
//! feature vectors of one process; shorter histories are front-padded with
//! zeros in normalized space so scoring can begin at a process's first tick.

mod adam;
mod gru;
mod loss;
mod matrix;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gru::{ForwardCache, GruGradients, GruLayer, GruNetwork};
pub use loss::{
    mse_loss, modified_loss, LossKind, LossSpec, ModifiedVariant, RoundSurrogate,
    PROSE_FP_PENALTY,
};
pub use matrix::Matrix;
pub use train::{
    random_search, train, SearchObjective, SearchOutcome, SearchSpace, TrainOptions,
    TrainOutcome, TrialRecord, WindowedSample,
};

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{feature, normalize, FeatureVector, NormalizationStats, ProcessTrace};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Training-time hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub hidden_neurons: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub window_size: usize,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Hyperparameters {
    /// Small defaults suitable for desk-scale experiments.
    pub fn small(window_size: usize, loss: LossSpec, seed: u64) -> Self {
        Hyperparameters {
            hidden_neurons: 16,
            depth: 1,
            batch_size: 64,
            epochs: 10,
            dropout_rate: 0.0,
            window_size,
            loss,
            seed,
        }
    }
}

const MODEL_FORMAT: &str = "prockill.gru.v1";

/// Recurrent classifier plus everything needed to run it on raw snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruClassifier {
    pub network: GruNetwork,
    pub hyper: Hyperparameters,
    pub stats: NormalizationStats,
    /// Decision threshold in [0, 1]; scores strictly above it are malicious.
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: GruClassifier,
}

impl GruClassifier {
    /// Deterministic seeded initialization with threshold 0.5.
    pub fn init(hyper: Hyperparameters, stats: NormalizationStats) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let network = GruNetwork::init(
            feature::COUNT,
            hyper.hidden_neurons,
            hyper.depth,
            &mut rng,
        );
        GruClassifier {
            network,
            hyper,
            stats,
            threshold: 0.5,
        }
    }

    /// Score one window of *normalized* feature vectors, oldest first.
    /// The window length must equal the configured window size.
    pub fn predict_window(&self, window: &[FeatureVector]) -> Result<f64> {
        if window.len() != self.hyper.window_size {
            return Err(Error::config(format!(
                "window length {} does not match configured window size {}",
                window.len(),
                self.hyper.window_size
            )));
        }
        let rows: Vec<&[f64]> = window.iter().map(|v| v.as_slice()).collect();
        Ok(self.network.forward(&rows))
    }

    /// Score from raw trailing history (any length). The most recent
    /// `window_size` snapshots are normalized and front-padded with zeros.
    pub fn score_recent_raw(&self, history: &[FeatureVector]) -> f64 {
        let w = self.hyper.window_size;
        let start = history.len().saturating_sub(w);
        let mut window = vec![FeatureVector::zeros(); w];
        let tail = &history[start..];
        let pad = w - tail.len();
        for (i, snap) in tail.iter().enumerate() {
            window[pad + i] = normalize(snap, &self.stats);
        }
        self.predict_window(&window)
            .expect("window construction matches configured size")
    }

    /// Score every window position of a trace: element `i` is the score of
    /// the window ending at snapshot `i`.
    pub fn score_trace(&self, trace: &ProcessTrace) -> Vec<f64> {
        let mut raw: Vec<FeatureVector> = Vec::with_capacity(trace.snapshots.len());
        let mut scores = Vec::with_capacity(trace.snapshots.len());
        for snap in &trace.snapshots {
            raw.push(snap.features);
            scores.push(self.score_recent_raw(&raw));
        }
        scores
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::input(format!("serialize model: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: not a model file: {e}", path.display())))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::input(format!(
                "{}: unsupported model format {:?}, expected {:?}",
                path.display(),
                file.format,
                MODEL_FORMAT
            )));
        }
        Ok(file.model)
    }

    /// Loss value and flattened parameter gradients for a batch of windowed
    /// samples, with dropout disabled. Gradient layout matches
    /// [`GruNetwork::flatten`].
    pub fn loss_gradients(
        &self,
        samples: &[WindowedSample],
        loss: &LossSpec,
    ) -> Result<(f64, Vec<f64>)> {
        if samples.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut caches = Vec::with_capacity(samples.len());
        let mut p = Vec::with_capacity(samples.len());
        let mut y = Vec::with_capacity(samples.len());
        let mut t = Vec::with_capacity(samples.len());
        for sample in samples {
            let rows: Vec<&[f64]> = sample.window.iter().map(|v| v.as_slice()).collect();
            let cache = self.network.forward_train(&rows, 0.0, &mut rng);
            p.push(cache.score);
            y.push(sample.label);
            t.push(sample.time_left);
            caches.push(cache);
        }
        let (value, dp) = loss.value_and_grad(&p, &y, &t)?;
        let mut grads = GruGradients::zeros_like(&self.network);
        for (cache, d) in caches.iter().zip(&dp) {
            self.network.backward(cache, *d, &mut grads);
        }
        Ok((value, grads.flatten()))
    }
}
