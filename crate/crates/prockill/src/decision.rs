//! Turning window scores into verdicts and calibrated thresholds.
//!
//! Offline verdicts average all window scores of a completed trace; online
//! verdicts fire at the first single score strictly above the threshold and
//! are irrevocable (the kill is issued). The strict inequality makes a
//! threshold of exactly 1 a clean off-switch, since scores live in (0, 1).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::sim::{run_with_detector, Detector, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictTrigger {
    OfflineMean,
    OnlineSingleWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessVerdict {
    pub process_id: u32,
    pub decision: Verdict,
    pub decided_at_tick: u64,
    pub trigger: VerdictTrigger,
}

/// Verdict over a completed trace: malicious iff the mean window score is
/// strictly above the threshold.
pub fn offline_verdict(
    process_id: u32,
    final_tick: u64,
    scores: &[f64],
    theta: f64,
) -> Result<ProcessVerdict> {
    if scores.is_empty() {
        return Err(Error::input("no window scores for offline verdict"));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(ProcessVerdict {
        process_id,
        decision: if mean > theta {
            Verdict::Malicious
        } else {
            Verdict::Benign
        },
        decided_at_tick: final_tick,
        trigger: VerdictTrigger::OfflineMean,
    })
}

/// First tick whose score strictly exceeds the threshold, if any.
pub fn online_verdict<I>(scores: I, theta: f64) -> Option<u64>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    scores
        .into_iter()
        .find(|(_, score)| *score > theta)
        .map(|(tick, _)| tick)
}

/// Incremental form of [`online_verdict`] for the simulation loop.
#[derive(Debug, Clone, Default)]
pub struct OnlineDecider {
    fired_at: Option<u64>,
}

impl OnlineDecider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one score; returns the firing tick the first time the score
    /// crosses the threshold. Later scores never revoke the verdict.
    pub fn observe(&mut self, tick: u64, score: f64, theta: f64) -> Option<u64> {
        if self.fired_at.is_none() && score > theta {
            self.fired_at = Some(tick);
            return Some(tick);
        }
        None
    }

    pub fn fired_at(&self) -> Option<u64> {
        self.fired_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub fpr: f64,
    pub fnr_over_time: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best_theta: f64,
}

/// Default calibration grid: 51 evenly spaced thresholds in [0.5, 1.0].
pub fn default_grid() -> Vec<f64> {
    grid(51)
}

/// `points` evenly spaced thresholds in [0.5, 1.0].
pub fn grid(points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.5];
    }
    (0..points)
        .map(|i| 0.5 + 0.5 * i as f64 / (points - 1) as f64)
        .collect()
}

/// Replay the validation scenario with online killing at every threshold in
/// the grid and pick the one minimizing (FPR + FNR-over-time)/2. Ties break
/// toward the larger threshold (fewer kills).
pub fn threshold_sweep(
    scenario: &Scenario,
    detector: &dyn Detector,
    grid: &[f64],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::config("threshold grid is empty"));
    }
    for &theta in grid {
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::config(format!(
                "threshold {theta} outside the sweep domain [0.5, 1.0]"
            )));
        }
    }
    let mut thetas: Vec<f64> = grid.to_vec();
    thetas.sort_by(f64::total_cmp);

    let mut rows = Vec::with_capacity(thetas.len());
    let mut best: Option<(f64, f64)> = None;
    for theta in thetas {
        let run = run_with_detector(scenario, detector, theta);
        let fpr = metrics::fpr(&run.outcomes).0;
        let fnr_over_time = metrics::fnr_over_time(&run.outcomes).0;
        let combined = (fpr + fnr_over_time) / 2.0;
        rows.push(SweepRow {
            theta,
            fpr,
            fnr_over_time,
            combined,
        });
        // ascending grid + `<=` biases ties toward the larger threshold
        let better = match best {
            None => true,
            Some((_, best_combined)) => combined <= best_combined,
        };
        if better {
            best = Some((theta, combined));
        }
    }

    Ok(SweepResult {
        rows,
        best_theta: best.expect("non-empty grid").0,
    })
}

/// Emit the sweep table as CSV with the columns
/// `theta,fpr,fnr_over_time,combined`.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "theta,fpr,fnr_over_time,combined")?;
    for row in &result.rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.theta, row.fpr, row.fnr_over_time, row.combined
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offline_mean_hand_value() {
        let v = offline_verdict(1, 9, &[0.2, 0.8, 0.8], 0.5).unwrap();
        assert_eq!(v.decision, Verdict::Malicious);
        assert_eq!(v.decided_at_tick, 9);
        assert_eq!(v.trigger, VerdictTrigger::OfflineMean);
    }

    #[test]
    fn offline_all_zero_is_benign_for_any_theta() {
        for theta in [0.0, 0.25, 0.5, 1.0] {
            let v = offline_verdict(1, 5, &[0.0, 0.0, 0.0], theta).unwrap();
            assert_eq!(v.decision, Verdict::Benign);
        }
    }

    #[test]
    fn offline_boundary_is_benign() {
        // mean exactly at the threshold stays benign (strict inequality)
        let v = offline_verdict(1, 2, &[0.5, 0.5], 0.5).unwrap();
        assert_eq!(v.decision, Verdict::Benign);
    }

    #[test]
    fn offline_empty_errors() {
        assert!(offline_verdict(1, 0, &[], 0.5).is_err());
    }

    #[test]
    fn offline_is_permutation_invariant() {
        let scores = [0.1, 0.9, 0.4, 0.7];
        let mut reversed = scores;
        reversed.reverse();
        let a = offline_verdict(1, 3, &scores, 0.5).unwrap();
        let b = offline_verdict(1, 3, &reversed, 0.5).unwrap();
        assert_eq!(a.decision, b.decision);
    }

    #[test]
    fn online_fires_at_first_crossing() {
        // long benign prefix then one spike, mirroring a process that is
        // flagged once late in an otherwise clean run
        let mut stream: Vec<(u64, f64)> = (0..179).map(|t| (t, 0.0)).collect();
        stream.push((179, 0.99));
        assert_eq!(online_verdict(stream, 0.98), Some(179));
    }

    #[test]
    fn online_theta_one_never_fires() {
        let stream = (0..100).map(|t| (t, 1.0 - 1e-12));
        assert_eq!(online_verdict(stream, 1.0), None);
    }

    #[test]
    fn online_no_crossing_is_benign() {
        let stream = (0..50).map(|t| (t, 0.3));
        assert_eq!(online_verdict(stream, 0.5), None);
    }

    #[test]
    fn online_is_order_sensitive() {
        let early = vec![(0u64, 0.9), (1, 0.1)];
        let late = vec![(0u64, 0.1), (1, 0.9)];
        assert_eq!(online_verdict(early, 0.5), Some(0));
        assert_eq!(online_verdict(late, 0.5), Some(1));
    }

    #[test]
    fn decider_is_irrevocable() {
        let mut d = OnlineDecider::new();
        assert_eq!(d.observe(3, 0.7, 0.5), Some(3));
        assert_eq!(d.observe(4, 0.9, 0.5), None);
        assert_eq!(d.fired_at(), Some(3));
    }

    #[test]
    fn grid_spans_half_to_one() {
        let g = default_grid();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.5);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!((g[1] - 0.51).abs() < 1e-12);
    }

    #[test]
    fn monotone_verdict_sets_under_theta() {
        // crossing sets shrink as theta grows, on arbitrary streams
        let streams: Vec<Vec<(u64, f64)>> = (0..20)
            .map(|s| {
                (0..30)
                    .map(|t| (t, ((s * 31 + t * 17) % 100) as f64 / 100.0))
                    .collect()
            })
            .collect();
        for lo in [0.5, 0.6, 0.7] {
            let hi = lo + 0.2;
            for stream in &streams {
                let fired_hi = online_verdict(stream.clone(), hi).is_some();
                let fired_lo = online_verdict(stream.clone(), lo).is_some();
                if fired_hi {
                    assert!(fired_lo, "verdict at higher theta without lower");
                }
            }
        }
    }
}
