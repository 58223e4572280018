//! Classification accuracy, the lane-change metrics and the aggregated score.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{LabeledSequence, Maneuver};
use crate::error::{Error, Result};

/// Lane-change prediction quality on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// False-positive episodes per ground-truth lane change.
    pub frequency: f64,
    /// Mean seconds from window onset to the first correct prediction, over detected changes.
    pub delay_s: f64,
    /// Fraction of lane changes never predicted in their window.
    pub miss: f64,
    pub accuracy: Option<f64>,
    pub events: usize,
    pub detected: usize,
    pub false_episodes: usize,
    /// Nonzero-weight frames labeled `Follow`.
    pub follow_frames: usize,
    /// Nonzero-weight frames labeled with a direction.
    pub lane_change_frames: usize,
}

impl MetricsReport {
    /// Frame-class shares `(s_F, s_LC)` used to weight the score.
    pub fn class_shares(&self) -> (f64, f64) {
        let total = (self.follow_frames + self.lane_change_frames) as f64;
        if total == 0.0 {
            return (0.0, 0.0);
        }
        (self.follow_frames as f64 / total, self.lane_change_frames as f64 / total)
    }
}

/// Counts maximal runs of non-`Follow` predictions inside `Follow`-labeled
/// stretches. Zero-weight frames are skipped entirely, so they neither start,
/// end nor split a stretch.
fn false_episodes(pred: &[Maneuver], seq: &LabeledSequence) -> usize {
    let mut count = 0;
    let mut in_run = false;
    for t in 0..seq.len() {
        if seq.weights[t] == 0.0 {
            continue;
        }
        if seq.labels[t] != Maneuver::Follow {
            in_run = false;
            continue;
        }
        let positive = pred[t] != Maneuver::Follow;
        if positive && !in_run {
            count += 1;
        }
        in_run = positive;
    }
    count
}

/// Scores per-frame predictions against labeled sequences.
///
/// Each annotated lane change opens a window `[exec − horizon, exec)`. It is
/// detected if any frame in the window predicts its direction; the delay is
/// the time from the window start to the first such frame.
pub fn evaluate_lane_change(predictions: &[Vec<Maneuver>], ds: &[LabeledSequence], horizon_s: f64) -> Result<MetricsReport> {
    if predictions.len() != ds.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_lane_change",
            detail: format!("{} prediction streams for {} sequences", predictions.len(), ds.len()),
        });
    }
    let mut r = MetricsReport {
        frequency: 0.0,
        delay_s: 0.0,
        miss: 0.0,
        accuracy: None,
        events: 0,
        detected: 0,
        false_episodes: 0,
        follow_frames: 0,
        lane_change_frames: 0,
    };
    let mut delay_sum = 0.0;
    for (pred, seq) in predictions.iter().zip(ds) {
        if pred.len() != seq.len() {
            return Err(Error::ShapeMismatch {
                op: "evaluate_lane_change",
                detail: format!("{} predictions for {} frames", pred.len(), seq.len()),
            });
        }
        for t in 0..seq.len() {
            if seq.weights[t] != 0.0 {
                if seq.labels[t] == Maneuver::Follow {
                    r.follow_frames += 1;
                } else {
                    r.lane_change_frames += 1;
                }
            }
        }
        r.false_episodes += false_episodes(pred, seq);
        let window = libm::round(horizon_s * seq.frame_rate) as usize;
        for e in &seq.events {
            r.events += 1;
            let exec = e.exec_frame.min(seq.len());
            let onset = exec.saturating_sub(window);
            if let Some(t) = (onset..exec).find(|&t| pred[t].matches(e.direction)) {
                r.detected += 1;
                delay_sum += (t - onset) as f64 / seq.frame_rate;
            }
        }
    }
    if r.events == 0 {
        return Err(Error::NoEvents);
    }
    r.frequency = r.false_episodes as f64 / r.events as f64;
    r.miss = (r.events - r.detected) as f64 / r.events as f64;
    r.delay_s = if r.detected > 0 { delay_sum / r.detected as f64 } else { 0.0 };
    Ok(r)
}

/// Sum of relative improvements over `baseline`, Frequency weighted by the
/// share of follow frames and Delay and Miss each by the share of lane-change
/// frames. Shares come from `report`, which covers the same test set.
pub fn aggregate_score(report: &MetricsReport, baseline: &MetricsReport) -> Result<f64> {
    let (s_f, s_lc) = report.class_shares();
    score_with_shares(report, baseline, s_f, s_lc)
}

/// [`aggregate_score`] with explicit class shares.
pub fn score_with_shares(report: &MetricsReport, baseline: &MetricsReport, s_f: f64, s_lc: f64) -> Result<f64> {
    for (name, v) in [("frequency", baseline.frequency), ("delay", baseline.delay_s), ("miss", baseline.miss)] {
        if v == 0.0 {
            return Err(Error::ZeroBaseline(name));
        }
    }
    let rel = |base: f64, x: f64| (base - x) / base;
    Ok(s_f * rel(baseline.frequency, report.frequency)
        + s_lc * rel(baseline.delay_s, report.delay_s)
        + s_lc * rel(baseline.miss, report.miss))
}

/// Fraction of correct class predictions.
pub fn evaluate_classification(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_classification",
            detail: format!("{} predictions for {} labels", predictions.len(), labels.len()),
        });
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-frame accuracy over nonzero-weight frames, with `Change` matching either direction.
pub fn frame_accuracy(predictions: &[Vec<Maneuver>], ds: &[LabeledSequence]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (pred, seq) in predictions.iter().zip(ds) {
        for t in 0..seq.len().min(pred.len()) {
            if seq.weights[t] != 0.0 {
                total += 1;
                if pred[t].matches(seq.labels[t]) {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_and_weight, LabelConfig, ManeuverEvent};
    use alloc::vec;

    fn labeled(exec: usize) -> LabeledSequence {
        let s = LabeledSequence::new(
            1,
            vec![0.5; 150],
            vec![ManeuverEvent { direction: Maneuver::Left, exec_frame: exec }],
            10.0,
        )
        .unwrap();
        label_and_weight(&[s], &LabelConfig::default()).unwrap().remove(0)
    }

    #[test]
    fn perfect_predictor() {
        let s = labeled(100);
        let r = evaluate_lane_change(&[s.labels.clone()], &[s], 3.0).unwrap();
        assert_eq!((r.frequency, r.delay_s, r.miss), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_second_delay() {
        let s = labeled(100);
        let mut p = vec![Maneuver::Follow; 150];
        for t in 80..100 {
            p[t] = Maneuver::Left;
        }
        let r = evaluate_lane_change(&[p], &[s], 3.0).unwrap();
        assert_eq!((r.frequency, r.delay_s, r.miss), (0.0, 1.0, 0.0));
    }

    #[test]
    fn wrong_direction_is_a_miss() {
        let s = labeled(100);
        let mut p = vec![Maneuver::Follow; 150];
        p[90] = Maneuver::Right;
        let r = evaluate_lane_change(&[p], &[s.clone()], 3.0).unwrap();
        assert_eq!(r.miss, 1.0);
        let mut p = vec![Maneuver::Follow; 150];
        p[90] = Maneuver::Change;
        assert_eq!(evaluate_lane_change(&[p], &[s], 3.0).unwrap().miss, 0.0);
    }

    #[test]
    fn episodes_not_frames() {
        let s = labeled(100);
        let mut p = s.labels.clone();
        for t in 10..15 {
            p[t] = Maneuver::Right;
        }
        p[30] = Maneuver::Left;
        let r = evaluate_lane_change(&[p], &[s], 3.0).unwrap();
        assert_eq!(r.false_episodes, 2);
        assert_eq!(r.frequency, 2.0);
    }

    #[test]
    fn no_events_is_an_error() {
        let s = LabeledSequence::new(1, vec![0.5; 10], vec![], 10.0).unwrap();
        assert_eq!(evaluate_lane_change(&[vec![Maneuver::Follow; 10]], &[s], 3.0).unwrap_err(), Error::NoEvents);
    }

    fn report(f: f64, d: f64, m: f64) -> MetricsReport {
        MetricsReport {
            frequency: f,
            delay_s: d,
            miss: m,
            accuracy: None,
            events: 1,
            detected: 1,
            false_episodes: 0,
            follow_frames: 9,
            lane_change_frames: 1,
        }
    }

    #[test]
    fn score_examples() {
        let base = report(2.0, 1.0, 0.1);
        assert_eq!(aggregate_score(&base, &base).unwrap(), 0.0);
        let better = report(1.0, 1.1, 0.1);
        let s = score_with_shares(&better, &base, 0.9, 0.1).unwrap();
        assert!((s - 0.44).abs() < 1e-12, "{s}");
        assert_eq!(aggregate_score(&better, &report(0.0, 1.0, 0.1)).unwrap_err(), Error::ZeroBaseline("frequency"));
    }

    #[test]
    fn classification_accuracy() {
        assert_eq!(evaluate_classification(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate_classification(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert!(evaluate_classification(&[], &[]).is_err());
    }
}
