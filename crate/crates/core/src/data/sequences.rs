//! Lane-change sequences: types, the toy generator, and frame labeling.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Per-frame maneuver label. `Change` only appears as a prediction of a
/// direction-agnostic (binary) tagger and matches either direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Maneuver {
    Follow,
    Left,
    Right,
    Change,
}

impl Maneuver {
    pub fn is_lane_change(self) -> bool {
        self != Maneuver::Follow
    }

    /// Whether a prediction `self` names the ground-truth direction `truth`.
    pub fn matches(self, truth: Maneuver) -> bool {
        self == truth || (self == Maneuver::Change && truth.is_lane_change())
    }

    pub fn symbol(self) -> char {
        match self {
            Maneuver::Follow => 'F',
            Maneuver::Left => 'L',
            Maneuver::Right => 'R',
            Maneuver::Change => 'C',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Some(match c {
            'F' => Maneuver::Follow,
            'L' => Maneuver::Left,
            'R' => Maneuver::Right,
            'C' => Maneuver::Change,
            _ => return None,
        })
    }
}

/// A lane change and the frame at which the vehicle crosses the lane boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManeuverEvent {
    pub direction: Maneuver,
    pub exec_frame: usize,
}

/// `len × features` frames with per-frame labels and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub features: usize,
    pub frames: Vec<f64>,
    pub labels: Vec<Maneuver>,
    pub weights: Vec<f64>,
    pub events: Vec<ManeuverEvent>,
    pub frame_rate: f64,
}

impl LabeledSequence {
    /// Unlabeled sequence: every frame `Follow` with weight 1.
    pub fn new(features: usize, frames: Vec<f64>, events: Vec<ManeuverEvent>, frame_rate: f64) -> Result<Self> {
        if features == 0 || frames.len() % features != 0 || frames.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "sequence",
                detail: alloc::format!("{} values for {features} features", frames.len()),
            });
        }
        let len = frames.len() / features;
        Ok(LabeledSequence {
            features,
            frames,
            labels: vec![Maneuver::Follow; len],
            weights: vec![1.0; len],
            events,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.features..(t + 1) * self.features]
    }

    /// First maneuver, which drives correspondence alignment.
    pub fn primary_event(&self) -> Option<ManeuverEvent> {
        self.events.iter().min_by_key(|e| e.exec_frame).copied()
    }
}

/// Toy lane-change simulator settings. Times are in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub frame_rate: f64,
    pub length_s: f64,
    pub p_lane_change: f64,
    pub transition_s: f64,
    pub sigma_noise: f64,
    /// Noise on lateral velocity when `features == 2`, in lane widths per second.
    pub sigma_noise_velocity: f64,
    /// 1: distance to center line `m`; 2: `m` and lateral velocity `v`.
    pub features: usize,
    /// Range of the lane-following offset `m`.
    pub offset_range: (f64, f64),
    /// Earliest boundary crossing, measured from the sequence start.
    pub min_exec_s: f64,
    /// Latest boundary crossing, measured back from the sequence end.
    pub min_tail_s: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            frame_rate: 10.0,
            length_s: 15.0,
            p_lane_change: 0.5,
            transition_s: 4.0,
            sigma_noise: 0.05,
            sigma_noise_velocity: 0.05,
            features: 1,
            offset_range: (0.4, 0.6),
            min_exec_s: 4.0,
            min_tail_s: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidConfig(s.into()));
        if !(self.sigma_noise >= 0.0) || !(self.sigma_noise_velocity >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.transition_s > 0.0) || !(self.length_s > 0.0) || !(self.frame_rate > 0.0) {
            return bad("durations and frame rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_lane_change) {
            return bad("lane-change probability must lie in [0, 1]");
        }
        if !(1..=2).contains(&self.features) {
            return bad("toy sequences carry 1 or 2 features");
        }
        if self.min_exec_s + self.min_tail_s >= self.length_s {
            return bad("sequence too short for the execution window");
        }
        let (lo, hi) = self.offset_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad("offset range must lie inside (0, 1)");
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        libm::round(self.length_s * self.frame_rate) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyDomain {
    Clean,
    Noisy,
}

/// Noise-free lateral trajectory of one sequence, in lane units.
struct Trajectory {
    /// Lateral position; the starting lane spans `[0, 1]`.
    y: Vec<f64>,
    /// Lateral velocity in lane widths per second.
    v: Vec<f64>,
    event: Option<ManeuverEvent>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn simulate(cfg: &GeneratorConfig, rng: &mut rng::Rng) -> Trajectory {
    let len = cfg.frames();
    let (lo, hi) = cfg.offset_range;
    let y0 = rng.random_range(lo..=hi);
    if !rng.random_bool(cfg.p_lane_change) {
        return Trajectory { y: vec![y0; len], v: vec![0.0; len], event: None };
    }
    let left = rng.random_bool(0.5);
    let end_offset = rng.random_range(lo..=hi);
    // left: cross the y = 0 boundary into [-1, 0]; right: cross y = 1 into [1, 2]
    let (y1, boundary) = if left { (end_offset - 1.0, 0.0) } else { (1.0 + end_offset, 1.0) };
    let earliest = cfg.min_exec_s * cfg.frame_rate;
    let latest = len as f64 - cfg.min_tail_s * cfg.frame_rate;
    let crossing = rng.random_range(earliest..latest);
    // logistic spans 1%..99% of the move over the transition time
    let k = 2.0 * libm::log(99.0) / (cfg.transition_s * cfg.frame_rate);
    let q: f64 = (boundary - y0) / (y1 - y0);
    let mid = crossing - libm::log(q / (1.0 - q)) / k;
    let mut y = Vec::with_capacity(len);
    let mut v = Vec::with_capacity(len);
    for t in 0..len {
        let s = logistic(k * (t as f64 - mid));
        y.push(y0 + (y1 - y0) * s);
        v.push((y1 - y0) * k * s * (1.0 - s) * cfg.frame_rate);
    }
    let crossed = |yt: f64| if left { yt <= boundary } else { yt >= boundary };
    let exec_frame = (0..len).find(|&t| crossed(y[t])).unwrap_or(len - 1);
    let direction = if left { Maneuver::Left } else { Maneuver::Right };
    Trajectory { y, v, event: Some(ManeuverEvent { direction, exec_frame }) }
}

/// Distance to the current lane's center-line coordinate: 0 at the left
/// border, 1 at the right border. Crossing a border renormalizes to the new lane.
fn lane_coordinate(y: f64) -> f64 {
    y - libm::floor(y)
}

struct Generated {
    clean: Vec<LabeledSequence>,
    noisy: Vec<LabeledSequence>,
    noise: Vec<Vec<f64>>,
}

fn generate(cfg: &GeneratorConfig, count: usize, seed: u64) -> Result<Generated> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("count must be positive".into()));
    }
    let mut traj_rng = rng::stream(seed, "toy-trajectory");
    let mut noise_rng = rng::stream(seed, "toy-noise");
    let nm = Normal::new(0.0, cfg.sigma_noise).map_err(|_| Error::InvalidConfig("sigma".into()))?;
    let nv = Normal::new(0.0, cfg.sigma_noise_velocity).map_err(|_| Error::InvalidConfig("sigma".into()))?;
    let f = cfg.features;
    let mut out = Generated { clean: Vec::new(), noisy: Vec::new(), noise: Vec::new() };
    for _ in 0..count {
        let tr = simulate(cfg, &mut traj_rng);
        let len = tr.y.len();
        let mut clean = Vec::with_capacity(len * f);
        let mut noisy = Vec::with_capacity(len * f);
        let mut noise = Vec::with_capacity(len * f);
        for t in 0..len {
            let m = lane_coordinate(tr.y[t]);
            let e = nm.sample(&mut noise_rng);
            clean.push(m);
            noisy.push((m + e).clamp(0.0, 1.0));
            noise.push(e);
            if f == 2 {
                let e = nv.sample(&mut noise_rng);
                clean.push(tr.v[t]);
                noisy.push(tr.v[t] + e);
                noise.push(e);
            }
        }
        let events: Vec<ManeuverEvent> = tr.event.into_iter().collect();
        out.clean.push(LabeledSequence::new(f, clean, events.clone(), cfg.frame_rate)?);
        out.noisy.push(LabeledSequence::new(f, noisy, events, cfg.frame_rate)?);
        out.noise.push(noise);
    }
    Ok(out)
}

/// Simulated lane-following / lane-change trajectories. With the same seed the
/// clean and noisy domains share the underlying trajectories; the noisy one
/// adds i.i.d. Gaussian noise per frame and clips `m` to `[0, 1]`.
/// Sequences come back unlabeled; see [`label_and_weight`].
pub fn generate_toy_lane_changes(
    cfg: &GeneratorConfig,
    domain: ToyDomain,
    count: usize,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    let g = generate(cfg, count, seed)?;
    Ok(match domain {
        ToyDomain::Clean => g.clean,
        ToyDomain::Noisy => g.noisy,
    })
}

/// Clean and noisy variants of the same trajectories plus the raw noise draws
/// (before clipping), frame-major like the sequences' frames.
pub fn generate_toy_pair(
    cfg: &GeneratorConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>, Vec<Vec<f64>>)> {
    let g = generate(cfg, count, seed)?;
    Ok((g.clean, g.noisy, g.noise))
}

/// Frame labeling and weighting around annotated lane changes. Times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig {
    /// Frames this long before execution carry the maneuver's direction.
    pub horizon_s: f64,
    /// Zero-weight gap immediately before the labeled window.
    pub ignore_s: f64,
    /// Zero-weight period starting at the execution frame.
    pub post_ignore_s: f64,
    /// Exponential emphasis of frames close to execution.
    pub alpha: f64,
    /// Count left and right as one class when balancing (binary taggers).
    pub merge_directions: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { horizon_s: 3.0, ignore_s: 0.5, post_ignore_s: 1.5, alpha: 1.0, merge_directions: false }
    }
}

impl LabelConfig {
    fn frames(&self, seconds: f64, rate: f64) -> usize {
        libm::round(seconds * rate) as usize
    }
}

fn class_key(label: Maneuver, merge: bool) -> Maneuver {
    if merge && label.is_lane_change() {
        Maneuver::Change
    } else {
        label
    }
}

/// Assigns labels and loss weights from maneuver annotations.
///
/// Frames in `[exec − horizon, exec)` take the maneuver's direction, the
/// `ignore_s` before that window and the `post_ignore_s` from execution on
/// get weight 0, all others are `Follow`. Class weights are inversely
/// proportional to class frequency over the whole dataset; lane-change
/// frames are further scaled by `exp(α · (1 − time_to_exec / horizon))`.
pub fn label_and_weight(ds: &[LabeledSequence], cfg: &LabelConfig) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::with_capacity(ds.len());
    for seq in ds {
        let mut s = seq.clone();
        let len = s.len();
        s.labels = vec![Maneuver::Follow; len];
        s.weights = vec![1.0; len];
        let rate = s.frame_rate;
        let horizon = cfg.frames(cfg.horizon_s, rate);
        let ignore = cfg.frames(cfg.ignore_s, rate);
        let post = cfg.frames(cfg.post_ignore_s, rate);
        let mut events = s.events.clone();
        events.sort_by_key(|e| e.exec_frame);
        for pair in events.windows(2) {
            let reach_prev = pair[0].exec_frame + post;
            let start_next = pair[1].exec_frame.saturating_sub(horizon + ignore);
            if start_next < reach_prev {
                return Err(Error::OverlappingManeuvers { first: pair[0].exec_frame, second: pair[1].exec_frame });
            }
        }
        for e in &events {
            if !e.direction.is_lane_change() {
                return Err(Error::InvalidConfig("maneuver annotations must be left or right".into()));
            }
            let exec = e.exec_frame.min(len);
            let onset = exec.saturating_sub(horizon);
            for t in onset.saturating_sub(ignore)..onset {
                s.weights[t] = 0.0;
            }
            for t in onset..exec {
                s.labels[t] = e.direction;
            }
            for t in exec..(exec + post).min(len) {
                s.weights[t] = 0.0;
            }
        }
        out.push(s);
    }

    let mut counts: BTreeMap<Maneuver, usize> = BTreeMap::new();
    for s in &out {
        for (l, w) in s.labels.iter().zip(&s.weights) {
            if *w > 0.0 {
                *counts.entry(class_key(*l, cfg.merge_directions)).or_insert(0) += 1;
            }
        }
    }
    let total: usize = counts.values().sum();
    let classes = counts.len().max(1);
    let class_weight = |l: Maneuver| -> f64 {
        let c = counts.get(&class_key(l, cfg.merge_directions)).copied().unwrap_or(1);
        total as f64 / (classes as f64 * c as f64)
    };
    for s in &mut out {
        let mut events = s.events.clone();
        events.sort_by_key(|e| e.exec_frame);
        for t in 0..s.len() {
            if s.weights[t] == 0.0 {
                continue;
            }
            let mut w = class_weight(s.labels[t]);
            if s.labels[t].is_lane_change() {
                let exec = events.iter().find(|e| e.exec_frame > t).map(|e| e.exec_frame).unwrap_or(t + 1);
                let to_exec = (exec - t) as f64 / s.frame_rate;
                w *= libm::exp(cfg.alpha * (1.0 - to_exec / cfg.horizon_s));
            }
            s.weights[t] = w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_with_event(len: usize, exec: usize, rate: f64) -> LabeledSequence {
        LabeledSequence::new(
            1,
            vec![0.5; len],
            vec![ManeuverEvent { direction: Maneuver::Left, exec_frame: exec }],
            rate,
        )
        .unwrap()
    }

    #[test]
    fn three_second_window_before_execution() {
        let out = label_and_weight(&[seq_with_event(150, 100, 10.0)], &LabelConfig::default()).unwrap();
        let s = &out[0];
        for t in 0..150 {
            let expect = if (70..100).contains(&t) { Maneuver::Left } else { Maneuver::Follow };
            assert_eq!(s.labels[t], expect, "frame {t}");
        }
        assert!((65..70).all(|t| s.weights[t] == 0.0));
        assert!((100..115).all(|t| s.weights[t] == 0.0));
        assert!(s.weights[64] > 0.0 && s.weights[115] > 0.0);
    }

    #[test]
    fn zero_alpha_gives_flat_lane_change_weights() {
        let cfg = LabelConfig { alpha: 0.0, ..LabelConfig::default() };
        let s = &label_and_weight(&[seq_with_event(150, 100, 10.0)], &cfg).unwrap()[0];
        let w: Vec<f64> = (70..100).map(|t| s.weights[t]).collect();
        assert!(w.iter().all(|&x| x == w[0]));
    }

    #[test]
    fn class_weights_are_inverse_frequency() {
        // 90 follow frames and 10 left frames with weight > 0
        let cfg = LabelConfig { horizon_s: 1.0, ignore_s: 0.0, post_ignore_s: 0.0, alpha: 0.0, merge_directions: false };
        let s = &label_and_weight(&[seq_with_event(100, 50, 10.0)], &cfg).unwrap()[0];
        let f = s.weights[0];
        let l = s.weights[45];
        assert!((l / f - 9.0).abs() < 1e-12, "ratio {}", l / f);
    }

    #[test]
    fn exponential_emphasis_grows_toward_execution() {
        let s = &label_and_weight(&[seq_with_event(150, 100, 10.0)], &LabelConfig::default()).unwrap()[0];
        assert!((71..100).all(|t| s.weights[t] > s.weights[t - 1]));
        let ratio = s.weights[99] / s.weights[70];
        // exp(α (1 − 0.1/3)) / exp(α (1 − 3/3))
        assert!((ratio - libm::exp(1.0 - 0.1 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn overlapping_maneuvers_are_rejected() {
        let mut s = seq_with_event(200, 60, 10.0);
        s.events.push(ManeuverEvent { direction: Maneuver::Right, exec_frame: 90 });
        assert!(matches!(
            label_and_weight(&[s], &LabelConfig::default()),
            Err(Error::OverlappingManeuvers { .. })
        ));
    }

    #[test]
    fn zero_noise_matches_clean() {
        let cfg = GeneratorConfig { sigma_noise: 0.0, sigma_noise_velocity: 0.0, features: 2, ..Default::default() };
        let clean = generate_toy_lane_changes(&cfg, ToyDomain::Clean, 20, 9).unwrap();
        let noisy = generate_toy_lane_changes(&cfg, ToyDomain::Noisy, 20, 9).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn generator_rejects_invalid_config() {
        let bad = GeneratorConfig { sigma_noise: -0.1, ..Default::default() };
        assert!(generate_toy_lane_changes(&bad, ToyDomain::Clean, 1, 0).is_err());
        let bad = GeneratorConfig { transition_s: 0.0, ..Default::default() };
        assert!(generate_toy_lane_changes(&bad, ToyDomain::Clean, 1, 0).is_err());
        assert!(generate_toy_lane_changes(&GeneratorConfig::default(), ToyDomain::Clean, 0, 0).is_err());
    }

    #[test]
    fn lane_coordinate_wraps_into_new_lane() {
        assert!((lane_coordinate(-0.25) - 0.75).abs() < 1e-15);
        assert!((lane_coordinate(1.3) - 0.3).abs() < 1e-12);
        assert_eq!(lane_coordinate(0.5), 0.5);
    }
}
