//! The aggregated score against the published toy-sequence table. The table
//! does not state its class shares; one follow share fits every row.

use transmat::metrics::{score_with_shares, MetricsReport};

/// Rounding of the published values (three decimals on every input).
const TOL: f64 = 2e-3;
const FOLLOW_SHARE: f64 = 0.93;

fn report(frequency: f64, delay_s: f64, miss: f64) -> MetricsReport {
    MetricsReport {
        frequency,
        delay_s,
        miss,
        accuracy: None,
        events: 0,
        detected: 0,
        false_episodes: 0,
        follow_frames: 0,
        lane_change_frames: 0,
    }
}

/// Frequency, Delay, Miss and Score per row; the baseline is "A on B".
const ROWS: [(f64, f64, f64, f64); 9] = [
    (3.196, 0.945, 0.121, 0.186),
    (2.849, 0.897, 0.112, 0.275),
    (2.724, 1.077, 0.153, 0.262),
    (3.456, 0.888, 0.113, 0.137),
    (3.156, 0.878, 0.117, 0.203),
    (1.410, 1.140, 0.140, 0.565),
    (2.940, 0.903, 0.106, 0.257),
    (3.871, 0.931, 0.120, 0.034),
    (1.300, 0.992, 0.104, 0.625),
];

fn worst_error(s_f: f64) -> f64 {
    let base = report(4.085, 0.851, 0.108);
    ROWS.iter()
        .map(|&(f, d, m, score)| (score_with_shares(&report(f, d, m), &base, s_f, 1.0 - s_f).unwrap() - score).abs())
        .fold(0.0, f64::max)
}

#[test]
fn one_follow_share_reproduces_the_table() {
    assert!(worst_error(FOLLOW_SHARE) < TOL, "worst error {}", worst_error(FOLLOW_SHARE));
}

#[test]
fn the_fitting_share_is_narrow() {
    let fits: Vec<f64> = (0..=100).map(|k| 0.85 + 0.001 * k as f64).filter(|&s| worst_error(s) < TOL).collect();
    assert!(!fits.is_empty());
    assert!(fits.iter().all(|s| (s - FOLLOW_SHARE).abs() < 0.005), "{fits:?}");
}

#[test]
fn first_row_by_hand() {
    let base = report(4.085, 0.851, 0.108);
    let rel_f = (4.085 - 3.196) / 4.085;
    let rel_d = (0.851 - 0.945) / 0.851;
    let rel_m = (0.108 - 0.121) / 0.108;
    let want = FOLLOW_SHARE * rel_f + (1.0 - FOLLOW_SHARE) * (rel_d + rel_m);
    let got = score_with_shares(&report(3.196, 0.945, 0.121), &base, FOLLOW_SHARE, 1.0 - FOLLOW_SHARE).unwrap();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.186).abs() < TOL);
}
