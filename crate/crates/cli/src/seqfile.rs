//! Delimited-text sequence files.
//!
//! ```text
//! frame_rate=10
//! # lc,L,80
//! 0.52,0.01,F,0.37
//! ```
//!
//! Each sequence starts with a `frame_rate=<Hz>` line. Frame rows hold the
//! features (`m`, or `m,v`) followed by the label and the loss weight.
//! `# lc,<L|R>,<exec_frame>` annotates a lane change; other `#` lines are
//! comments.

use std::fmt::Write as _;
use std::path::Path;

use transmat::data::{LabeledSequence, Maneuver, ManeuverEvent};

use crate::error::{read, write, CliError, CliResult};

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Format(format!("sequence file line {line}: {msg}"))
}

struct Partial {
    rate: f64,
    features: Option<usize>,
    frames: Vec<f64>,
    labels: Vec<Maneuver>,
    weights: Vec<f64>,
    events: Vec<ManeuverEvent>,
    line: usize,
}

impl Partial {
    fn finish(self) -> CliResult<LabeledSequence> {
        let features = self.features.ok_or_else(|| bad(self.line, "sequence without frames"))?;
        let len = self.labels.len();
        if let Some(e) = self.events.iter().find(|e| e.exec_frame > len) {
            return Err(bad(self.line, format!("lane change at frame {} beyond {len} frames", e.exec_frame)));
        }
        let mut s = LabeledSequence::new(features, self.frames, self.events, self.rate)?;
        s.labels = self.labels;
        s.weights = self.weights;
        Ok(s)
    }
}

pub fn parse_sequences(text: &str) -> CliResult<Vec<LabeledSequence>> {
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rate) = line.strip_prefix("frame_rate=") {
            let rate: f64 = rate.trim().parse().map_err(|_| bad(n, format!("bad frame rate `{rate}`")))?;
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(bad(n, "frame rate must be positive"));
            }
            if let Some(p) = cur.take() {
                out.push(p.finish()?);
            }
            cur = Some(Partial {
                rate,
                features: None,
                frames: Vec::new(),
                labels: Vec::new(),
                weights: Vec::new(),
                events: Vec::new(),
                line: n,
            });
            continue;
        }
        let Some(p) = cur.as_mut() else {
            if line.starts_with('#') {
                continue;
            }
            return Err(bad(n, "data before `frame_rate=` header"));
        };
        if let Some(comment) = line.strip_prefix('#') {
            let fields: Vec<&str> = comment.split(',').map(str::trim).collect();
            if fields.first() == Some(&"lc") {
                let [_, dir, frame] = fields[..] else {
                    return Err(bad(n, "expected `# lc,<L|R>,<exec_frame>`"));
                };
                let direction = match dir {
                    "L" => Maneuver::Left,
                    "R" => Maneuver::Right,
                    _ => return Err(bad(n, format!("direction `{dir}` is not L or R"))),
                };
                let exec_frame = frame.parse().map_err(|_| bad(n, format!("bad execution frame `{frame}`")))?;
                p.events.push(ManeuverEvent { direction, exec_frame });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(bad(n, "expected features, label and weight"));
        }
        let f = fields.len() - 2;
        if *p.features.get_or_insert(f) != f {
            return Err(bad(n, format!("{f} features, earlier rows have {}", p.features.unwrap())));
        }
        for v in &fields[..f] {
            let x: f64 = v.parse().map_err(|_| bad(n, format!("bad value `{v}`")))?;
            if !x.is_finite() {
                return Err(bad(n, "non-finite value"));
            }
            p.frames.push(x);
        }
        let label = fields[f];
        let label = match label.chars().collect::<Vec<_>>()[..] {
            [c] => Maneuver::from_symbol(c),
            _ => None,
        }
        .ok_or_else(|| bad(n, format!("bad label `{label}`")))?;
        let weight: f64 = fields[f + 1].parse().map_err(|_| bad(n, format!("bad weight `{}`", fields[f + 1])))?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(bad(n, "weights must be finite and non-negative"));
        }
        p.labels.push(label);
        p.weights.push(weight);
    }
    if let Some(p) = cur {
        out.push(p.finish()?);
    }
    Ok(out)
}

/// Inverse of [`parse_sequences`]; values are written in shortest round-trip form.
pub fn format_sequences(seqs: &[LabeledSequence]) -> String {
    let mut s = String::new();
    for q in seqs {
        let _ = writeln!(s, "frame_rate={}", q.frame_rate);
        for e in &q.events {
            let _ = writeln!(s, "# lc,{},{}", e.direction.symbol(), e.exec_frame);
        }
        for t in 0..q.len() {
            for v in q.frame(t) {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{},{}", q.labels[t].symbol(), q.weights[t]);
        }
    }
    s
}

pub fn read_sequences(path: &Path) -> CliResult<Vec<LabeledSequence>> {
    let text = String::from_utf8(read(path)?).map_err(|_| CliError::Format(format!("{}: not UTF-8", path.display())))?;
    parse_sequences(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn write_sequences(path: &Path, seqs: &[LabeledSequence]) -> CliResult<()> {
    write(path, format_sequences(seqs).as_bytes())
}
