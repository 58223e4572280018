//! Loosely coupled correspondences between target and source samples, and
//! the losses that train a converter toward them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Graph, NodeId};
use crate::data::{LabeledSequence, Maneuver};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Partners of one target sample. For sequences, partner frame `t + offset`
/// corresponds to target frame `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceEntry {
    pub target: usize,
    pub partners: Vec<usize>,
    pub offsets: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceSet {
    pub n: usize,
    pub entries: Vec<CorrespondenceEntry>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry whose target is sample `target`, if any.
    pub fn for_target(&self, target: usize) -> Option<&CorrespondenceEntry> {
        self.entries.iter().find(|e| e.target == target)
    }
}

/// `n` picks from `pool`: uniformly without replacement when the pool is large
/// enough, otherwise uniformly with replacement.
fn draw(pool: &[usize], n: usize, rng: &mut Rng) -> Vec<usize> {
    if pool.len() >= n {
        let mut p = pool.to_vec();
        for i in 0..n {
            let j = rng.random_range(i..p.len());
            p.swap(i, j);
        }
        p.truncate(n);
        p
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Pairs every target sample with `n` source samples of the same label.
pub fn pair_by_label(target_labels: &[usize], source_labels: &[usize], n: usize, seed: u64) -> Result<CorrespondenceSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    let max = source_labels.iter().chain(target_labels).copied().max().unwrap_or(0);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); max + 1];
    for (i, &l) in source_labels.iter().enumerate() {
        by_label[l].push(i);
    }
    let mut rng = rng::stream(seed, "pair-label");
    let mut entries = Vec::with_capacity(target_labels.len());
    for (t, &l) in target_labels.iter().enumerate() {
        let pool = &by_label[l];
        if pool.is_empty() {
            return Err(Error::LabelAbsent(l));
        }
        entries.push(CorrespondenceEntry { target: t, partners: draw(pool, n, &mut rng), offsets: vec![0; n] });
    }
    Ok(CorrespondenceSet { n, entries })
}

/// Pairs follow-only sequences with random follow-only source sequences, and
/// lane changes with the `n` same-direction source lane changes whose
/// execution frames are closest (ties by index), aligned on execution.
/// When fewer than `n` candidates exist the ranked list is reused cyclically.
pub fn pair_sequences(
    target: &[LabeledSequence],
    source: &[LabeledSequence],
    n: usize,
    seed: u64,
) -> Result<CorrespondenceSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    let follow: Vec<usize> = (0..source.len()).filter(|&i| source[i].events.is_empty()).collect();
    let mut rng = rng::stream(seed, "pair-sequences");
    let mut entries = Vec::with_capacity(target.len());
    for (t, seq) in target.iter().enumerate() {
        let entry = match seq.primary_event() {
            None => {
                if follow.is_empty() {
                    return Err(Error::NoCandidates("a follow-only sequence".into()));
                }
                CorrespondenceEntry { target: t, partners: draw(&follow, n, &mut rng), offsets: vec![0; n] }
            }
            Some(ev) => {
                let mut cands: Vec<(usize, usize, usize)> = source
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| {
                        let e = s.primary_event()?;
                        (e.direction == ev.direction).then(|| (e.exec_frame.abs_diff(ev.exec_frame), i, e.exec_frame))
                    })
                    .collect();
                if cands.is_empty() {
                    return Err(Error::NoCandidates(format!("a {} lane change", ev.direction.symbol())));
                }
                cands.sort();
                let picks: Vec<&(usize, usize, usize)> = cands.iter().cycle().take(n).collect();
                CorrespondenceEntry {
                    target: t,
                    partners: picks.iter().map(|c| c.1).collect(),
                    offsets: picks.iter().map(|c| c.2 as i64 - ev.exec_frame as i64).collect(),
                }
            }
        };
        entries.push(entry);
    }
    Ok(CorrespondenceSet { n, entries })
}

/// Partner frames aligned to `len` target frames: `len × k` values and a
/// per-frame mask that is 0 where the partner has no frame. With
/// `homogeneous` every frame gets a trailing 1 (`k = f + 1`).
pub fn aligned_partner(partner: &LabeledSequence, offset: i64, len: usize, homogeneous: bool) -> (Vec<f64>, Vec<f64>) {
    let f = partner.features;
    let k = f + usize::from(homogeneous);
    let mut frames = vec![0.0; len * k];
    let mut mask = vec![0.0; len];
    for t in 0..len {
        let s = t as i64 + offset;
        if s < 0 || s >= partner.len() as i64 {
            continue;
        }
        let row = &mut frames[t * k..(t + 1) * k];
        row[..f].copy_from_slice(partner.frame(s as usize));
        if homogeneous {
            row[f] = 1.0;
        }
        mask[t] = 1.0;
    }
    (frames, mask)
}

fn l2(a: &[f64], b: &[f64], squared: bool) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if squared {
        s
    } else {
        libm::sqrt(s)
    }
}

/// `(1/n) Σᵢ ‖converted − partnerᵢ‖₂` for a single sample, or the squared norm.
pub fn correspondence_loss(converted: &[f64], partners: &[&[f64]], squared: bool) -> Result<f64> {
    if partners.is_empty() {
        return Err(Error::EmptyInput("correspondence partners"));
    }
    let mut total = 0.0;
    for p in partners {
        if p.len() != converted.len() {
            return Err(Error::ShapeMismatch {
                op: "correspondence_loss",
                detail: format!("{} vs {} values", converted.len(), p.len()),
            });
        }
        total += l2(converted, p, squared);
    }
    Ok(total / partners.len() as f64)
}

/// Graph version over a batch. `rows: [m, k]` are the converted rows (one per
/// image, or one per frame for sequences), `partners[i]` the matching `[m, k]`
/// rows of each sample's `i`-th partner and `masks[i]` a per-row weight.
/// Row norms are summed within a sample, averaged over partners and then
/// divided by `samples`.
pub fn correspondence_loss_node(
    g: &mut Graph,
    rows: NodeId,
    partners: &[Tensor],
    masks: &[Tensor],
    samples: usize,
    squared: bool,
) -> Result<NodeId> {
    if partners.is_empty() || partners.len() != masks.len() {
        return Err(Error::EmptyInput("correspondence partners"));
    }
    let mut terms = Vec::with_capacity(partners.len());
    for (p, m) in partners.iter().zip(masks) {
        if p.shape() != g.shape(rows) || m.shape() != [g.shape(rows)[0]] {
            return Err(Error::ShapeMismatch {
                op: "correspondence_loss",
                detail: format!("rows {:?}, partner {:?}, mask {:?}", g.shape(rows), p.shape(), m.shape()),
            });
        }
        let pc = g.constant(p.clone());
        let d = g.sub(rows, pc)?;
        let norms = g.row_norm(d, squared)?;
        let mc = g.constant(m.clone());
        let masked = g.mul(norms, mc)?;
        terms.push(g.sum(masked)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    g.scale(total, 1.0 / (partners.len() * samples) as f64)
}

/// Mean over masked matrices of `‖C(x) − T̃‖_F`, or of its square.
/// `mats: [m, n, n]`, `targets: [m, n, n]`, `mask: [m]`.
pub fn frobenius_loss(g: &mut Graph, mats: NodeId, targets: &Tensor, mask: &Tensor, squared: bool) -> Result<NodeId> {
    let s = g.shape(mats).to_vec();
    if targets.shape() != s.as_slice() || s.len() != 3 || mask.shape() != [s[0]] {
        return Err(Error::ShapeMismatch {
            op: "frobenius_loss",
            detail: format!("matrices {:?}, targets {:?}, mask {:?}", s, targets.shape(), mask.shape()),
        });
    }
    let count: f64 = mask.data().iter().sum();
    if count <= 0.0 {
        return Err(Error::EmptyInput("pre-training frames"));
    }
    let flat = g.reshape(mats, &[s[0], s[1] * s[2]])?;
    let t = g.constant(targets.clone().reshape(&[s[0], s[1] * s[2]])?);
    let d = g.sub(flat, t)?;
    let norms = g.row_norm(d, squared)?;
    let mc = g.constant(mask.clone());
    let masked = g.mul(norms, mc)?;
    let total = g.sum(masked)?;
    g.scale(total, 1.0 / count)
}

/// Whether a target's partners share its maneuver type.
pub fn partners_consistent(target: &LabeledSequence, source: &[LabeledSequence], entry: &CorrespondenceEntry) -> bool {
    let dir = |s: &LabeledSequence| s.primary_event().map(|e| e.direction).unwrap_or(Maneuver::Follow);
    entry.partners.iter().all(|&p| dir(&source[p]) == dir(target))
}
