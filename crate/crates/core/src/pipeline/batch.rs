//! Batching of image and sequence datasets into graph inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{ImageDataset, LabeledSequence, Maneuver};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class index of a frame label. Binary taggers use `Follow` / lane change,
/// three-class taggers `Follow` / `Left` / `Right`.
pub fn class_of(label: Maneuver, classes: usize) -> Result<usize> {
    match (classes, label) {
        (_, Maneuver::Follow) => Ok(0),
        (2, _) => Ok(1),
        (3, Maneuver::Left) => Ok(1),
        (3, Maneuver::Right) => Ok(2),
        _ => Err(Error::InvalidConfig(format!("label {} has no class among {classes}", label.symbol()))),
    }
}

/// Inverse of [`class_of`]; binary lane-change predictions become `Change`.
pub fn maneuver_of(class: usize, classes: usize) -> Maneuver {
    match (classes, class) {
        (_, 0) => Maneuver::Follow,
        (2, _) => Maneuver::Change,
        (_, 1) => Maneuver::Left,
        _ => Maneuver::Right,
    }
}

/// Model outputs for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Maneuvers(Vec<Vec<Maneuver>>),
}

/// A labeled dataset of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Images(ImageDataset),
    Sequences(Vec<LabeledSequence>),
}

impl Domain {
    pub fn len(&self) -> usize {
        match self {
            Domain::Images(d) => d.len(),
            Domain::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, Domain::Sequences(_))
    }

    /// Feature width of one observation: pixels per image or features per frame.
    pub fn row_width(&self) -> usize {
        match self {
            Domain::Images(d) => d.pixel_count(),
            Domain::Sequences(s) => s.first().map_or(0, |q| q.features),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Domain {
        match self {
            Domain::Images(d) => Domain::Images(d.subset(indices)),
            Domain::Sequences(s) => Domain::Sequences(indices.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    /// Longest sequence among `batch`, or 1 for images.
    pub fn steps(&self, batch: &[usize]) -> usize {
        match self {
            Domain::Images(_) => 1,
            Domain::Sequences(s) => batch.iter().map(|&i| s[i].len()).max().unwrap_or(0),
        }
    }

    /// `[n, h, w]` images, or `[b, steps, f]` sequences zero-padded at the end.
    pub fn inputs(&self, batch: &[usize]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        match self {
            Domain::Images(d) => {
                let mut px = Vec::with_capacity(batch.len() * d.pixel_count());
                for &i in batch {
                    px.extend_from_slice(d.image(i));
                }
                Tensor::new(&[batch.len(), d.height, d.width], px)
            }
            Domain::Sequences(s) => {
                let steps = self.steps(batch);
                let f = s[batch[0]].features;
                let mut data = vec![0.0; batch.len() * steps * f];
                for (k, &i) in batch.iter().enumerate() {
                    if s[i].features != f {
                        return Err(Error::DimensionMismatch { expected: f, found: s[i].features });
                    }
                    data[k * steps * f..k * steps * f + s[i].frames.len()].copy_from_slice(&s[i].frames);
                }
                Tensor::new(&[batch.len(), steps, f], data)
            }
        }
    }

    /// Per-row targets and loss weights matching the model's output rows.
    /// Padded frames get weight 0.
    pub fn targets(&self, batch: &[usize], classes: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        match self {
            Domain::Images(d) => Ok((batch.iter().map(|&i| d.labels[i]).collect(), vec![1.0; batch.len()])),
            Domain::Sequences(s) => {
                let steps = self.steps(batch);
                let mut t = vec![0; batch.len() * steps];
                let mut w = vec![0.0; batch.len() * steps];
                for (k, &i) in batch.iter().enumerate() {
                    for (j, (&l, &wt)) in s[i].labels.iter().zip(&s[i].weights).enumerate() {
                        t[k * steps + j] = class_of(l, classes)?;
                        w[k * steps + j] = wt;
                    }
                }
                Ok((t, w))
            }
        }
    }

    /// 1 for every real output row of `batch`, 0 for padding.
    pub fn row_mask(&self, batch: &[usize]) -> Tensor {
        let steps = self.steps(batch);
        let mut m = vec![0.0; batch.len() * steps];
        for (k, &i) in batch.iter().enumerate() {
            let len = match self {
                Domain::Images(_) => 1,
                Domain::Sequences(s) => s[i].len(),
            };
            m[k * steps..k * steps + len].iter_mut().for_each(|v| *v = 1.0);
        }
        Tensor::vector(&m)
    }

    /// Same labels and metadata with inputs taken from `rows`, which holds the
    /// concatenated observations of every sample in order. Converted images
    /// are kept as-is, without clamping to the pixel range.
    pub fn with_inputs(&self, rows: &[f64]) -> Result<Domain> {
        let total = match self {
            Domain::Images(d) => d.pixels().len(),
            Domain::Sequences(s) => s.iter().map(|q| q.frames.len()).sum(),
        };
        if rows.len() != total {
            return Err(Error::ShapeMismatch { op: "with_inputs", detail: format!("{} values for {total}", rows.len()) });
        }
        Ok(match self {
            Domain::Images(d) => Domain::Images(d.with_raw_pixels(rows.to_vec())),
            Domain::Sequences(s) => {
                let mut at = 0;
                Domain::Sequences(
                    s.iter()
                        .map(|q| {
                            let mut q = q.clone();
                            let n = q.frames.len();
                            q.frames.copy_from_slice(&rows[at..at + n]);
                            at += n;
                            q
                        })
                        .collect(),
                )
            }
        })
    }

    /// All observations concatenated: images or frames, row after row.
    pub fn observations(&self) -> Vec<f64> {
        match self {
            Domain::Images(d) => d.pixels().to_vec(),
            Domain::Sequences(s) => s.iter().flat_map(|q| q.frames.iter().copied()).collect(),
        }
    }

    /// Runs `f` on padded batches of `chunk` samples and gathers its
    /// per-row output, dropping padded rows. Returns one `Vec` per sample.
    pub fn map_rows(
        &self,
        chunk: usize,
        mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        let mut out = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        for batch in idx.chunks(chunk.max(1)) {
            let x = self.inputs(batch)?;
            let y = f(&x)?;
            let steps = self.steps(batch);
            let width = y.len() / (batch.len() * steps);
            for (k, &i) in batch.iter().enumerate() {
                let len = match self {
                    Domain::Images(_) => 1,
                    Domain::Sequences(s) => s[i].len(),
                };
                let start = k * steps * width;
                out.push(y.data()[start..start + len * width].to_vec());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManeuverEvent;

    #[test]
    fn class_mapping_round_trips() {
        for classes in [2, 3] {
            for m in [Maneuver::Follow, Maneuver::Left, Maneuver::Right] {
                let back = maneuver_of(class_of(m, classes).unwrap(), classes);
                assert!(back.matches(m));
            }
        }
        assert!(class_of(Maneuver::Change, 3).is_err());
    }

    #[test]
    fn sequences_are_padded_with_zero_weight() {
        let a = LabeledSequence::new(1, vec![0.1, 0.2, 0.3], vec![], 10.0).unwrap();
        let b = LabeledSequence::new(
            1,
            vec![0.4, 0.5],
            vec![ManeuverEvent { direction: Maneuver::Left, exec_frame: 1 }],
            10.0,
        )
        .unwrap();
        let d = Domain::Sequences(vec![a, b]);
        let x = d.inputs(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 3, 1]);
        assert_eq!(x.data(), &[0.4, 0.5, 0.0, 0.1, 0.2, 0.3]);
        let (_, w) = d.targets(&[1, 0], 2).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(d.row_mask(&[1, 0]).data(), &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        let rows = d.map_rows(2, |t| Ok(t.clone())).unwrap();
        assert_eq!(rows, vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.5]]);
    }
}
