use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `n` single-channel images of `height × width` pixels in `[0, 1]`, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub domain: String,
}

impl ImageDataset {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize, labels: Vec<usize>, domain: &str) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != labels.len() * height * width {
            return Err(Error::ShapeMismatch {
                op: "image_dataset",
                detail: alloc::format!("{} pixels for {} images of {height}x{width}", pixels.len(), labels.len()),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("pixel values must lie in [0, 1]".into()));
        }
        Ok(ImageDataset { pixels, height, width, labels, domain: domain.into() })
    }

    /// From an `(n, h, w)` image tensor and matching labels.
    pub fn from_tensor(images: &Tensor, labels: Vec<usize>, domain: &str) -> Result<Self> {
        let s = images.shape();
        if s.len() != 3 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "image_dataset",
                detail: alloc::format!("images {:?} with {} labels", s, labels.len()),
            });
        }
        Self::new(images.data().to_vec(), s[1], s[2], labels, domain)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.pixel_count());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        ImageDataset {
            pixels,
            height: self.height,
            width: self.width,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain.clone(),
        }
    }

    /// Replaces all pixels, keeping labels. Values are clamped into `[0, 1]`.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> ImageDataset {
        assert_eq!(pixels.len(), self.pixels.len());
        ImageDataset { pixels: pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(), ..self.clone() }
    }

    /// Replaces all pixels without range checks. Used for converted or
    /// aligned images, which may leave `[0, 1]`.
    pub(crate) fn with_raw_pixels(&self, pixels: Vec<f64>) -> ImageDataset {
        assert_eq!(pixels.len(), self.pixels.len());
        ImageDataset { pixels, ..self.clone() }
    }

    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }
}

/// Rotates every image by exactly 180° (both axes reversed); labels unchanged.
pub fn make_rotated_domain(ds: &ImageDataset) -> ImageDataset {
    let n = ds.pixel_count();
    let mut pixels = Vec::with_capacity(ds.pixels.len());
    for i in 0..ds.len() {
        pixels.extend(ds.image(i).iter().rev());
    }
    debug_assert_eq!(pixels.len(), ds.len() * n);
    ImageDataset { pixels, domain: alloc::format!("{}-rot180", ds.domain), ..ds.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> ImageDataset {
        let mut px = vec![0.0; 2 * 3 * 4];
        px[0] = 1.0;
        px[12 + 5] = 0.5;
        ImageDataset::new(px, 3, 4, vec![7, 2], "a").unwrap()
    }

    #[test]
    fn rotation_is_an_involution() {
        let ds = tiny();
        let twice = make_rotated_domain(&make_rotated_domain(&ds));
        assert_eq!(twice.pixels(), ds.pixels());
        assert_eq!(twice.labels, ds.labels);
    }

    #[test]
    fn corner_pixel_moves_to_opposite_corner() {
        let rot = make_rotated_domain(&tiny());
        assert_eq!(rot.image(0)[2 * 4 + 3], 1.0);
        assert_eq!(rot.class_histogram(), tiny().class_histogram());
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(ImageDataset::new(vec![0.0; 5], 2, 2, vec![1], "a").is_err());
        assert!(ImageDataset::new(vec![2.0; 4], 2, 2, vec![1], "a").is_err());
    }
}
