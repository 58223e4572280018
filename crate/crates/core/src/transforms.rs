//! Homogeneous transforms and their application to points, frames and images.
//!
//! Matrices act on column vectors: a point `p` maps to `T · (p, 1)ᵀ`.
//! Matrices written for row vectors, `(p, 1) · M`, are accepted through
//! [`TransformMatrix::from_row_convention`], which stores `Mᵀ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::kernels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Restriction on the transforms a matrix may represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Rotation plus translation.
    Euclidean,
    /// Last row fixed to `(0, …, 0, 1)`.
    Affine,
    /// General homogeneous transform, renormalized after application.
    Projective,
    /// Every entry free; results are not renormalized.
    Unrestricted,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Euclidean => "euclidean",
            Family::Affine => "affine",
            Family::Projective => "projective",
            Family::Unrestricted => "unrestricted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "euclidean" => Family::Euclidean,
            "affine" => Family::Affine,
            "projective" => Family::Projective,
            "unrestricted" => Family::Unrestricted,
            _ => return None,
        })
    }
}

const FAMILY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    dim: usize,
    entries: Vec<f64>,
    family: Family,
}

impl TransformMatrix {
    /// `entries` are the `(dim+1)²` row-major values of a column-convention matrix.
    pub fn new(dim: usize, entries: Vec<f64>, family: Family) -> Result<Self> {
        let n = dim + 1;
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: entries.len() });
        }
        let mut t = TransformMatrix { dim, entries, family };
        if family == Family::Projective {
            let corner = t.get(dim, dim);
            if libm::fabs(corner) > 1e-12 {
                t.entries.iter_mut().for_each(|v| *v /= corner);
            }
        }
        t.check_family()?;
        Ok(t)
    }

    /// Builds from a matrix written for row vectors, `(p, 1) · M`.
    pub fn from_row_convention(dim: usize, entries: &[f64], family: Family) -> Result<Self> {
        let n = dim + 1;
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: entries.len() });
        }
        let mut t = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                t[c * n + r] = entries[r * n + c];
            }
        }
        Self::new(dim, t, family)
    }

    pub fn identity(dim: usize) -> Self {
        let n = dim + 1;
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = 1.0;
        }
        TransformMatrix { dim, entries: e, family: Family::Euclidean }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * (self.dim + 1) + col]
    }

    /// Reinterprets the same entries under a wider family.
    pub fn with_family(mut self, family: Family) -> Result<Self> {
        self.family = family;
        self.check_family()?;
        Ok(self)
    }

    /// Verifies the family invariants.
    pub fn check_family(&self) -> Result<()> {
        let d = self.dim;
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("{} matrix: {what}", self.family.name())));
        if self.entries.iter().any(|v| !v.is_finite()) {
            return bad("non-finite entry");
        }
        let last_row_ok = (0..d).all(|c| self.get(d, c) == 0.0) && self.get(d, d) == 1.0;
        match self.family {
            Family::Unrestricted | Family::Projective => Ok(()),
            Family::Affine => {
                if last_row_ok {
                    Ok(())
                } else {
                    bad("last row must be (0, …, 0, 1)")
                }
            }
            Family::Euclidean => {
                if !last_row_ok {
                    return bad("last row must be (0, …, 0, 1)");
                }
                for a in 0..d {
                    for b in 0..d {
                        let dot: f64 = (0..d).map(|k| self.get(k, a) * self.get(k, b)).sum();
                        let want = if a == b { 1.0 } else { 0.0 };
                        if libm::fabs(dot - want) > FAMILY_TOL {
                            return bad("rotation block is not orthonormal");
                        }
                    }
                }
                if libm::fabs(self.block_determinant() - 1.0) > FAMILY_TOL {
                    return bad("rotation block has determinant != 1");
                }
                Ok(())
            }
        }
    }

    /// Matrix product `self · rhs`; the result takes the wider family.
    pub fn compose(&self, rhs: &TransformMatrix) -> Result<TransformMatrix> {
        if self.dim != rhs.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rhs.dim });
        }
        let n = self.dim + 1;
        let mut out = vec![0.0; n * n];
        kernels::matmul_acc(&self.entries, &rhs.entries, &mut out, n, n, n);
        let family = wider(self.family, rhs.family);
        // re-check after rounding: a product of rotations stays a rotation only approximately
        Ok(TransformMatrix { dim: self.dim, entries: out, family })
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.entries, self.dim + 1)
    }

    /// Determinant of the upper-left `dim × dim` block.
    pub fn block_determinant(&self) -> f64 {
        let d = self.dim;
        let mut block = Vec::with_capacity(d * d);
        for r in 0..d {
            block.extend_from_slice(&self.entries[r * (d + 1)..r * (d + 1) + d]);
        }
        determinant(&block, d)
    }

    pub fn inverse(&self) -> Result<TransformMatrix> {
        let n = self.dim + 1;
        let mut a = self.entries.clone();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| libm::fabs(a[x * n + col]).total_cmp(&libm::fabs(a[y * n + col])))
                .unwrap();
            if libm::fabs(a[pivot * n + col]) < 1e-12 {
                return Err(Error::NonInvertible);
            }
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
                inv.swap(col * n + k, pivot * n + k);
            }
            let p = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= p;
                inv[col * n + k] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r * n + col];
                    if f != 0.0 {
                        for k in 0..n {
                            a[r * n + k] -= f * a[col * n + k];
                            inv[r * n + k] -= f * inv[col * n + k];
                        }
                    }
                }
            }
        }
        let family = match self.family {
            Family::Euclidean | Family::Affine => Family::Affine,
            f => f,
        };
        let mut out = TransformMatrix { dim: self.dim, entries: inv, family };
        if matches!(self.family, Family::Euclidean | Family::Affine) {
            // restore the exact affine last row lost to rounding
            let d = self.dim;
            for c in 0..d {
                out.entries[d * n + c] = 0.0;
            }
            out.entries[d * n + d] = 1.0;
        }
        Ok(out)
    }
}

fn wider(a: Family, b: Family) -> Family {
    use Family::*;
    match (a, b) {
        (Unrestricted, _) | (_, Unrestricted) => Unrestricted,
        (Projective, _) | (_, Projective) => Projective,
        (Affine, _) | (_, Affine) => Affine,
        // composed rotations drift by rounding, so keep the looser affine contract
        (Euclidean, Euclidean) => Affine,
    }
}

fn determinant(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| libm::fabs(a[x * n + col]).total_cmp(&libm::fabs(a[y * n + col])));
        let Some(pivot) = pivot else { return det };
        let p = a[pivot * n + col];
        if p == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
        }
    }
    det
}

/// Planar rigid transform: rotation by `angle` radians, then translation.
pub fn make_euclidean(angle: f64, tx: f64, ty: f64) -> TransformMatrix {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    TransformMatrix { dim: 2, entries: vec![c, -s, tx, s, c, ty, 0.0, 0.0, 1.0], family: Family::Euclidean }
}

/// A point `(x₁, …, x_d, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousPoint {
    coords: Vec<f64>,
}

impl HomogeneousPoint {
    pub fn new(coords: &[f64]) -> Self {
        let mut c = coords.to_vec();
        c.push(1.0);
        HomogeneousPoint { coords: c }
    }

    /// Cartesian coordinates, without the trailing homogeneous entry.
    pub fn cartesian(&self) -> &[f64] {
        &self.coords[..self.coords.len() - 1]
    }

    pub fn homogeneous(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }
}

fn apply_homogeneous(t: &TransformMatrix, h: &[f64]) -> Vec<f64> {
    let n = t.dim + 1;
    (0..n).map(|r| (0..n).map(|c| t.entries[r * n + c] * h[c]).sum()).collect()
}

/// `T · p`, renormalized for projective matrices.
pub fn apply_to_point(t: &TransformMatrix, p: &HomogeneousPoint) -> Result<HomogeneousPoint> {
    if p.dim() != t.dim {
        return Err(Error::DimensionMismatch { expected: t.dim, found: p.dim() });
    }
    let mut out = apply_homogeneous(t, &p.coords);
    match t.family {
        Family::Projective => {
            let w = out[t.dim];
            if libm::fabs(w) < 1e-9 {
                return Err(Error::DegenerateProjection);
            }
            out.iter_mut().for_each(|v| *v /= w);
            out[t.dim] = 1.0;
        }
        Family::Euclidean | Family::Affine => out[t.dim] = 1.0,
        Family::Unrestricted => {}
    }
    Ok(HomogeneousPoint { coords: out })
}

/// Transforms a feature vector of `f` values with an `(f+1)×(f+1)` matrix and
/// returns the `f` transformed features. Unrestricted matrices drop the
/// homogeneous output coordinate without renormalizing.
pub fn apply_to_frame(t: &TransformMatrix, frame: &[f64]) -> Result<Vec<f64>> {
    let p = apply_to_point(t, &HomogeneousPoint::new(frame))?;
    Ok(p.cartesian().to_vec())
}

/// Resamples a `[h, w]` image so that output pixel `g` (in `[-1, 1]²`
/// coordinates, corners aligned) reads the input bilinearly at `T · g`.
/// Samples outside the image read 0.
pub fn sample_image(image: &Tensor, t: &TransformMatrix) -> Result<Tensor> {
    if image.shape().len() != 2 {
        return Err(Error::ShapeMismatch { op: "sample_image", detail: alloc::format!("{:?}", image.shape()) });
    }
    if t.dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: t.dim });
    }
    if libm::fabs(t.determinant()) <= 1e-12 {
        return Err(Error::NonInvertible);
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = vec![0.0; h * w];
    kernels::grid_sample_forward(image.data(), &t.entries, 1, h, w, &mut out);
    Tensor::new(&[h, w], out)
}

/// Per-frame target that moves every feature to a fixed neutral value,
/// e.g. `m → 0.5` (lane center) and `v → 0`.
pub fn neutral_projection(neutral: &[f64]) -> TransformMatrix {
    let f = neutral.len();
    let n = f + 1;
    let mut e = vec![0.0; n * n];
    for (r, v) in neutral.iter().enumerate() {
        e[r * n + f] = *v;
    }
    e[f * n + f] = 1.0;
    TransformMatrix { dim: f, entries: e, family: Family::Affine }
}
