//! CORAL: align second-order statistics of the target domain to the source.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest count as zero.
const SINGULAR_TOL: f64 = 1e-12;

/// Per-feature mean and unbiased covariance (`d × d`, row-major) of `rows`.
pub fn covariance(rows: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::DimensionMismatch { expected: d, found: rows.len() });
    }
    let n = rows.len() / d;
    if n < 2 {
        return Err(Error::EmptyInput("covariance needs two observations"));
    }
    let mut mean = vec![0.0; d];
    for r in rows.chunks(d) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in rows.chunks(d) {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, cov))
}

/// `S^p` of a symmetric positive semi-definite matrix via its eigendecomposition.
fn sym_power(m: DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v <= SINGULAR_TOL * max.max(f64::MIN_POSITIVE) {
            if p < 0.0 {
                return Err(Error::SingularCovariance);
            }
            *v = 0.0;
        } else {
            *v = libm::pow(*v, p);
        }
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Standardization of one domain: mean, per-feature deviation and the
/// correlation matrix. Constant features get deviation 1.
fn standardized_stats(rows: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let (mean, cov) = covariance(rows, d)?;
    let sd: Vec<f64> = (0..d)
        .map(|i| {
            let s = libm::sqrt(cov[i * d + i]);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let corr = DMatrix::from_fn(d, d, |i, j| cov[i * d + j] / (sd[i] * sd[j]));
    Ok((mean, sd, corr))
}

/// Affine map `y = D_s (C'_s + rI)^½ (C'_t + rI)^−½ D_t⁻¹ (x − μ_t) + μ_s`,
/// where `C'` are covariances of the per-feature standardized domains and
/// `D` their deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct CoralMap {
    pub dim: usize,
    pub target_mean: Vec<f64>,
    pub source_mean: Vec<f64>,
    /// `d × d` row-major linear part acting on `x − μ_t`.
    pub linear: Vec<f64>,
}

impl CoralMap {
    pub fn fit(target: &[f64], source: &[f64], d: usize, ridge: f64) -> Result<CoralMap> {
        if !(ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        let (mu_t, sd_t, c_t) = standardized_stats(target, d)?;
        let (mu_s, sd_s, c_s) = standardized_stats(source, d)?;
        let eye = DMatrix::<f64>::identity(d, d);
        let whiten = sym_power(c_t + &eye * ridge, -0.5)?;
        let color = sym_power(c_s + &eye * ridge, 0.5)?;
        let core = color * whiten;
        let linear = (0..d * d).map(|k| {
            let (i, j) = (k / d, k % d);
            sd_s[i] * core[(i, j)] / sd_t[j]
        });
        Ok(CoralMap { dim: d, target_mean: mu_t, source_mean: mu_s, linear: linear.collect() })
    }

    /// Maps concatenated `d`-wide observations.
    pub fn apply(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(rows.len());
        let mut centered = vec![0.0; d];
        for r in rows.chunks(d) {
            for i in 0..d {
                centered[i] = r[i] - self.target_mean[i];
            }
            for i in 0..d {
                let row = &self.linear[i * d..(i + 1) * d];
                out.push(self.source_mean[i] + row.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }
}

/// Aligns `target` observations to the statistics of `source`.
pub fn coral_align(target: &[f64], source: &[f64], d: usize, ridge: f64) -> Result<Vec<f64>> {
    Ok(CoralMap::fit(target, source, d, ridge)?.apply(target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_whitening() {
        // variance 4 on the target, 1 on the source
        let target = [-2.0, 2.0, -2.0, 2.0];
        let source = [-1.0, 1.0, -1.0, 1.0];
        let y = coral_align(&target, &source, 1, 0.0).unwrap();
        assert_eq!(y, vec![-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn identical_domains_are_untouched() {
        let x = [0.1, 2.0, 0.5, -1.0, 0.3, 0.7, 1.9, 0.2, -0.4, 0.0];
        let y = coral_align(&x, &x, 2, 1.0).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn singular_without_ridge() {
        let t = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let s = [0.0, 1.0, 1.0, 0.0, 2.0, 3.0];
        assert_eq!(coral_align(&t, &s, 2, 0.0).unwrap_err(), Error::SingularCovariance);
        assert!(coral_align(&t, &s, 2, 1.0).is_ok());
    }
}
