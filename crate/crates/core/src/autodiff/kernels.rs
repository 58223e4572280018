//! Raw numeric kernels behind the graph ops. All buffers are row-major.

/// `c[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }
    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }
}

/// Valid range of output columns `j` such that `j + kj - pad` is inside `0..w`.
#[inline]
fn col_range(kj: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj);
    let hi = (w + pad).saturating_sub(kj).min(ow);
    (lo, hi.max(lo))
}

pub fn conv2d_forward(x: &[f64], wt: &[f64], bias: &[f64], d: ConvDims, out: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for n in 0..d.n {
        for o in 0..d.o {
            let obase = (n * d.o + o) * oh * ow;
            out[obase..obase + oh * ow].iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.h * d.w;
                for ki in 0..d.k {
                    for kj in 0..d.k {
                        let wv = wt[((o * d.c + c) * d.k + ki) * d.k + kj];
                        let (jlo, jhi) = col_range(kj, d.pad, d.w, ow);
                        for i in 0..oh {
                            let ii = i + ki;
                            if ii < d.pad || ii - d.pad >= d.h {
                                continue;
                            }
                            let xrow = xbase + (ii - d.pad) * d.w;
                            let orow = obase + i * ow;
                            for j in jlo..jhi {
                                out[orow + j] += wv * x[xrow + j + kj - d.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates gradients of a convolution into `dx`, `dw`, `db` (any may be skipped).
pub fn conv2d_backward(
    x: &[f64],
    wt: &[f64],
    dout: &[f64],
    d: ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for n in 0..d.n {
        for o in 0..d.o {
            let obase = (n * d.o + o) * oh * ow;
            if let Some(db) = db.as_deref_mut() {
                db[o] += dout[obase..obase + oh * ow].iter().sum::<f64>();
            }
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.h * d.w;
                for ki in 0..d.k {
                    for kj in 0..d.k {
                        let widx = ((o * d.c + c) * d.k + ki) * d.k + kj;
                        let wv = wt[widx];
                        let (jlo, jhi) = col_range(kj, d.pad, d.w, ow);
                        let mut wacc = 0.0;
                        for i in 0..oh {
                            let ii = i + ki;
                            if ii < d.pad || ii - d.pad >= d.h {
                                continue;
                            }
                            let xrow = xbase + (ii - d.pad) * d.w;
                            let orow = obase + i * ow;
                            if let Some(dx) = dx.as_deref_mut() {
                                for j in jlo..jhi {
                                    dx[xrow + j + kj - d.pad] += wv * dout[orow + j];
                                }
                            }
                            for j in jlo..jhi {
                                wacc += x[xrow + j + kj - d.pad] * dout[orow + j];
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2 over `[planes, h, w]`; odd trailing rows/cols are dropped.
/// Returns the flat input index of each selected maximum (first maximum wins ties).
pub fn maxpool2_forward(x: &[f64], planes: usize, h: usize, w: usize, out: &mut [f64]) -> alloc::vec::Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut arg = alloc::vec![0usize; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (p * oh + i) * ow + j;
                out[o] = x[best];
                arg[o] = best;
            }
        }
    }
    arg
}

/// Pixel coordinate for a normalized coordinate in `[-1, 1]` (corners aligned).
#[inline]
pub fn unnormalize(coord: f64, size: usize) -> f64 {
    let u = (coord + 1.0) * (size as f64 - 1.0) * 0.5;
    let r = libm::round(u);
    // snap so that grid-aligned transforms sample pixels exactly
    if libm::fabs(u - r) < 1e-9 {
        r
    } else {
        u
    }
}

#[inline]
pub fn normalized_grid(index: usize, size: usize) -> f64 {
    if size == 1 {
        0.0
    } else {
        -1.0 + 2.0 * index as f64 / (size as f64 - 1.0)
    }
}

#[inline]
fn pixel(img: &[f64], h: usize, w: usize, r: i64, c: i64) -> f64 {
    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
        0.0
    } else {
        img[r as usize * w + c as usize]
    }
}

/// Source location `(u, v, wh)` read by output pixel `(i, j)` under `t` (3x3, row-major).
#[inline]
fn source(t: &[f64], i: usize, j: usize, h: usize, w: usize) -> (f64, f64, f64, f64, f64) {
    let xn = normalized_grid(j, w);
    let yn = normalized_grid(i, h);
    let xs = t[0] * xn + t[1] * yn + t[2];
    let ys = t[3] * xn + t[4] * yn + t[5];
    let ws = t[6] * xn + t[7] * yn + t[8];
    (xs, ys, ws, xn, yn)
}

/// Bilinear sampling of `n` single-channel images under per-image 3x3 transforms.
pub fn grid_sample_forward(img: &[f64], theta: &[f64], n: usize, h: usize, w: usize, out: &mut [f64]) {
    for b in 0..n {
        let t = &theta[b * 9..b * 9 + 9];
        let src = &img[b * h * w..(b + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let (xs, ys, ws, _, _) = source(t, i, j, h, w);
                let u = unnormalize(xs / ws, w);
                let v = unnormalize(ys / ws, h);
                let (c0, r0) = (libm::floor(u), libm::floor(v));
                let (fx, fy) = (u - c0, v - r0);
                let (c0, r0) = (c0 as i64, r0 as i64);
                let p00 = pixel(src, h, w, r0, c0);
                let mut val = (1.0 - fx) * (1.0 - fy) * p00;
                if fx != 0.0 {
                    val += fx * (1.0 - fy) * pixel(src, h, w, r0, c0 + 1);
                }
                if fy != 0.0 {
                    val += (1.0 - fx) * fy * pixel(src, h, w, r0 + 1, c0);
                    if fx != 0.0 {
                        val += fx * fy * pixel(src, h, w, r0 + 1, c0 + 1);
                    }
                }
                out[b * h * w + i * w + j] = val;
            }
        }
    }
}

pub fn grid_sample_backward(
    img: &[f64],
    theta: &[f64],
    dout: &[f64],
    n: usize,
    h: usize,
    w: usize,
    mut dimg: Option<&mut [f64]>,
    mut dtheta: Option<&mut [f64]>,
) {
    let sx = (w as f64 - 1.0) * 0.5;
    let sy = (h as f64 - 1.0) * 0.5;
    for b in 0..n {
        let t = &theta[b * 9..b * 9 + 9];
        let src = &img[b * h * w..(b + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let g = dout[b * h * w + i * w + j];
                if g == 0.0 {
                    continue;
                }
                let (xs, ys, ws, xn, yn) = source(t, i, j, h, w);
                let u = unnormalize(xs / ws, w);
                let v = unnormalize(ys / ws, h);
                let (c0f, r0f) = (libm::floor(u), libm::floor(v));
                let (fx, fy) = (u - c0f, v - r0f);
                let (c0, r0) = (c0f as i64, r0f as i64);
                let p00 = pixel(src, h, w, r0, c0);
                let p01 = pixel(src, h, w, r0, c0 + 1);
                let p10 = pixel(src, h, w, r0 + 1, c0);
                let p11 = pixel(src, h, w, r0 + 1, c0 + 1);
                if let Some(dimg) = dimg.as_deref_mut() {
                    let base = b * h * w;
                    let mut put = |r: i64, c: i64, wgt: f64| {
                        if wgt != 0.0 && r >= 0 && c >= 0 && r < h as i64 && c < w as i64 {
                            dimg[base + r as usize * w + c as usize] += g * wgt;
                        }
                    };
                    put(r0, c0, (1.0 - fx) * (1.0 - fy));
                    put(r0, c0 + 1, fx * (1.0 - fy));
                    put(r0 + 1, c0, (1.0 - fx) * fy);
                    put(r0 + 1, c0 + 1, fx * fy);
                }
                if let Some(dtheta) = dtheta.as_deref_mut() {
                    let du = (1.0 - fy) * (p01 - p00) + fy * (p11 - p10);
                    let dv = (1.0 - fx) * (p10 - p00) + fx * (p11 - p01);
                    // u = (xs/ws + 1) sx, v = (ys/ws + 1) sy
                    let gxs = g * du * sx / ws;
                    let gys = g * dv * sy / ws;
                    let gws = -(g * du * sx * xs + g * dv * sy * ys) / (ws * ws);
                    let dt = &mut dtheta[b * 9..b * 9 + 9];
                    dt[0] += gxs * xn;
                    dt[1] += gxs * yn;
                    dt[2] += gxs;
                    dt[3] += gys * xn;
                    dt[4] += gys * yn;
                    dt[5] += gys;
                    dt[6] += gws * xn;
                    dt[7] += gws * yn;
                    dt[8] += gws;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        matmul_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // b^T stored as 2x3
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        matmul_bt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);
    }

    #[test]
    fn conv_valid_and_same_sizes() {
        let d = ConvDims { n: 1, c: 1, h: 5, w: 5, o: 1, k: 3, pad: 0 };
        assert_eq!((d.out_h(), d.out_w()), (3, 3));
        let d = ConvDims { pad: 1, ..d };
        assert_eq!((d.out_h(), d.out_w()), (5, 5));
    }

    #[test]
    fn conv_of_delta_reproduces_kernel() {
        let mut x = [0.0; 9];
        x[4] = 1.0;
        let k: [f64; 9] = core::array::from_fn(|i| i as f64);
        let d = ConvDims { n: 1, c: 1, h: 3, w: 3, o: 1, k: 3, pad: 1 };
        let mut out = [0.0; 9];
        conv2d_forward(&x, &k, &[0.0], d, &mut out);
        // cross-correlation flips the kernel around the delta
        let flipped: [f64; 9] = core::array::from_fn(|i| (8 - i) as f64);
        assert_eq!(out, flipped);
    }

    #[test]
    fn maxpool_picks_first_max() {
        let x = [1.0, 3.0, 3.0, 0.0];
        let mut out = [0.0];
        let arg = maxpool2_forward(&x, 1, 2, 2, &mut out);
        assert_eq!(out[0], 3.0);
        assert_eq!(arg[0], 1);
    }

    #[test]
    fn grid_aligned_coordinates_are_exact() {
        for size in [2usize, 5, 28] {
            for i in 0..size {
                assert_eq!(unnormalize(normalized_grid(i, size), size), i as f64);
                assert_eq!(unnormalize(-normalized_grid(i, size), size), (size - 1 - i) as f64);
            }
        }
    }
}
