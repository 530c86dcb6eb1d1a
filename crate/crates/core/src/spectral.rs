//! Pure spectral and pooling primitives: orthonormal 2-D DCT, single-level
//! Haar DWT, Gabor kernels, strip pooling and frequency channel attention.
//!
//! Everything here is a pure function of its inputs; the differentiable
//! counterparts used inside the network are built from tape primitives and
//! share the transform matrices defined here.

use crate::error::{shape_err, validation, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array4, Axis};

/// Batched multi-channel activation grid, indexed (batch, channel, row, col).
pub type FeatureMap<S> = Array4<S>;

/// Parameters of one Gabor kernel.
#[derive(Clone, Copy, Debug)]
pub struct GaborParams {
    /// Orientation in radians.
    pub theta: f64,
    /// Spatial frequency in cycles/pixel.
    pub f: f64,
    /// Aspect ratio of the Gaussian envelope.
    pub gamma: f64,
    /// Envelope standard deviation in pixels.
    pub sigma: f64,
    /// Phase in radians.
    pub phi: f64,
    /// Odd kernel side length.
    pub size: usize,
}

/// Single-level Haar analysis bands, each at ceil(H/2) x ceil(W/2).
pub struct WaveletBands<S: Scalar> {
    pub ll: FeatureMap<S>,
    pub lh: FeatureMap<S>,
    pub hl: FeatureMap<S>,
    pub hh: FeatureMap<S>,
    /// Original spatial size before even padding, needed for the inverse.
    pub orig: (usize, usize),
}

fn check_finite<S: Scalar>(x: &FeatureMap<S>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(validation(format!("{what}: non-finite input entries")));
    }
    Ok(())
}

/// Orthonormal DCT-II matrix: D[u, i] = alpha(u) cos(pi (2i+1) u / (2n)).
pub fn dct_matrix<S: Scalar>(n: usize) -> Array2<S> {
    let mut d = Array2::<S>::zeros((n, n));
    let nf = n as f64;
    for u in 0..n {
        let alpha = if u == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for i in 0..n {
            let v = alpha
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * u as f64 / (2.0 * nf)).cos();
            d[[u, i]] = S::from_f64(v);
        }
    }
    d
}

fn per_channel_2d<S: Scalar>(
    x: &FeatureMap<S>,
    left: &Array2<S>,
    right: &Array2<S>,
) -> FeatureMap<S> {
    let (n, c, h, w) = x.dim();
    let oh = left.shape()[0];
    let ow = right.shape()[1];
    let mut out = Array4::<S>::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            let plane = x.index_axis(Axis(0), ni);
            let plane = plane.index_axis(Axis(0), ci);
            let t = left.dot(&plane).dot(right);
            out.index_axis_mut(Axis(0), ni)
                .index_axis_mut(Axis(0), ci)
                .assign(&t);
        }
    }
    let _ = (h, w);
    out
}

/// Per-channel orthonormal type-II 2-D DCT.
pub fn dct2<S: Scalar>(x: &FeatureMap<S>) -> Result<FeatureMap<S>> {
    check_finite(x, "dct2")?;
    let (_, _, h, w) = x.dim();
    let dh = dct_matrix::<S>(h);
    let dw = dct_matrix::<S>(w);
    Ok(per_channel_2d(x, &dh, &dw.t().as_standard_layout().to_owned()))
}

/// Exact inverse of [`dct2`] up to floating-point rounding.
pub fn idct2<S: Scalar>(f: &FeatureMap<S>) -> Result<FeatureMap<S>> {
    check_finite(f, "idct2")?;
    let (_, _, h, w) = f.dim();
    let dh = dct_matrix::<S>(h);
    let dw = dct_matrix::<S>(w);
    Ok(per_channel_2d(
        f,
        &dh.t().as_standard_layout().to_owned(),
        &dw,
    ))
}

/// Normalized zig-zag radius used to carve DCT coefficients into bands.
pub fn band_radius(u: usize, v: usize, h: usize, w: usize) -> f64 {
    (u as f64 / h as f64 + v as f64 / w as f64) / 2.0
}

/// Binary masks for the low / mid / high coefficient bands.
pub fn band_masks<S: Scalar>(
    h: usize,
    w: usize,
    low_cut: f64,
    high_cut: f64,
) -> Result<[Array2<S>; 3]> {
    if !(low_cut > 0.0 && low_cut < high_cut && high_cut <= 1.0) {
        return Err(validation(format!(
            "band cuts must satisfy 0 < low ({low_cut}) < high ({high_cut}) <= 1"
        )));
    }
    let mut masks = [
        Array2::<S>::zeros((h, w)),
        Array2::<S>::zeros((h, w)),
        Array2::<S>::zeros((h, w)),
    ];
    for u in 0..h {
        for v in 0..w {
            let r = band_radius(u, v, h, w);
            let idx = if r < low_cut {
                0
            } else if r < high_cut {
                1
            } else {
                2
            };
            masks[idx][[u, v]] = S::one();
        }
    }
    Ok(masks)
}

/// Partitions DCT coefficients into (low, mid, high); the three parts sum
/// back to the input exactly because the masks are a disjoint cover.
pub fn band_split<S: Scalar>(
    f: &FeatureMap<S>,
    low_cut: f64,
    high_cut: f64,
) -> Result<(FeatureMap<S>, FeatureMap<S>, FeatureMap<S>)> {
    let (_, _, h, w) = f.dim();
    let masks = band_masks::<S>(h, w, low_cut, high_cut)?;
    let apply = |m: &Array2<S>| {
        let mut out = f.clone();
        let (n, c, _, _) = f.dim();
        for ni in 0..n {
            for ci in 0..c {
                let mut p = out.index_axis_mut(Axis(0), ni);
                let mut p = p.index_axis_mut(Axis(0), ci);
                p.zip_mut_with(m, |v, &mk| *v = *v * mk);
            }
        }
        out
    };
    Ok((apply(&masks[0]), apply(&masks[1]), apply(&masks[2])))
}

/// Reflects an odd-sized map to even dimensions by repeating the last row/col.
fn pad_even<S: Scalar>(x: &FeatureMap<S>) -> FeatureMap<S> {
    let (n, c, h, w) = x.dim();
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let mut out = Array4::<S>::zeros((n, c, ph, pw));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..ph {
                let si = i.min(h - 1);
                for j in 0..pw {
                    let sj = j.min(w - 1);
                    out[[ni, ci, i, j]] = x[[ni, ci, si, sj]];
                }
            }
        }
    }
    out
}

/// Orthonormal single-level Haar analysis per channel. Odd dimensions are
/// symmetric-padded to even before the transform.
pub fn dwt2_haar<S: Scalar>(x: &FeatureMap<S>) -> Result<WaveletBands<S>> {
    check_finite(x, "dwt2_haar")?;
    let (n, c, h0, w0) = x.dim();
    let xp = pad_even(x);
    let (_, _, h, w) = xp.dim();
    let (hh2, ww2) = (h / 2, w / 2);
    let mut ll = Array4::<S>::zeros((n, c, hh2, ww2));
    let mut lh = ll.clone();
    let mut hl = ll.clone();
    let mut hh = ll.clone();
    let half = S::from_f64(0.5);
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..hh2 {
                for j in 0..ww2 {
                    let a = xp[[ni, ci, 2 * i, 2 * j]];
                    let b = xp[[ni, ci, 2 * i, 2 * j + 1]];
                    let cc = xp[[ni, ci, 2 * i + 1, 2 * j]];
                    let d = xp[[ni, ci, 2 * i + 1, 2 * j + 1]];
                    ll[[ni, ci, i, j]] = (a + b + cc + d) * half;
                    // LH responds to horizontal edges (differences across rows)
                    lh[[ni, ci, i, j]] = (a + b - cc - d) * half;
                    hl[[ni, ci, i, j]] = (a - b + cc - d) * half;
                    hh[[ni, ci, i, j]] = (a - b - cc + d) * half;
                }
            }
        }
    }
    Ok(WaveletBands {
        ll,
        lh,
        hl,
        hh,
        orig: (h0, w0),
    })
}

/// Perfect-reconstruction inverse of [`dwt2_haar`], cropping any pad.
pub fn idwt2_haar<S: Scalar>(bands: &WaveletBands<S>) -> Result<FeatureMap<S>> {
    let (n, c, hh2, ww2) = bands.ll.dim();
    let (h0, w0) = bands.orig;
    let mut out = Array4::<S>::zeros((n, c, hh2 * 2, ww2 * 2));
    let half = S::from_f64(0.5);
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..hh2 {
                for j in 0..ww2 {
                    let ll = bands.ll[[ni, ci, i, j]];
                    let lh = bands.lh[[ni, ci, i, j]];
                    let hl = bands.hl[[ni, ci, i, j]];
                    let hh = bands.hh[[ni, ci, i, j]];
                    out[[ni, ci, 2 * i, 2 * j]] = (ll + lh + hl + hh) * half;
                    out[[ni, ci, 2 * i, 2 * j + 1]] = (ll + lh - hl - hh) * half;
                    out[[ni, ci, 2 * i + 1, 2 * j]] = (ll - lh + hl - hh) * half;
                    out[[ni, ci, 2 * i + 1, 2 * j + 1]] = (ll - lh - hl + hh) * half;
                }
            }
        }
    }
    Ok(out.slice(ndarray::s![.., .., ..h0, ..w0]).to_owned())
}

/// Real oriented bandpass kernel
/// `exp(-(i'^2 + gamma^2 j'^2)/(2 sigma^2)) cos(2 pi f i' + phi)` with
/// coordinates centered at the kernel midpoint.
pub fn gabor_kernel(p: &GaborParams) -> Result<Array2<f64>> {
    if p.size % 2 == 0 || p.size < 3 {
        return Err(validation(format!(
            "gabor kernel size must be odd and >= 3, got {}",
            p.size
        )));
    }
    if p.sigma <= 0.0 || p.f <= 0.0 {
        return Err(validation("gabor requires sigma > 0 and f > 0".to_string()));
    }
    let fix = crate::tape::GaborFixed {
        gamma: p.gamma,
        sigma: p.sigma,
        phi: p.phi,
        size: p.size,
    };
    Ok(crate::tape::gabor_kernel_plain(p.theta, p.f, &fix))
}

/// Row means `y_h` (N, C, H, 1) and column means `y_v` (N, C, 1, W).
pub fn strip_pool<S: Scalar>(x: &FeatureMap<S>) -> (FeatureMap<S>, FeatureMap<S>) {
    let (n, c, h, w) = x.dim();
    let yh = x
        .sum_axis(Axis(3))
        .mapv(|v| v / S::from_usize_(w))
        .into_shape_with_order((n, c, h, 1))
        .unwrap();
    let yv = x
        .sum_axis(Axis(2))
        .mapv(|v| v / S::from_usize_(h))
        .into_shape_with_order((n, c, 1, w))
        .unwrap();
    (yh, yv)
}

/// Gated spectral channel vector: per sample,
/// `c = sigmoid(W2 . relu(W1 . |DCT(gap)| + b1) + b2) .* DCT(gap)`
/// where `gap` is the spatial mean per channel and the DCT is the 1-D
/// orthonormal type-II transform across the channel axis. The absolute
/// value enters the gate path only; the modulated product keeps the sign.
pub fn freq_channel_attention<S: Scalar>(
    x: &FeatureMap<S>,
    w1: &Array2<S>,
    w2: &Array2<S>,
    b1: &Array1<S>,
    b2: &Array1<S>,
) -> Result<Array2<S>> {
    check_finite(x, "freq_channel_attention")?;
    let (n, c, _, _) = x.dim();
    if w1.shape()[1] != c || w2.shape()[0] != c || w2.shape()[1] != w1.shape()[0] {
        return Err(shape_err(format!(
            "fca weights incompatible with C={c}: W1 {:?}, W2 {:?}",
            w1.shape(),
            w2.shape()
        )));
    }
    let (_, _, gh, gw) = x.dim();
    let gap = x
        .sum_axis(Axis(3))
        .sum_axis(Axis(2))
        .mapv(|v| v / S::from_usize_(gh * gw)); // (N, C)
    let dct = dct_matrix::<S>(c);
    let mut out = Array2::<S>::zeros((n, c));
    for ni in 0..n {
        let v = dct.dot(&gap.row(ni)); // DCT across channels
        let hid = w1.dot(&v.mapv(|t| t.abs())) + b1;
        let hid = hid.mapv(|t| t.max(S::zero()));
        let gate = (w2.dot(&hid) + b2)
            .mapv(|t| S::one() / (S::one() + (-t).exp()));
        out.row_mut(ni).assign(&(&gate * &v));
    }
    Ok(out)
}
