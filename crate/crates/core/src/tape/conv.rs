//! Convolution, sampling and resampling primitives on the tape.

use super::{Graph, GradFn, VarId};
use crate::scalar::Scalar;
use ndarray::{Array2, Array4, ArrayD, Ix1, Ix4};

pub(crate) fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfolds `x` (N, C, H, W) into (C*kh*kw, N*Ho*Wo) with zero padding.
pub(crate) fn im2col<S: Scalar>(
    x: &Array4<S>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<S> {
    let (n, c, h, w) = x.dim();
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut col = Array2::<S>::zeros((c * kh * kw, n * ho * wo));
    let xstd = x.as_standard_layout();
    let xs = xstd.as_slice().unwrap();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = col.row_mut(row).into_slice().unwrap();
                // valid output columns: 0 <= oj*stride + kj - pad < w
                let oj_lo = pad.saturating_sub(kj).div_ceil(stride).min(wo);
                let oj_hi = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(wo)
                } else {
                    0
                };
                for ni in 0..n {
                    for oi in 0..ho {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src_row = ((ni * c + ci) * h + ii as usize) * w;
                        let base = (ni * ho + oi) * wo;
                        if stride == 1 {
                            if oj_hi > oj_lo {
                                let jj = oj_lo + kj - pad;
                                dst[base + oj_lo..base + oj_hi]
                                    .copy_from_slice(&xs[src_row + jj..src_row + jj + oj_hi - oj_lo]);
                            }
                        } else {
                            for oj in oj_lo..oj_hi {
                                let jj = oj * stride + kj - pad;
                                dst[base + oj] = xs[src_row + jj];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds a column matrix back onto the input grid.
pub(crate) fn col2im<S: Scalar>(
    col: &Array2<S>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut x = Array4::<S>::zeros((n, c, h, w));
    let xs = x.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = col.row(row);
                let src = src.as_slice().unwrap();
                let oj_lo = pad.saturating_sub(kj).div_ceil(stride).min(wo);
                let oj_hi = if w + pad > kj {
                    ((w + pad - kj - 1) / stride + 1).min(wo)
                } else {
                    0
                };
                for ni in 0..n {
                    for oi in 0..ho {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let dst_row = ((ni * c + ci) * h + ii as usize) * w;
                        let base = (ni * ho + oi) * wo;
                        if stride == 1 {
                            if oj_hi > oj_lo {
                                let jj = oj_lo + kj - pad;
                                let dst = &mut xs[dst_row + jj..dst_row + jj + oj_hi - oj_lo];
                                for (d, s) in dst.iter_mut().zip(&src[base + oj_lo..base + oj_hi]) {
                                    *d += *s;
                                }
                            }
                        } else {
                            for oj in oj_lo..oj_hi {
                                let jj = oj * stride + kj - pad;
                                xs[dst_row + jj] += src[base + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Plain dense 2-D convolution (cross-correlation), zero padded.
pub fn conv2d_forward<S: Scalar>(
    x: &Array4<S>,
    w: &Array4<S>,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let (n, _c, h, wd) = x.dim();
    let (co, ci, kh, kw) = w.dim();
    debug_assert_eq!(ci, x.dim().1, "conv2d channel mismatch");
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(wd, kw, stride, pad);
    let col = im2col(x, kh, kw, stride, pad);
    let wf = w
        .view()
        .into_shape_with_order((co, ci * kh * kw))
        .unwrap();
    let y = wf.dot(&col); // (co, n*ho*wo)
    let y = y
        .into_shape_with_order((co, n, ho, wo))
        .unwrap()
        .permuted_axes([1, 0, 2, 3]);
    y.as_standard_layout().to_owned()
}

struct Conv2dGrad {
    stride: usize,
    pad: usize,
}

impl<S: Scalar> GradFn<S> for Conv2dGrad {
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        inputs: &[&ArrayD<S>],
        _output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let w = inputs[1].view().into_dimensionality::<Ix4>().unwrap();
        let gy = grad_out.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, wd) = x.dim();
        let (co, ci, kh, kw) = w.dim();
        let (_, _, ho, wo) = gy.dim();
        let gy_flat = gy
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_shape_with_order((co, n * ho * wo))
            .unwrap()
            .to_owned();
        // im2col is recomputed instead of cached; memory beats time here.
        let col = im2col(&x.to_owned(), kh, kw, self.stride, self.pad);
        let gw = gy_flat
            .dot(&col.t())
            .into_shape_with_order((co, ci, kh, kw))
            .unwrap();
        let wf = w.into_shape_with_order((co, ci * kh * kw)).unwrap();
        let gcol = wf.t().dot(&gy_flat);
        let gx = col2im(&gcol, n, c, h, wd, kh, kw, self.stride, self.pad);
        vec![gx.into_dyn(), gw.into_dyn()]
    }
}

/// Bilinear sampling weights for a fractional coordinate with border clamp.
#[inline]
fn bilin_coords(p: f64, len: usize) -> (usize, usize, f64) {
    let p0 = p.floor();
    let frac = p - p0;
    let clamp = |v: f64| -> usize { v.max(0.0).min((len - 1) as f64) as usize };
    (clamp(p0), clamp(p0 + 1.0), frac)
}

struct DeformConv2dGrad;

/// Per-axis sampling plan for one deformable tap: clamped neighbour indices
/// and the interpolation fraction at every output position.
fn tap_axis(len: usize, kpos: usize, pad: usize, d: f64) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|i| bilin_coords(i as f64 + kpos as f64 - pad as f64 + d, len))
        .collect()
}

/// Samples the per-tap shifted input into a column matrix (C*K, N*H*W).
fn deform_col<S: Scalar>(x: &Array4<S>, offsets: &ndarray::ArrayView2<f64>, k: usize) -> Array2<S> {
    let (n, c, h, w) = x.dim();
    let taps = k * k;
    let pad = (k - 1) / 2;
    let xstd = x.as_standard_layout();
    let xs = xstd.as_slice().unwrap();
    let mut col = Array2::<S>::zeros((c * taps, n * h * w));
    for t in 0..taps {
        let (ki, kj) = (t / k, t % k);
        let rows = tap_axis(h, ki, pad, offsets[[t, 0]]);
        let cols = tap_axis(w, kj, pad, offsets[[t, 1]]);
        for ci in 0..c {
            let dst = col.row_mut(ci * taps + t).into_slice().unwrap();
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                for (i, &(y0, y1, ay)) in rows.iter().enumerate() {
                    let r0 = &xs[plane + y0 * w..plane + y0 * w + w];
                    let r1 = &xs[plane + y1 * w..plane + y1 * w + w];
                    let out = &mut dst[(ni * h + i) * w..(ni * h + i) * w + w];
                    for (o, &(x0, x1, ax)) in out.iter_mut().zip(&cols) {
                        let top = (1.0 - ax) * r0[x0].to_f64_() + ax * r0[x1].to_f64_();
                        let bot = (1.0 - ax) * r1[x0].to_f64_() + ax * r1[x1].to_f64_();
                        *o = S::from_f64((1.0 - ay) * top + ay * bot);
                    }
                }
            }
        }
    }
    col
}

impl<S: Scalar> GradFn<S> for DeformConv2dGrad {
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        inputs: &[&ArrayD<S>],
        _output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>> {
        let x = inputs[0].view().into_dimensionality::<Ix4>().unwrap();
        let w = inputs[1].view().into_dimensionality::<Ix4>().unwrap();
        let off = inputs[2].mapv(|v| v.to_f64_());
        let off = off.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let gy = grad_out.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, wd) = x.dim();
        let (co, ci, k, _) = w.dim();
        let taps = k * k;
        let pad = (k - 1) / 2;

        let gy_flat = gy
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_shape_with_order((co, n * h * wd))
            .unwrap()
            .to_owned();
        let xo = x.to_owned();
        let col = deform_col(&xo, &off, k);
        let gw = gy_flat
            .dot(&col.t())
            .into_shape_with_order((co, ci, k, k))
            .unwrap();
        let wf = w.into_shape_with_order((co, ci * taps)).unwrap();
        let gcol = wf.t().dot(&gy_flat); // (ci*taps, n*h*w)

        let xo2 = x.as_standard_layout();
        let xs = xo2.as_slice().unwrap();
        let mut gx = Array4::<S>::zeros((n, c, h, wd));
        let gxs = gx.as_slice_mut().unwrap();
        let mut goff = ndarray::Array2::<f64>::zeros((taps, 2));
        for t in 0..taps {
            let (ki, kj) = (t / k, t % k);
            let rows = tap_axis(h, ki, pad, off[[t, 0]]);
            let cols = tap_axis(wd, kj, pad, off[[t, 1]]);
            for cix in 0..c {
                let grow = gcol.row(cix * taps + t);
                let grow = grow.as_slice().unwrap();
                for ni in 0..n {
                    let plane = ((ni * c + cix) * h) * wd;
                    for (i, &(y0, y1, ay)) in rows.iter().enumerate() {
                        let gr = &grow[(ni * h + i) * wd..(ni * h + i) * wd + wd];
                        for (j, &(x0, x1, ax)) in cols.iter().enumerate() {
                            let g = gr[j].to_f64_();
                            if g == 0.0 {
                                continue;
                            }
                            let r0 = plane + y0 * wd;
                            let r1 = plane + y1 * wd;
                            gxs[r0 + x0] += S::from_f64(g * (1.0 - ay) * (1.0 - ax));
                            gxs[r0 + x1] += S::from_f64(g * (1.0 - ay) * ax);
                            gxs[r1 + x0] += S::from_f64(g * ay * (1.0 - ax));
                            gxs[r1 + x1] += S::from_f64(g * ay * ax);
                            let v00 = xs[r0 + x0].to_f64_();
                            let v01 = xs[r0 + x1].to_f64_();
                            let v10 = xs[r1 + x0].to_f64_();
                            let v11 = xs[r1 + x1].to_f64_();
                            // derivative of the bilinear sample wrt the offset
                            let dvy = (1.0 - ax) * (v10 - v00) + ax * (v11 - v01);
                            let dvx = (1.0 - ay) * (v01 - v00) + ay * (v11 - v10);
                            goff[[t, 0]] += g * dvy;
                            goff[[t, 1]] += g * dvx;
                        }
                    }
                }
            }
        }
        vec![
            gx.into_dyn(),
            gw.into_dyn(),
            goff.mapv(S::from_f64).into_dyn(),
        ]
    }
}

struct BilinearResizeGrad {
    ih: usize,
    iw: usize,
}

/// Half-pixel source coordinate for a destination index at the given scale.
fn resize_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let p = ((d as f64 + 0.5) * scale - 0.5).max(0.0).min((src - 1) as f64);
            bilin_coords(p, src)
        })
        .collect()
}

fn bilinear_resize_forward<S: Scalar>(x: &Array4<S>, oh: usize, ow: usize) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    let rows = resize_axis(h, oh);
    let cols = resize_axis(w, ow);
    let mut out = Array4::<S>::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for (oi, &(y0, y1, ay)) in rows.iter().enumerate() {
                for (oj, &(x0, x1, ax)) in cols.iter().enumerate() {
                    let v00 = x[[ni, ci, y0, x0]].to_f64_();
                    let v01 = x[[ni, ci, y0, x1]].to_f64_();
                    let v10 = x[[ni, ci, y1, x0]].to_f64_();
                    let v11 = x[[ni, ci, y1, x1]].to_f64_();
                    let v = (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01)
                        + ay * ((1.0 - ax) * v10 + ax * v11);
                    out[[ni, ci, oi, oj]] = S::from_f64(v);
                }
            }
        }
    }
    out
}

impl<S: Scalar> GradFn<S> for BilinearResizeGrad {
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        _inputs: &[&ArrayD<S>],
        _output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>> {
        let gy = grad_out.view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, oh, ow) = gy.dim();
        let rows = resize_axis(self.ih, oh);
        let cols = resize_axis(self.iw, ow);
        let mut gx = Array4::<S>::zeros((n, c, self.ih, self.iw));
        for ni in 0..n {
            for ci in 0..c {
                for (oi, &(y0, y1, ay)) in rows.iter().enumerate() {
                    for (oj, &(x0, x1, ax)) in cols.iter().enumerate() {
                        let g = gy[[ni, ci, oi, oj]].to_f64_();
                        gx[[ni, ci, y0, x0]] += S::from_f64(g * (1.0 - ay) * (1.0 - ax));
                        gx[[ni, ci, y0, x1]] += S::from_f64(g * (1.0 - ay) * ax);
                        gx[[ni, ci, y1, x0]] += S::from_f64(g * ay * (1.0 - ax));
                        gx[[ni, ci, y1, x1]] += S::from_f64(g * ay * ax);
                    }
                }
            }
        }
        vec![gx.into_dyn()]
    }
}

/// Gabor bank parameters that are not learnable.
#[derive(Clone, Copy, Debug)]
pub struct GaborFixed {
    pub gamma: f64,
    pub sigma: f64,
    pub phi: f64,
    pub size: usize,
}

/// Evaluates one Gabor kernel plus its partials in theta and frequency.
fn gabor_eval(theta: f64, f: f64, fix: &GaborFixed) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let sz = fix.size;
    let half = (sz / 2) as f64;
    let mut k = Array2::<f64>::zeros((sz, sz));
    let mut dth = Array2::<f64>::zeros((sz, sz));
    let mut dfr = Array2::<f64>::zeros((sz, sz));
    let (st, ct) = theta.sin_cos();
    for r in 0..sz {
        let i = r as f64 - half;
        for cidx in 0..sz {
            let j = cidx as f64 - half;
            let ip = i * ct + j * st;
            let jp = -i * st + j * ct;
            let env = (-(ip * ip + fix.gamma * fix.gamma * jp * jp)
                / (2.0 * fix.sigma * fix.sigma))
                .exp();
            let arg = 2.0 * std::f64::consts::PI * f * ip + fix.phi;
            k[[r, cidx]] = env * arg.cos();
            // d(ip)/dtheta = jp ; d(jp)/dtheta = -ip
            let denv_dth = env * (-(ip * jp + fix.gamma * fix.gamma * jp * (-ip))
                / (fix.sigma * fix.sigma));
            dth[[r, cidx]] = denv_dth * arg.cos()
                - env * arg.sin() * 2.0 * std::f64::consts::PI * f * jp;
            dfr[[r, cidx]] = -env * arg.sin() * 2.0 * std::f64::consts::PI * ip;
        }
    }
    (k, dth, dfr)
}

struct GaborBankGrad {
    fix: GaborFixed,
}

impl<S: Scalar> GradFn<S> for GaborBankGrad {
    fn backward(
        &self,
        grad_out: &ArrayD<S>,
        inputs: &[&ArrayD<S>],
        _output: &ArrayD<S>,
    ) -> Vec<ArrayD<S>> {
        let theta = inputs[0].view().into_dimensionality::<Ix1>().unwrap();
        let freq = inputs[1].view().into_dimensionality::<Ix1>().unwrap();
        let g = grad_out.mapv(|v| v.to_f64_());
        let g_sum = g.sum();
        let npix = (self.fix.size * self.fix.size) as f64;
        let mut gth = ndarray::Array1::<f64>::zeros(theta.len());
        let mut gfr = ndarray::Array1::<f64>::zeros(freq.len());
        for t in 0..theta.len() {
            let (_, dth, dfr) = gabor_eval(theta[t].to_f64_(), freq[t].to_f64_(), &self.fix);
            // output is mean-subtracted per kernel, so project the partials too
            let dth_dot = (&g * &dth.clone().into_dyn()).sum() - g_sum * dth.mean().unwrap();
            let dfr_dot = (&g * &dfr.clone().into_dyn()).sum() - g_sum * dfr.mean().unwrap();
            let _ = npix;
            gth[t] = dth_dot;
            gfr[t] = dfr_dot;
        }
        vec![
            gth.mapv(S::from_f64).into_dyn(),
            gfr.mapv(S::from_f64).into_dyn(),
        ]
    }
}

impl<S: Scalar> Graph<S> {
    /// Dense 2-D convolution of (N, Ci, H, W) with (Co, Ci, kh, kw).
    pub fn conv2d(&mut self, x: VarId, w: VarId, stride: usize, pad: usize) -> VarId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d input rank")
            .to_owned();
        let wv = self
            .value(w)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d weight rank")
            .to_owned();
        let y = conv2d_forward(&xv, &wv, stride, pad);
        self.push(
            y.into_dyn(),
            vec![x, w],
            Some(Box::new(Conv2dGrad { stride, pad })),
        )
    }

    /// Conv + per-output-channel bias.
    pub fn conv2d_bias(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let y = self.conv2d(x, w, stride, pad);
        let co = self.shape(b)[0];
        let b4 = self.reshape(b, &[1, co, 1, 1]);
        self.add(y, b4)
    }

    /// Deformable 3x3-style convolution with one learnable fractional offset per tap.
    /// `offsets` has shape (k*k, 2) in (dy, dx) order; samples clamp at the border.
    pub fn deform_conv2d(&mut self, x: VarId, w: VarId, offsets: VarId) -> VarId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let wv = self.value(w).view().into_dimensionality::<Ix4>().unwrap();
        let (co, ci, k, _) = wv.dim();
        let off = self.value(offsets).mapv(|v| v.to_f64_());
        let off2 = off.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let (n, _c, h, wd) = xv.dim();
        let col = deform_col(&xv, &off2, k);
        let wf = self
            .value(w)
            .view()
            .into_shape_with_order((co, ci * k * k))
            .unwrap()
            .to_owned();
        let y = wf
            .dot(&col)
            .into_shape_with_order((co, n, h, wd))
            .unwrap()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        self.push(y.into_dyn(), vec![x, w, offsets], Some(Box::new(DeformConv2dGrad)))
    }

    /// Bilinear resize to (oh, ow) with half-pixel centers.
    pub fn bilinear_resize(&mut self, x: VarId, oh: usize, ow: usize) -> VarId {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let (_, _, ih, iw) = xv.dim();
        if (ih, iw) == (oh, ow) {
            // identity resize still has to be a node so callers can treat it uniformly
            return self.scale(x, S::one());
        }
        let y = bilinear_resize_forward(&xv, oh, ow);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(BilinearResizeGrad { ih, iw })),
        )
    }

    /// 2x2 average pooling, stride 2; requires even spatial dims.
    pub fn avg_pool2(&mut self, x: VarId) -> VarId {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = xv.dim();
        debug_assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let quarter = S::from_f64(0.25);
        let mut y = Array4::<S>::zeros((n, c, h / 2, w / 2));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h / 2 {
                    for j in 0..w / 2 {
                        y[[ni, ci, i, j]] = (xv[[ni, ci, 2 * i, 2 * j]]
                            + xv[[ni, ci, 2 * i, 2 * j + 1]]
                            + xv[[ni, ci, 2 * i + 1, 2 * j]]
                            + xv[[ni, ci, 2 * i + 1, 2 * j + 1]])
                            * quarter;
                    }
                }
            }
        }
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(
                move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                    let gv = g.view().into_dimensionality::<Ix4>().unwrap();
                    let (n, c, ho, wo) = gv.dim();
                    let q = S::from_f64(0.25);
                    let mut gx = Array4::<S>::zeros((n, c, ho * 2, wo * 2));
                    for ni in 0..n {
                        for ci in 0..c {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let gq = gv[[ni, ci, i, j]] * q;
                                    gx[[ni, ci, 2 * i, 2 * j]] = gq;
                                    gx[[ni, ci, 2 * i, 2 * j + 1]] = gq;
                                    gx[[ni, ci, 2 * i + 1, 2 * j]] = gq;
                                    gx[[ni, ci, 2 * i + 1, 2 * j + 1]] = gq;
                                }
                            }
                        }
                    }
                    vec![gx.into_dyn()]
                },
            )),
        )
    }

    /// Sum of mean-subtracted Gabor kernels over a bank of learnable
    /// orientations and frequencies; output shape (size, size).
    pub fn gabor_bank_kernel(&mut self, theta: VarId, freq: VarId, fix: GaborFixed) -> VarId {
        let th = self.value(theta).mapv(|v| v.to_f64_());
        let fr = self.value(freq).mapv(|v| v.to_f64_());
        let mut acc = Array2::<f64>::zeros((fix.size, fix.size));
        for t in 0..th.len() {
            let (k, _, _) = gabor_eval(th[[t]], fr[[t]], &fix);
            let m = k.mean().unwrap();
            acc += &(k - m);
        }
        self.push(
            acc.mapv(S::from_f64).into_dyn(),
            vec![theta, freq],
            Some(Box::new(GaborBankGrad { fix })),
        )
    }

    /// Depthwise convolution of every channel with one shared 2-D kernel.
    pub fn depthwise_shared_conv(&mut self, x: VarId, kernel: VarId) -> VarId {
        let shape = self.shape(x).to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let ksz = self.shape(kernel)[0];
        let pad = (ksz - 1) / 2;
        let xr = self.reshape(x, &[n * c, 1, h, w]);
        let kr = self.reshape(kernel, &[1, 1, ksz, ksz]);
        let y = self.conv2d(xr, kr, 1, pad);
        self.reshape(y, &[n, c, h, w])
    }
}

/// Non-tape bilinear resize used by data plumbing.
pub fn resize_bilinear_plain<S: Scalar>(x: &Array4<S>, oh: usize, ow: usize) -> Array4<S> {
    bilinear_resize_forward(x, oh, ow)
}

/// Public pure evaluation of one Gabor kernel (no mean subtraction).
pub fn gabor_kernel_plain(theta: f64, f: f64, fix: &GaborFixed) -> Array2<f64> {
    gabor_eval(theta, f, fix).0
}

