//! Elementwise, reduction, shape and matrix primitives on the tape.

use super::{Graph, VarId};
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Ix2, Ix3, IxDyn};

/// Sums `g` down to `shape`, undoing numpy-style broadcasting.
pub(crate) fn reduce_to_shape<S: Scalar>(g: &ArrayD<S>, shape: &[usize]) -> ArrayD<S> {
    let mut out = g.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if out.shape()[ax] != shape[ax] {
            debug_assert_eq!(shape[ax], 1, "non-broadcastable reduction");
            let summed = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
            out = summed;
        }
    }
    out.as_standard_layout().to_owned()
}

fn broadcast_binary<S: Scalar>(
    a: &ArrayD<S>,
    b: &ArrayD<S>,
    f: impl Fn(S, S) -> S,
) -> ArrayD<S> {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        return out;
    }
    // Pad the smaller-rank operand with leading unit axes, then broadcast.
    let nd = a.ndim().max(b.ndim());
    let pad = |x: &ArrayD<S>| {
        let mut v = x.clone();
        while v.ndim() < nd {
            v = v.insert_axis(Axis(0));
        }
        v
    };
    let ap = pad(a);
    let bp = pad(b);
    let shape: Vec<usize> = ap
        .shape()
        .iter()
        .zip(bp.shape())
        .map(|(&x, &y)| x.max(y))
        .collect();
    let av = ap.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = bp.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    ndarray::Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

impl<S: Scalar> Graph<S> {
    // ---- binary elementwise (broadcasting) ----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x + y);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![reduce_to_shape(g, &sa), reduce_to_shape(g, &sb)]
            })),
        )
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x - y);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![reduce_to_shape(g, &sa), reduce_to_shape(&(-g.clone()), &sb)]
            })),
        )
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x * y);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.push(
            v,
            vec![a, b],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], _: &ArrayD<S>| {
                    let ga = broadcast_binary(g, inp[1], |x, y| x * y);
                    let gb = broadcast_binary(g, inp[0], |x, y| x * y);
                    vec![reduce_to_shape(&ga, &sa), reduce_to_shape(&gb, &sb)]
                },
            )),
        )
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x / y);
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.push(
            v,
            vec![a, b],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], out: &ArrayD<S>| {
                    let ga = broadcast_binary(g, inp[1], |x, y| x / y);
                    // d(a/b)/db = -out/b
                    let t = broadcast_binary(out, inp[1], |o, y| -o / y);
                    let gb = broadcast_binary(g, &t, |x, y| x * y);
                    vec![reduce_to_shape(&ga, &sa), reduce_to_shape(&gb, &sb)]
                },
            )),
        )
    }

    // ---- unary elementwise ----

    fn unary(
        &mut self,
        a: VarId,
        fv: impl Fn(S) -> S,
        // derivative as a function of (input, output)
        fd: impl Fn(S, S) -> S + 'static,
    ) -> VarId {
        let v = self.value(a).mapv(fv);
        self.push(
            v,
            vec![a],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], out: &ArrayD<S>| {
                    let mut gx = g.clone();
                    ndarray::Zip::from(&mut gx)
                        .and(inp[0])
                        .and(out)
                        .for_each(|gi, &x, &y| *gi = *gi * fd(x, y));
                    vec![gx]
                },
            )),
        )
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| -x, |_, _| -S::one())
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| S::one() / (S::one() + (-x).exp()),
            |_, y| y * (S::one() - y),
        )
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| {
                // numerically stable log(1+exp(x))
                if x > S::zero() {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| S::one() / (S::one() + (-x).exp()),
        )
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| x.ln(), |x, _| S::one() / x)
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| x.sqrt(),
            |_, y| S::one() / (S::from_f64(2.0) * y),
        )
    }

    pub fn square(&mut self, a: VarId) -> VarId {
        self.unary(a, |x| x * x, |x, _| S::from_f64(2.0) * x)
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        self.unary(
            a,
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn powf_const(&mut self, a: VarId, p: S) -> VarId {
        self.unary(a, move |x| x.powf(p), move |x, _| p * x.powf(p - S::one()))
    }

    pub fn scale(&mut self, a: VarId, c: S) -> VarId {
        self.unary(a, move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: VarId, c: S) -> VarId {
        self.unary(a, move |x| x + c, |_, _| S::one())
    }

    /// Clamp with straight-through gradient inside the active range.
    pub fn clamp(&mut self, a: VarId, lo: S, hi: S) -> VarId {
        self.unary(
            a,
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    /// Soft threshold `sign(z) * max(0, |z| - tau)` with `tau` a broadcastable var.
    pub fn soft_threshold(&mut self, z: VarId, tau: VarId) -> VarId {
        let v = broadcast_binary(self.value(z), self.value(tau), |x, t| {
            x.signum() * (x.abs() - t).max(S::zero())
        });
        let (sz, st) = (self.shape(z).to_vec(), self.shape(tau).to_vec());
        self.push(
            v,
            vec![z, tau],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], _: &ArrayD<S>| {
                    let active = broadcast_binary(inp[0], inp[1], |x, t| {
                        if x.abs() > t {
                            S::one()
                        } else {
                            S::zero()
                        }
                    });
                    let gz = broadcast_binary(g, &active, |x, a| x * a);
                    // d/dtau = -sign(z) on the active set
                    let dt = broadcast_binary(inp[0], inp[1], |x, t| {
                        if x.abs() > t {
                            -x.signum()
                        } else {
                            S::zero()
                        }
                    });
                    let gt = broadcast_binary(g, &dt, |x, d| x * d);
                    vec![reduce_to_shape(&gz, &sz), reduce_to_shape(&gt, &st)]
                },
            )),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = ndarray::arr0(self.value(a).sum()).into_dyn();
        let sa = self.shape(a).to_vec();
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                let gv = *g.iter().next().unwrap();
                vec![ArrayD::from_elem(IxDyn(&sa), gv)]
            })),
        )
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = S::from_usize_(self.value(a).len());
        let s = self.sum_all(a);
        self.scale(s, S::one() / n)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes_keep(&mut self, a: VarId, axes: &[usize]) -> VarId {
        let mut v = self.value(a).clone();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        for &ax in sorted.iter().rev() {
            v = v.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        let sa = self.shape(a).to_vec();
        self.push(
            v.as_standard_layout().to_owned(),
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                let gb = g.broadcast(IxDyn(&sa)).expect("broadcast grad").to_owned();
                vec![gb]
            })),
        )
    }

    pub fn mean_axes_keep(&mut self, a: VarId, axes: &[usize]) -> VarId {
        let n: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
        let s = self.sum_axes_keep(a, axes);
        self.scale(s, S::one() / S::from_usize_(n))
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let v = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape size mismatch");
        let sa = self.shape(a).to_vec();
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![g
                    .clone()
                    .into_shape_with_order(IxDyn(&sa))
                    .expect("reshape grad")]
            })),
        )
    }

    pub fn permute(&mut self, a: VarId, axes: &[usize]) -> VarId {
        let v = self
            .value(a)
            .clone()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inv = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inv[ax] = i;
        }
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![g
                    .clone()
                    .permuted_axes(IxDyn(&inv))
                    .as_standard_layout()
                    .to_owned()]
            })),
        )
    }

    pub fn concat(&mut self, axis: usize, parts: &[VarId]) -> VarId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        self.push(
            v,
            parts.to_vec(),
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0;
                for &sz in &sizes {
                    out.push(
                        g.slice_axis(Axis(axis), (start..start + sz).into())
                            .as_standard_layout()
                            .to_owned(),
                    );
                    start += sz;
                }
                out
            })),
        )
    }

    pub fn slice_axis_op(&mut self, a: VarId, axis: usize, start: usize, end: usize) -> VarId {
        let v = self
            .value(a)
            .slice_axis(Axis(axis), (start..end).into())
            .as_standard_layout()
            .to_owned();
        let sa = self.shape(a).to_vec();
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                let mut gx = ArrayD::zeros(IxDyn(&sa));
                gx.slice_axis_mut(Axis(axis), (start..end).into())
                    .assign(g);
                vec![gx]
            })),
        )
    }

    // ---- linear algebra ----

    /// `M . x` applied over the last two axes of `x`: out[..., i, w] = sum_h M[i,h] x[..., h, w].
    pub fn matmul_lconst(&mut self, m: ndarray::Array2<S>, x: VarId) -> VarId {
        let v = apply_lmat(&m, self.value(x));
        let mt = m.t().as_standard_layout().to_owned();
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![apply_lmat(&mt, g)]
            })),
        )
    }

    /// `x . M` over the last two axes: out[..., h, j] = sum_w x[..., h, w] M[w, j].
    pub fn matmul_rconst(&mut self, x: VarId, m: ndarray::Array2<S>) -> VarId {
        let v = apply_rmat(self.value(x), &m);
        let mt = m.t().as_standard_layout().to_owned();
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![apply_rmat(g, &mt)]
            })),
        )
    }

    /// Batched matmul of (B, M, K) with (B, K, N); `transpose_b` reads b as (B, N, K).
    pub fn bmm(&mut self, a: VarId, b: VarId, transpose_b: bool) -> VarId {
        let av = self.value(a).view().into_dimensionality::<Ix3>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix3>().unwrap();
        let batch = av.shape()[0];
        let m = av.shape()[1];
        let n = if transpose_b { bv.shape()[1] } else { bv.shape()[2] };
        let mut out = ndarray::Array3::<S>::zeros((batch, m, n));
        for i in 0..batch {
            let bm = bv.index_axis(Axis(0), i);
            let prod = if transpose_b {
                av.index_axis(Axis(0), i).dot(&bm.t())
            } else {
                av.index_axis(Axis(0), i).dot(&bm)
            };
            out.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.push(
            out.into_dyn(),
            vec![a, b],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], _: &ArrayD<S>| {
                    let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                    let av = inp[0].view().into_dimensionality::<Ix3>().unwrap();
                    let bv = inp[1].view().into_dimensionality::<Ix3>().unwrap();
                    let mut ga = ndarray::Array3::<S>::zeros(av.raw_dim());
                    let mut gb = ndarray::Array3::<S>::zeros(bv.raw_dim());
                    for i in 0..gv.shape()[0] {
                        let gi = gv.index_axis(Axis(0), i);
                        let ai = av.index_axis(Axis(0), i);
                        let bi = bv.index_axis(Axis(0), i);
                        if transpose_b {
                            // out = a . b^T  => ga = g . b ; gb = g^T . a
                            ga.index_axis_mut(Axis(0), i).assign(&gi.dot(&bi));
                            gb.index_axis_mut(Axis(0), i).assign(&gi.t().dot(&ai));
                        } else {
                            ga.index_axis_mut(Axis(0), i).assign(&gi.dot(&bi.t()));
                            gb.index_axis_mut(Axis(0), i).assign(&ai.t().dot(&gi));
                        }
                    }
                    vec![ga.into_dyn(), gb.into_dyn()]
                },
            )),
        )
    }

    /// Dense `a . b` for 2-D vars.
    pub fn matmul2(&mut self, a: VarId, b: VarId) -> VarId {
        let av = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
        let v = av.dot(&bv).into_dyn();
        self.push(
            v,
            vec![a, b],
            Some(Box::new(
                move |g: &ArrayD<S>, inp: &[&ArrayD<S>], _: &ArrayD<S>| {
                    let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                    let av = inp[0].view().into_dimensionality::<Ix2>().unwrap();
                    let bv = inp[1].view().into_dimensionality::<Ix2>().unwrap();
                    vec![gv.dot(&bv.t()).into_dyn(), av.t().dot(&gv).into_dyn()]
                },
            )),
        )
    }

    /// Broadcasts to `shape` (numpy rules); backward sums back down.
    pub fn broadcast_to(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let mut v = self.value(a).clone();
        while v.ndim() < shape.len() {
            v = v.insert_axis(Axis(0));
        }
        let out = v.broadcast(IxDyn(shape)).expect("broadcast_to").to_owned();
        let sa = self.shape(a).to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                vec![reduce_to_shape(g, &sa)]
            })),
        )
    }

    /// Reflection padding (edge not repeated) of the two trailing spatial axes.
    pub fn pad_reflect2d(&mut self, a: VarId, pad: usize) -> VarId {
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        let (h, w) = (shape[nd - 2], shape[nd - 1]);
        assert!(pad < h && pad < w, "reflect pad larger than input");
        let reflect = |n: usize| -> Vec<usize> {
            (0..n + 2 * pad)
                .map(|i| {
                    let s = i as isize - pad as isize;
                    let s = if s < 0 { -s } else { s };
                    let s = s as usize;
                    if s >= n {
                        2 * (n - 1) - s
                    } else {
                        s
                    }
                })
                .collect()
        };
        let rows = reflect(h);
        let cols = reflect(w);
        let outer: usize = shape[..nd - 2].iter().product();
        let x3 = self
            .value(a)
            .view()
            .into_shape_with_order((outer, h, w))
            .unwrap()
            .to_owned();
        let mut out = ndarray::Array3::<S>::zeros((outer, h + 2 * pad, w + 2 * pad));
        for o in 0..outer {
            for (i, &si) in rows.iter().enumerate() {
                for (j, &sj) in cols.iter().enumerate() {
                    out[[o, i, j]] = x3[[o, si, sj]];
                }
            }
        }
        let mut oshape = shape.clone();
        oshape[nd - 2] = h + 2 * pad;
        oshape[nd - 1] = w + 2 * pad;
        let out = out.into_shape_with_order(IxDyn(&oshape)).unwrap();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g: &ArrayD<S>, _: &[&ArrayD<S>], _: &ArrayD<S>| {
                let g3 = g
                    .view()
                    .into_shape_with_order((outer, h + 2 * pad, w + 2 * pad))
                    .unwrap();
                let mut gx = ndarray::Array3::<S>::zeros((outer, h, w));
                for o in 0..outer {
                    for (i, &si) in rows.iter().enumerate() {
                        for (j, &sj) in cols.iter().enumerate() {
                            gx[[o, si, sj]] += g3[[o, i, j]];
                        }
                    }
                }
                vec![gx.into_shape_with_order(IxDyn(&shape)).unwrap()]
            })),
        )
    }

    /// Softmax along `axis`, computed with max subtraction for stability.
    pub fn softmax_axis(&mut self, a: VarId, axis: usize) -> VarId {
        let x = self.value(a);
        let maxes = x.map_axis(Axis(axis), |lane| {
            lane.iter().cloned().fold(S::neg_infinity(), S::max)
        });
        let maxes = maxes.insert_axis(Axis(axis));
        let mut e = x.clone();
        ndarray::Zip::from(&mut e)
            .and_broadcast(&maxes)
            .for_each(|v, &m| *v = (*v - m).exp());
        let denom = e.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        ndarray::Zip::from(&mut e)
            .and_broadcast(&denom)
            .for_each(|v, &d| *v = *v / d);
        self.push(
            e,
            vec![a],
            Some(Box::new(
                move |g: &ArrayD<S>, _: &[&ArrayD<S>], out: &ArrayD<S>| {
                    // dx = y * (g - sum(g*y, axis))
                    let gy = g * out;
                    let s = gy.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                    let mut gx = g.clone();
                    ndarray::Zip::from(&mut gx)
                        .and(out)
                        .and_broadcast(&s)
                        .for_each(|gi, &y, &si| *gi = y * (*gi - si));
                    vec![gx]
                },
            )),
        )
    }
}

/// out[..., i, w] = sum_h M[i, h] x[..., h, w]
fn apply_lmat<S: Scalar>(m: &ndarray::Array2<S>, x: &ArrayD<S>) -> ArrayD<S> {
    let nd = x.ndim();
    debug_assert!(nd >= 2);
    let h = x.shape()[nd - 2];
    let w = x.shape()[nd - 1];
    let outer: usize = x.shape()[..nd - 2].iter().product();
    let x3 = x
        .view()
        .into_shape_with_order((outer, h, w))
        .expect("lmat reshape");
    let mut out = ndarray::Array3::<S>::zeros((outer, m.shape()[0], w));
    for i in 0..outer {
        out.index_axis_mut(Axis(0), i)
            .assign(&m.dot(&x3.index_axis(Axis(0), i)));
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = m.shape()[0];
    out.into_shape_with_order(IxDyn(&shape)).unwrap()
}

/// out[..., h, j] = sum_w x[..., h, w] M[w, j]
fn apply_rmat<S: Scalar>(x: &ArrayD<S>, m: &ndarray::Array2<S>) -> ArrayD<S> {
    let nd = x.ndim();
    debug_assert!(nd >= 2);
    let h = x.shape()[nd - 2];
    let w = x.shape()[nd - 1];
    let outer: usize = x.shape()[..nd - 2].iter().product();
    let x3 = x
        .view()
        .into_shape_with_order((outer, h, w))
        .expect("rmat reshape");
    let mut out = ndarray::Array3::<S>::zeros((outer, h, m.shape()[1]));
    for i in 0..outer {
        out.index_axis_mut(Axis(0), i)
            .assign(&x3.index_axis(Axis(0), i).dot(m));
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 1] = m.shape()[1];
    out.into_shape_with_order(IxDyn(&shape)).unwrap()
}
