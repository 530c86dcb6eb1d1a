//! Branch interactive attention fusion: parallel enhancement of the three
//! disentangled streams, SE-style fusion across their concatenation, and a
//! softmax-gated interactive recombination back to C channels.

use crate::ddfd::DisentangledFeatures;
use crate::error::{shape_err, validation, Result};
use crate::layers::Conv2d;
use crate::params::{full, kaiming_uniform, zeros, Forward, ParamStore};
use crate::scalar::Scalar;
use crate::spectral::band_masks;
use crate::tape::VarId;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Add,
    Mul,
}

impl Default for FusionMode {
    fn default() -> Self {
        FusionMode::Add
    }
}

impl std::str::FromStr for FusionMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(FusionMode::Add),
            "mul" => Ok(FusionMode::Mul),
            other => Err(validation(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiafConfig {
    pub channels: usize,
    /// Dynamic-convolution kernel count.
    pub kernels: usize,
    pub fusion_mode: FusionMode,
    pub low_cut: f64,
    pub high_cut: f64,
    /// Spatial token budget of the spectral attention; larger inputs are
    /// pooled down to at most this many positions before attending.
    pub attn_token_cap: usize,
}

/// Exponential factor of the running variance estimate kept for eval mode.
const VAR_MOMENTUM: f64 = 0.9;
const VAR_EPS: f64 = 1e-5;
const MAG_EPS: f64 = 1e-12;
/// softplus(x) = 0.1 at this raw value.
const TAU_RAW_INIT: f64 = -2.252_168_459_830_297_4;

pub struct Biaf {
    pub name: String,
    pub cfg: BiafConfig,
    q_proj: Conv2d,
    k_proj: Conv2d,
    v_proj: Conv2d,
    cfc_mix: Conv2d,
    dyn_convs: Vec<Conv2d>,
    deform_a: Conv2d,
    deform_b: Conv2d,
}

impl Biaf {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        cfg: BiafConfig,
    ) -> Self {
        assert!(cfg.kernels >= 1, "need at least one dynamic kernel");
        let name = name.into();
        let c = cfg.channels;
        let q_proj = Conv2d::register(store, rng, format!("{name}.attn.q"), c, c, 1, 1, 0);
        let k_proj = Conv2d::register(store, rng, format!("{name}.attn.k"), c, c, 1, 1, 0);
        let v_proj = Conv2d::register(store, rng, format!("{name}.attn.v"), c, c, 1, 1, 0);
        let cfc_mix = Conv2d::register(store, rng, format!("{name}.attn.cfc"), 3 * c, c, 1, 1, 0);
        let mut dyn_convs = Vec::with_capacity(cfg.kernels);
        for k in 0..cfg.kernels {
            dyn_convs.push(Conv2d::register(
                store,
                rng,
                format!("{name}.dyn.w{k}"),
                c,
                c,
                3,
                1,
                1,
            ));
            store.insert(
                format!("{name}.dyn.gate{k}"),
                kaiming_uniform(&[c, c], c, rng),
            );
        }
        let deform_a = Conv2d::register(store, rng, format!("{name}.deform.a"), c, c, 3, 1, 1);
        let deform_b = Conv2d::register(store, rng, format!("{name}.deform.b"), c, c, 3, 1, 1);
        store.insert(format!("{name}.deform.a.offsets"), zeros(&[9, 2]));
        store.insert(format!("{name}.deform.b.offsets"), zeros(&[9, 2]));
        store.insert(format!("{name}.deform.tau_raw"), full(&[c], TAU_RAW_INIT));
        let fuse_hidden = (3 * c / 4).max(1);
        store.insert(
            format!("{name}.fuse.w1"),
            kaiming_uniform(&[fuse_hidden, 3 * c], 3 * c, rng),
        );
        store.insert(
            format!("{name}.fuse.w2"),
            kaiming_uniform(&[3 * c, fuse_hidden], fuse_hidden, rng),
        );
        for i in 0..3 {
            store.insert(
                format!("{name}.gate.b{i}"),
                kaiming_uniform(&[c, 3 * c], 3 * c, rng),
            );
        }
        Biaf {
            name,
            cfg,
            q_proj,
            k_proj,
            v_proj,
            cfc_mix,
            dyn_convs,
            deform_a,
            deform_b,
        }
    }

    /// Spectral self-attention with cross-band mixing of the attended output.
    pub fn global_attention<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> Result<VarId> {
        let shape = f.g.shape(x).to_vec();
        let (n, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
        if c == 0 {
            return Err(validation("attention requires d_k > 0"));
        }
        // Pool to the token budget; attention cost is quadratic in H*W.
        let (h, w) = if hh * ww > self.cfg.attn_token_cap {
            let side = (self.cfg.attn_token_cap as f64).sqrt().floor() as usize;
            (side.min(hh), side.min(ww))
        } else {
            (hh, ww)
        };
        let xp = if (h, w) == (hh, ww) {
            x
        } else {
            f.g.bilinear_resize(x, h, w)
        };
        let q = self.q_proj.forward(f, xp);
        let k = self.k_proj.forward(f, xp);
        let v = self.v_proj.forward(f, xp);

        let (fr_h, fi_h) = dft_matrices::<S>(h);
        let (fr_w, fi_w) = dft_matrices::<S>(w);
        let l = h * w;
        let dft2 = |f: &mut Forward<S>, t: VarId| -> (VarId, VarId) {
            let a = f.g.matmul_lconst(fr_h.clone(), t);
            let b = f.g.matmul_lconst(fi_h.clone(), t);
            let ar = f.g.matmul_rconst(a, fr_w.clone());
            let ai = f.g.matmul_rconst(a, fi_w.clone());
            let br = f.g.matmul_rconst(b, fr_w.clone());
            let bi = f.g.matmul_rconst(b, fi_w.clone());
            let re = f.g.sub(ar, bi);
            let im = f.g.add(ai, br);
            (re, im)
        };
        let (qr, qi) = dft2(f, q);
        let (kr, ki) = dft2(f, k);
        let tokens = |f: &mut Forward<S>, t: VarId| {
            let t = f.g.reshape(t, &[n, c, l]);
            f.g.permute(t, &[0, 2, 1]) // (N, L, C)
        };
        let (qr, qi) = (tokens(f, qr), tokens(f, qi));
        let (kr, ki) = (tokens(f, kr), tokens(f, ki));
        // complex product scores P[l,m] = sum_c FQ[l,c] * FK[m,c]
        let rr = f.g.bmm(qr, kr, true);
        let ii = f.g.bmm(qi, ki, true);
        let ri = f.g.bmm(qr, ki, true);
        let ir = f.g.bmm(qi, kr, true);
        let pr = f.g.sub(rr, ii);
        let pi = f.g.add(ri, ir);
        let pr2 = f.g.square(pr);
        let pi2 = f.g.square(pi);
        let p2 = f.g.add(pr2, pi2);
        let p2 = f.g.add_scalar(p2, S::from_f64(MAG_EPS));
        let mag = f.g.sqrt(p2);
        let scaled = f.g.scale(mag, S::one() / S::from_f64((c as f64).sqrt()));
        let attn = f.g.softmax_axis(scaled, 2);
        let vt = tokens(f, v);
        let attended = f.g.bmm(attn, vt, false); // (N, L, C)
        let attended = f.g.permute(attended, &[0, 2, 1]);
        let attended = f.g.reshape(attended, &[n, c, h, w]);

        // CFC: mask the attended spectrum into three bands, reconstruct each
        // band spatially, and mix the concatenation with a learnable 1x1.
        let (ar, ai) = dft2(f, attended);
        let masks = band_masks::<S>(h, w, self.cfg.low_cut, self.cfg.high_cut)?;
        let mut groups = Vec::with_capacity(3);
        for mask in &masks {
            let m = f.g.leaf(mask.clone().into_dyn());
            let mr = f.g.mul(ar, m);
            let mi = f.g.mul(ai, m);
            groups.push(idft2_real(f, mr, mi, &fr_h, &fi_h, &fr_w, &fi_w));
        }
        let stacked = f.g.concat(1, &groups);
        let mixed = self.cfc_mix.forward(f, stacked);
        Ok(if (h, w) == (hh, ww) {
            mixed
        } else {
            f.g.bilinear_resize(mixed, hh, ww)
        })
    }

    /// A_l = (1/K) sum_k sigmoid(U_k GAP(x)) * (x conv W_k) / sqrt(var_k + eps).
    pub fn local_dynamic_conv<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> Result<VarId> {
        let shape = f.g.shape(x).to_vec();
        let (n, c) = (shape[0], shape[1]);
        let gap = f.g.mean_axes_keep(x, &[2, 3]);
        let gap = f.g.reshape(gap, &[n, c]);
        let mut acc: Option<VarId> = None;
        for (k, conv) in self.dyn_convs.iter().enumerate() {
            let u = f.param(&format!("{}.dyn.gate{k}", self.name));
            let ut = f.g.permute(u, &[1, 0]);
            let logits = f.g.matmul2(gap, ut);
            let gate = f.g.sigmoid(logits);
            let gate = f.g.reshape(gate, &[n, c, 1, 1]);
            let resp = conv.forward(f, x);
            let denom = self.response_norm(f, &format!("{}.dyn.var{k}", self.name), resp);
            let term = f.g.mul(gate, resp);
            let term = f.g.div(term, denom);
            acc = Some(match acc {
                Some(a) => f.g.add(a, term),
                None => term,
            });
        }
        let sum = acc.expect("at least one kernel");
        Ok(f
            .g
            .scale(sum, S::one() / S::from_usize_(self.dyn_convs.len())))
    }

    /// sqrt(var + eps) over a response map; batch variance on the tape during
    /// training (with a running estimate updated for eval), frozen in eval.
    fn response_norm<S: Scalar>(&self, f: &mut Forward<S>, buf: &str, resp: VarId) -> VarId {
        if f.train {
            let vals = f.g.value(resp);
            let nel = S::from_usize_(vals.len());
            let mean = vals.sum() / nel;
            let batch_var = vals.mapv(|x| (x - mean) * (x - mean)).sum() / nel;
            let prev = f
                .buffers
                .get_or_insert(buf, || ndarray::arr0(batch_var).into_dyn())
                .clone();
            let m = S::from_f64(VAR_MOMENTUM);
            let updated = prev.mapv(|p| p * m + batch_var * (S::one() - m));
            f.buffers.set(buf, updated);
            let mu = f.g.mean_all(resp);
            let centered = f.g.sub(resp, mu);
            let sq = f.g.square(centered);
            let var = f.g.mean_all(sq);
            let var = f.g.add_scalar(var, S::from_f64(VAR_EPS));
            f.g.sqrt(var)
        } else {
            let stored = f
                .buffers
                .get(buf)
                .cloned()
                .unwrap_or_else(|| ndarray::arr0(S::one()).into_dyn());
            let var = f.g.leaf(stored);
            let var = f.g.add_scalar(var, S::from_f64(VAR_EPS));
            f.g.sqrt(var)
        }
    }

    /// Product of two soft-thresholded deformable 3x3 convolutions.
    pub fn channel_deform_threshold<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> Result<VarId> {
        let c = self.cfg.channels;
        let tau_raw = f.param(&format!("{}.deform.tau_raw", self.name));
        let tau = f.g.softplus(tau_raw);
        let tau = f.g.reshape(tau, &[1, c, 1, 1]);
        let branch = |f: &mut Forward<S>, conv: &Conv2d, off_name: String| -> VarId {
            let w = f.param(&format!("{}.w", conv.name));
            let b = f.param(&format!("{}.b", conv.name));
            let off = f.param(&off_name);
            let y = f.g.deform_conv2d(x, w, off);
            let bshape = f.g.shape(b).to_vec();
            let br = f.g.reshape(b, &[1, bshape[0], 1, 1]);
            let y = f.g.add(y, br);
            f.g.soft_threshold(y, tau)
        };
        let a = branch(f, &self.deform_a, format!("{}.deform.a.offsets", self.name));
        let b = branch(f, &self.deform_b, format!("{}.deform.b.offsets", self.name));
        Ok(f.g.mul(a, b))
    }

    /// Z = concat of the modulated streams; Y = Z (+|*) SE(Z).
    pub fn branch_fuse<S: Scalar>(
        &self,
        f: &mut Forward<S>,
        a_g: VarId,
        a_l: VarId,
        a_c: VarId,
        x1: VarId,
        x2: VarId,
        x3: VarId,
    ) -> Result<VarId> {
        let s1 = f.g.shape(x1).to_vec();
        for &m in &[a_g, a_l, a_c, x2, x3] {
            if f.g.shape(m) != s1.as_slice() {
                return Err(shape_err(format!(
                    "fuse inputs must share shape {:?}, got {:?}",
                    s1,
                    f.g.shape(m)
                )));
            }
        }
        let (n, c3) = (s1[0], 3 * s1[1]);
        let m1 = f.g.mul(a_g, x1);
        let m2 = f.g.mul(a_l, x2);
        let m3 = f.g.mul(a_c, x3);
        let z = f.g.concat(1, &[m1, m2, m3]);
        let gap = f.g.mean_axes_keep(z, &[2, 3]);
        let gap = f.g.reshape(gap, &[n, c3]);
        let w1 = f.param(&format!("{}.fuse.w1", self.name));
        let w2 = f.param(&format!("{}.fuse.w2", self.name));
        let w1t = f.g.permute(w1, &[1, 0]);
        let hid = f.g.matmul2(gap, w1t);
        let hid = f.g.relu(hid);
        let w2t = f.g.permute(w2, &[1, 0]);
        let s = f.g.matmul2(hid, w2t);
        let s = f.g.sigmoid(s);
        let s = f.g.reshape(s, &[n, c3, 1, 1]);
        Ok(match self.cfg.fusion_mode {
            FusionMode::Add => f.g.add(z, s),
            FusionMode::Mul => f.g.mul(z, s),
        })
    }

    /// Per-channel softmax over three gate logit sets; O = sum_i B_i . Y_i.
    pub fn interactive_gate<S: Scalar>(&self, f: &mut Forward<S>, y: VarId) -> Result<VarId> {
        let shape = f.g.shape(y).to_vec();
        let (n, c3) = (shape[0], shape[1]);
        let c = self.cfg.channels;
        if c3 != 3 * c {
            return Err(shape_err(format!("gate expects {} channels, got {c3}", 3 * c)));
        }
        let gap = f.g.mean_axes_keep(y, &[2, 3]);
        let gap = f.g.reshape(gap, &[n, c3]);
        let mut logits = Vec::with_capacity(3);
        for i in 0..3 {
            let wb = f.param(&format!("{}.gate.b{i}", self.name));
            let wbt = f.g.permute(wb, &[1, 0]);
            let li = f.g.matmul2(gap, wbt); // (N, C)
            logits.push(f.g.reshape(li, &[n, 1, c]));
        }
        let stacked = f.g.concat(1, &logits); // (N, 3, C)
        let b = f.g.softmax_axis(stacked, 1);
        let mut out: Option<VarId> = None;
        for i in 0..3 {
            let bi = f.g.slice_axis_op(b, 1, i, i + 1);
            let bi = f.g.reshape(bi, &[n, c, 1, 1]);
            let yi = f.g.slice_axis_op(y, 1, i * c, (i + 1) * c);
            let term = f.g.mul(bi, yi);
            out = Some(match out {
                Some(a) => f.g.add(a, term),
                None => term,
            });
        }
        Ok(out.expect("three streams"))
    }

    pub fn forward<S: Scalar>(
        &self,
        f: &mut Forward<S>,
        d: &DisentangledFeatures,
    ) -> Result<VarId> {
        let s1 = f.g.shape(d.global_ctx).to_vec();
        for &m in &[d.local_edge, d.channel_texture] {
            if f.g.shape(m) != s1.as_slice() {
                return Err(shape_err(format!(
                    "stream shapes differ: {:?} vs {:?}",
                    s1,
                    f.g.shape(m)
                )));
            }
        }
        let a_g = self.global_attention(f, d.global_ctx)?;
        let a_l = self.local_dynamic_conv(f, d.local_edge)?;
        let a_c = self.channel_deform_threshold(f, d.channel_texture)?;
        let y = self.branch_fuse(
            f,
            a_g,
            a_l,
            a_c,
            d.global_ctx,
            d.local_edge,
            d.channel_texture,
        )?;
        self.interactive_gate(f, y)
    }
}

/// Unitary DFT matrix of size n as (real, imag) parts;
/// F[k,j] = exp(-2 pi i k j / n) / sqrt(n).
pub fn dft_matrices<S: Scalar>(n: usize) -> (Array2<S>, Array2<S>) {
    let norm = 1.0 / (n as f64).sqrt();
    let mut re = Array2::<S>::zeros((n, n));
    let mut im = Array2::<S>::zeros((n, n));
    for k in 0..n {
        for j in 0..n {
            let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re[[k, j]] = S::from_f64(ang.cos() * norm);
            im[[k, j]] = S::from_f64(ang.sin() * norm);
        }
    }
    (re, im)
}

/// Real part of the unitary inverse 2-D DFT of (yr, yi) over the last two axes.
fn idft2_real<S: Scalar>(
    f: &mut Forward<S>,
    yr: VarId,
    yi: VarId,
    fr_h: &Array2<S>,
    fi_h: &Array2<S>,
    fr_w: &Array2<S>,
    fi_w: &Array2<S>,
) -> VarId {
    // conj(F_h) Y conj(F_w), real part: (Fr_h Yr + Fi_h Yi) Fr_w + (Fr_h Yi - Fi_h Yr) Fi_w
    let a1 = f.g.matmul_lconst(fr_h.clone(), yr);
    let a2 = f.g.matmul_lconst(fi_h.clone(), yi);
    let ar = f.g.add(a1, a2);
    let b1 = f.g.matmul_lconst(fr_h.clone(), yi);
    let b2 = f.g.matmul_lconst(fi_h.clone(), yr);
    let ai = f.g.sub(b1, b2);
    let t1 = f.g.matmul_rconst(ar, fr_w.clone());
    let t2 = f.g.matmul_rconst(ai, fi_w.clone());
    f.g.add(t1, t2)
}
