//! Dual-domain feature disentanglement: turns the (deep, current, shallow)
//! triple arriving over nested skips into decoupled global-context,
//! local-edge and channel-texture streams at the current layer's shape.

use crate::error::{shape_err, Result};
use crate::layers::Conv2d;
use crate::params::{full, kaiming_uniform, zeros, Forward, ParamStore};
use crate::scalar::Scalar;
use crate::spectral::{band_masks, dct_matrix};
use crate::tape::{GaborFixed, VarId};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

/// The three skip-connection inputs of one nested node.
pub struct MultiLevelFeatures {
    /// Half resolution, 2C channels.
    pub deep: VarId,
    /// Current resolution, C channels.
    pub current: VarId,
    /// `shallow_factor` x resolution, C/2 channels (factor 1 on the
    /// outermost row, where the shallow path is a 3x3 conv of the input).
    pub shallow: VarId,
}

/// The decoupled output streams, all C x H x W.
pub struct DisentangledFeatures {
    pub global_ctx: VarId,
    pub local_edge: VarId,
    pub channel_texture: VarId,
}

#[derive(Clone, Copy, Debug)]
pub struct DdfdConfig {
    /// Current-layer channel count C.
    pub channels: usize,
    /// Channel count of the shallow input.
    pub shallow_channels: usize,
    /// 1 when the shallow input is already at current resolution, else 2.
    pub shallow_factor: usize,
    pub low_cut: f64,
    pub high_cut: f64,
    /// SE-style bottleneck divisor of the frequency channel attention.
    pub reduction: usize,
}

pub const GABOR_ORIENTATIONS: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    3.0 * std::f64::consts::FRAC_PI_4,
];

pub const GABOR_FIXED: GaborFixed = GaborFixed {
    gamma: 0.5,
    sigma: 2.0,
    phi: 0.0,
    size: 7,
};

pub const DEFAULT_GABOR_FREQ: f64 = 0.25;

pub struct Ddfd {
    pub name: String,
    pub cfg: DdfdConfig,
    global_proj: Conv2d,
    shallow_proj: Conv2d,
    strip_proj: Conv2d,
    local_align: Conv2d,
}

impl Ddfd {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        cfg: DdfdConfig,
    ) -> Self {
        let name = name.into();
        let c = cfg.channels;
        let deep_c = 2 * c;
        // floor of 8 keeps the ReLU bottleneck from going fully dead at
        // small widths, which would detach the gate path from the loss
        let hidden = (deep_c / cfg.reduction).max(8).min(deep_c);
        store.insert(
            format!("{name}.fca.w1"),
            kaiming_uniform(&[hidden, deep_c], deep_c, rng),
        );
        store.insert(format!("{name}.fca.b1"), zeros(&[hidden]));
        store.insert(
            format!("{name}.fca.w2"),
            kaiming_uniform(&[deep_c, hidden], hidden, rng),
        );
        store.insert(format!("{name}.fca.b2"), zeros(&[deep_c]));
        let global_proj = Conv2d::register(store, rng, format!("{name}.global.proj"), deep_c, c, 1, 1, 0);
        let shallow_proj = Conv2d::register(
            store,
            rng,
            format!("{name}.local.shallow_proj"),
            cfg.shallow_channels,
            c,
            1,
            1,
            0,
        );
        let strip_proj =
            Conv2d::register(store, rng, format!("{name}.local.strip_proj"), 2 * c, c, 1, 1, 0);
        let local_align =
            Conv2d::register(store, rng, format!("{name}.local.align"), c, c, 1, 1, 0);
        store.insert(
            format!("{name}.local.gabor.theta"),
            ndarray::Array1::from_iter(GABOR_ORIENTATIONS.iter().map(|&t| S::from_f64(t)))
                .into_dyn(),
        );
        store.insert(
            format!("{name}.local.gabor.freq"),
            full(&[GABOR_ORIENTATIONS.len()], DEFAULT_GABOR_FREQ),
        );
        for band in ["low", "mid", "high"] {
            store.insert(format!("{name}.channel.gain.{band}"), full(&[c], 1.0));
        }
        Ddfd {
            name,
            cfg,
            global_proj,
            shallow_proj,
            strip_proj,
            local_align,
        }
    }

    /// Frequency-channel-attention-modulated deep features, projected to C
    /// channels and bilinearly upsampled to the current resolution.
    pub fn global_branch<S: Scalar>(&self, f: &mut Forward<S>, deep: VarId) -> Result<VarId> {
        let shape = f.g.shape(deep).to_vec();
        let (n, dc, dh, dw) = (shape[0], shape[1], shape[2], shape[3]);
        if dc != 2 * self.cfg.channels {
            return Err(shape_err(format!(
                "global branch expects {} deep channels, got {dc}",
                2 * self.cfg.channels
            )));
        }
        // c = sigmoid(W2 relu(W1 |DCT(gap)| + b1) + b2) .* DCT(gap)
        let gap = f.g.mean_axes_keep(deep, &[2, 3]);
        let gap = f.g.reshape(gap, &[n, dc]);
        let dct: Array2<S> = dct_matrix(dc);
        let v = f.g.matmul_rconst(gap, dct.t().as_standard_layout().to_owned());
        let a = f.g.abs(v);
        let w1 = f.param(&format!("{}.fca.w1", self.name));
        let b1 = f.param(&format!("{}.fca.b1", self.name));
        let w2 = f.param(&format!("{}.fca.w2", self.name));
        let b2 = f.param(&format!("{}.fca.b2", self.name));
        let w1t = f.g.permute(w1, &[1, 0]);
        let hid = f.g.matmul2(a, w1t);
        let hid = f.g.add(hid, b1);
        let hid = f.g.relu(hid);
        let w2t = f.g.permute(w2, &[1, 0]);
        let gate = f.g.matmul2(hid, w2t);
        let gate = f.g.add(gate, b2);
        let gate = f.g.sigmoid(gate);
        let cvec = f.g.mul(gate, v);
        let cvec = f.g.reshape(cvec, &[n, dc, 1, 1]);
        let modulated = f.g.mul(deep, cvec);
        let projected = self.global_proj.forward(f, modulated);
        Ok(f.g.bilinear_resize(projected, dh * 2, dw * 2))
    }

    /// Strip-pooling attention over the shallow stream, spatially weighting
    /// Gabor-filtered wavelet bands, followed by 1x1 alignment and
    /// per-channel normalization.
    pub fn local_branch<S: Scalar>(
        &self,
        f: &mut Forward<S>,
        shallow: VarId,
        _current: VarId,
    ) -> Result<VarId> {
        let shape = f.g.shape(shallow).to_vec();
        let (n, _sc, sh, sw) = (shape[0], shape[1], shape[2], shape[3]);
        let pooled = match self.cfg.shallow_factor {
            1 => shallow,
            2 => f.g.avg_pool2(shallow),
            other => {
                return Err(shape_err(format!(
                    "shallow factor must be 1 or 2, got {other}"
                )))
            }
        };
        let s = self.shallow_proj.forward(f, pooled);
        let c = self.cfg.channels;
        let (h, w) = (sh / self.cfg.shallow_factor, sw / self.cfg.shallow_factor);

        // strip attention map
        let yh = f.g.mean_axes_keep(s, &[3]); // (N, C, H, 1)
        let yv = f.g.mean_axes_keep(s, &[2]); // (N, C, 1, W)
        let yh = f.g.broadcast_to(yh, &[n, c, h, w]);
        let yv = f.g.broadcast_to(yv, &[n, c, h, w]);
        let strips = f.g.concat(1, &[yh, yv]);
        let attn = self.strip_proj.forward(f, strips);

        // Gabor-filtered wavelet bands: LL and HH are filtered by the same
        // summed bank, so filter their upsampled sum once.
        let haar_low = haar_matrix::<S>(h, false);
        let haar_high = haar_matrix::<S>(h, true);
        let haar_low_w = haar_matrix::<S>(w, false);
        let haar_high_w = haar_matrix::<S>(w, true);
        let ll = {
            let t = f.g.matmul_lconst(haar_low.clone(), s);
            f.g.matmul_rconst(t, haar_low_w.t().as_standard_layout().to_owned())
        };
        let hh = {
            let t = f.g.matmul_lconst(haar_high, s);
            f.g.matmul_rconst(t, haar_high_w.t().as_standard_layout().to_owned())
        };
        let ll_up = f.g.bilinear_resize(ll, h, w);
        let hh_up = f.g.bilinear_resize(hh, h, w);
        let bands = f.g.add(ll_up, hh_up);
        let theta = f.param(&format!("{}.local.gabor.theta", self.name));
        let freq = f.param(&format!("{}.local.gabor.freq", self.name));
        let kernel = f.g.gabor_bank_kernel(theta, freq, GABOR_FIXED);
        let pad = (GABOR_FIXED.size - 1) / 2;
        let padded = f.g.pad_reflect2d(bands, pad);
        let bshape = f.g.shape(padded).to_vec();
        let flat = f.g.reshape(padded, &[n * c, 1, bshape[2], bshape[3]]);
        let ksz = GABOR_FIXED.size;
        let kr = f.g.reshape(kernel, &[1, 1, ksz, ksz]);
        let filtered = f.g.conv2d(flat, kr, 1, 0);
        let filtered = f.g.reshape(filtered, &[n, c, h, w]);

        let fused = f.g.mul(attn, filtered);
        // spatial-frequency alignment: 1x1 projection + per-channel standardization
        let aligned = self.local_align.forward(f, fused);
        let mean = f.g.mean_axes_keep(aligned, &[2, 3]);
        let centered = f.g.sub(aligned, mean);
        let sq = f.g.square(centered);
        let var = f.g.mean_axes_keep(sq, &[2, 3]);
        let var = f.g.add_scalar(var, S::from_f64(1e-5));
        let std = f.g.sqrt(var);
        Ok(f.g.div(centered, std))
    }

    /// DCT -> band split -> per-band learnable channel gains -> inverse DCT.
    pub fn channel_branch<S: Scalar>(&self, f: &mut Forward<S>, current: VarId) -> Result<VarId> {
        let shape = f.g.shape(current).to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let dh: Array2<S> = dct_matrix(h);
        let dw: Array2<S> = dct_matrix(w);
        let coeffs = {
            let t = f.g.matmul_lconst(dh.clone(), current);
            f.g.matmul_rconst(t, dw.t().as_standard_layout().to_owned())
        };
        let masks = band_masks::<S>(h, w, self.cfg.low_cut, self.cfg.high_cut)?;
        let mut recombined: Option<VarId> = None;
        for (mask, band) in masks.iter().zip(["low", "mid", "high"]) {
            let m = f.g.leaf(mask.clone().into_dyn());
            let part = f.g.mul(coeffs, m);
            let gain = f.param(&format!("{}.channel.gain.{band}", self.name));
            let gain = f.g.reshape(gain, &[1, c, 1, 1]);
            let part = f.g.mul(part, gain);
            recombined = Some(match recombined {
                Some(acc) => f.g.add(acc, part),
                None => part,
            });
        }
        let recombined = recombined.expect("three bands");
        let t = f.g.matmul_lconst(dh.t().as_standard_layout().to_owned(), recombined);
        let out = f.g.matmul_rconst(t, dw);
        let _ = n;
        Ok(out)
    }

    pub fn forward<S: Scalar>(
        &self,
        f: &mut Forward<S>,
        m: &MultiLevelFeatures,
    ) -> Result<DisentangledFeatures> {
        let cur_shape = f.g.shape(m.current).to_vec();
        let deep_shape = f.g.shape(m.deep).to_vec();
        if deep_shape[2] * 2 != cur_shape[2] || deep_shape[3] * 2 != cur_shape[3] {
            return Err(shape_err(format!(
                "deep features must be at half resolution: deep {:?}, current {:?}",
                &deep_shape[2..],
                &cur_shape[2..]
            )));
        }
        let sh_shape = f.g.shape(m.shallow).to_vec();
        let fct = self.cfg.shallow_factor;
        if sh_shape[2] != cur_shape[2] * fct || sh_shape[3] != cur_shape[3] * fct {
            return Err(shape_err(format!(
                "shallow features must be at {fct}x resolution: shallow {:?}, current {:?}",
                &sh_shape[2..],
                &cur_shape[2..]
            )));
        }
        Ok(DisentangledFeatures {
            global_ctx: self.global_branch(f, m.deep)?,
            local_edge: self.local_branch(f, m.shallow, m.current)?,
            channel_texture: self.channel_branch(f, m.current)?,
        })
    }
}

/// Orthonormal single-level Haar analysis matrix (n/2 x n);
/// `high` selects the detail rows.
pub fn haar_matrix<S: Scalar>(n: usize, high: bool) -> Array2<S> {
    assert!(n % 2 == 0, "haar matrix needs even size");
    let mut m = Array2::<S>::zeros((n / 2, n));
    let v = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    for i in 0..n / 2 {
        m[[i, 2 * i]] = v;
        m[[i, 2 * i + 1]] = if high { -v } else { v };
    }
    m
}
