//! Hybrid per-point loss (Dice + Focal + BCE) and the nested
//! deep-supervision weighting that combines the supervision points.

use crate::error::{shape_err, validation, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, VarId};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossHyperParams {
    pub lambda_dice: f64,
    pub lambda_focal: f64,
    pub lambda_bce: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Dice smoothing in pixel-count units.
    pub smooth_eps: f64,
    /// Probability clamp before logs.
    pub clamp_eps: f64,
    /// Base scale of the supervision-weight logits.
    pub ds_scale: f64,
    /// Extra factor on the BIAF-path weight logits.
    pub s_factor: f64,
    /// Extra factor on the upsampling-path weight logits.
    pub u_factor: f64,
}

impl Default for LossHyperParams {
    fn default() -> Self {
        LossHyperParams {
            lambda_dice: 0.4,
            lambda_focal: 0.3,
            lambda_bce: 0.3,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_eps: 1.0,
            clamp_eps: 1e-7,
            ds_scale: 1.5,
            s_factor: 0.7,
            u_factor: 0.9,
        }
    }
}

impl LossHyperParams {
    pub fn validate(&self) -> Result<()> {
        let lsum = self.lambda_dice + self.lambda_focal + self.lambda_bce;
        if (lsum - 1.0).abs() > 1e-9 {
            return Err(validation(format!("loss lambdas must sum to 1, got {lsum}")));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(validation("focal alpha must be in (0,1)"));
        }
        if self.focal_gamma < 0.0 || self.smooth_eps <= 0.0 || self.clamp_eps <= 0.0 {
            return Err(validation("focal gamma >= 0, eps > 0 required"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointLoss {
    /// "u" for upsampling-endpoint heads, "b" for BIAF-path heads.
    pub kind: String,
    /// Depth index, 1-based.
    pub j: usize,
    pub dice: f64,
    pub focal: f64,
    pub bce: f64,
    pub hybrid: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_point: Vec<PointLoss>,
    pub w_u: Vec<f64>,
    pub w_s: Vec<f64>,
    pub total: f64,
}

fn check_same_shape<S: Scalar>(pred: &ArrayD<S>, truth: &ArrayD<S>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(shape_err(format!(
            "pred {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// `1 - (2 sum(t p) + eps) / (sum t + sum p + eps)` on the tape.
pub fn dice_loss<S: Scalar>(g: &mut Graph<S>, pred: VarId, truth: VarId, eps: f64) -> VarId {
    let inter = g.mul(pred, truth);
    let inter = g.sum_all(inter);
    let num = g.scale(inter, S::from_f64(2.0));
    let num = g.add_scalar(num, S::from_f64(eps));
    let sp = g.sum_all(pred);
    let st = g.sum_all(truth);
    let den = g.add(sp, st);
    let den = g.add_scalar(den, S::from_f64(eps));
    let frac = g.div(num, den);
    let neg = g.neg(frac);
    g.add_scalar(neg, S::one())
}

/// Mean two-term focal loss with pre-log probability clamping.
pub fn focal_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: VarId,
    truth: VarId,
    alpha: f64,
    gamma: f64,
    clamp_eps: f64,
) -> VarId {
    let p = g.clamp(pred, S::from_f64(clamp_eps), S::from_f64(1.0 - clamp_eps));
    let one = S::one();
    let gam = S::from_f64(gamma);
    let logp = g.ln(p);
    let neg_p = g.neg(p);
    let omp = g.add_scalar(neg_p, one); // 1 - p
    let log1mp = g.ln(omp);
    let mod_pos = g.powf_const(omp, gam); // (1-p)^gamma
    let mod_neg = g.powf_const(p, gam); // p^gamma
    let neg_t = g.neg(truth);
    let omt = g.add_scalar(neg_t, one); // 1 - y
    let pos = g.mul(truth, logp);
    let pos = g.mul(pos, mod_pos);
    let pos = g.scale(pos, S::from_f64(alpha));
    let negt = g.mul(omt, log1mp);
    let negt = g.mul(negt, mod_neg);
    let negt = g.scale(negt, S::from_f64(1.0 - alpha));
    let s = g.add(pos, negt);
    let m = g.mean_all(s);
    g.neg(m)
}

/// Mean binary cross-entropy with pre-log clamping.
pub fn bce_loss<S: Scalar>(g: &mut Graph<S>, pred: VarId, truth: VarId, clamp_eps: f64) -> VarId {
    let p = g.clamp(pred, S::from_f64(clamp_eps), S::from_f64(1.0 - clamp_eps));
    let one = S::one();
    let logp = g.ln(p);
    let neg_p = g.neg(p);
    let omp = g.add_scalar(neg_p, one);
    let log1mp = g.ln(omp);
    let neg_t = g.neg(truth);
    let omt = g.add_scalar(neg_t, one);
    let pos = g.mul(truth, logp);
    let negt = g.mul(omt, log1mp);
    let s = g.add(pos, negt);
    let m = g.mean_all(s);
    g.neg(m)
}

pub struct HybridTerms {
    pub dice: VarId,
    pub focal: VarId,
    pub bce: VarId,
    pub hybrid: VarId,
}

/// `lambda_dice * dice + lambda_focal * focal + lambda_bce * bce`.
pub fn hybrid_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: VarId,
    truth: VarId,
    h: &LossHyperParams,
) -> HybridTerms {
    let dice = dice_loss(g, pred, truth, h.smooth_eps);
    let focal = focal_loss(g, pred, truth, h.focal_alpha, h.focal_gamma, h.clamp_eps);
    let bce = bce_loss(g, pred, truth, h.clamp_eps);
    let d = g.scale(dice, S::from_f64(h.lambda_dice));
    let f = g.scale(focal, S::from_f64(h.lambda_focal));
    let b = g.scale(bce, S::from_f64(h.lambda_bce));
    let df = g.add(d, f);
    let hybrid = g.add(df, b);
    HybridTerms {
        dice,
        focal,
        bce,
        hybrid,
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Layer-depth area fractions `omega_j = 4^(j-1) / sum_m 4^(m-1)`.
pub fn depth_area_weights(depth_count: usize) -> Vec<f64> {
    let total: f64 = (0..depth_count).map(|m| 4f64.powi(m as i32)).sum();
    (0..depth_count)
        .map(|j| 4f64.powi(j as i32) / total)
        .collect()
}

/// Supervision weights: each group is a softmax over the depth axis of the
/// scaled area fractions (scaling the BIAF group by `ds_scale * s_factor`
/// and the upsampling group by `ds_scale * u_factor`).
pub fn supervision_weights(depth_count: usize, h: &LossHyperParams) -> (Vec<f64>, Vec<f64>) {
    let omega = depth_area_weights(depth_count);
    let w_u = softmax(
        &omega
            .iter()
            .map(|&o| h.ds_scale * h.u_factor * o)
            .collect::<Vec<_>>(),
    );
    let w_s = softmax(
        &omega
            .iter()
            .map(|&o| h.ds_scale * h.s_factor * o)
            .collect::<Vec<_>>(),
    );
    (w_u, w_s)
}

/// Combines the supervision points into one scalar.
///
/// `uniform_u_only` implements the no-nested-DS ablation: uniform weights
/// over the upsampling heads, BIAF heads ignored.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    u_heads: &[VarId],
    b_heads: &[VarId],
    truth: VarId,
    h: &LossHyperParams,
    uniform_u_only: bool,
) -> Result<(VarId, LossBreakdown)> {
    if u_heads.is_empty() || (!uniform_u_only && u_heads.len() != b_heads.len()) {
        return Err(validation(format!(
            "supervision maps missing: {} u-heads, {} b-heads",
            u_heads.len(),
            b_heads.len()
        )));
    }
    let n = u_heads.len();
    let (w_u, w_s) = if uniform_u_only {
        (vec![1.0 / n as f64; n], vec![0.0; n])
    } else {
        supervision_weights(n, h)
    };
    let mut per_point = Vec::new();
    let mut total: Option<VarId> = None;
    let add_weighted = |g: &mut Graph<S>, hv: VarId, w: f64, total: &mut Option<VarId>| {
        let scaled = g.scale(hv, S::from_f64(w));
        *total = Some(match *total {
            Some(t) => g.add(t, scaled),
            None => scaled,
        });
    };
    for (j, &u) in u_heads.iter().enumerate() {
        check_same_shape(g.value(u), g.value(truth))?;
        let t = hybrid_loss(g, u, truth, h);
        per_point.push(PointLoss {
            kind: "u".into(),
            j: j + 1,
            dice: g.scalar(t.dice).to_f64_(),
            focal: g.scalar(t.focal).to_f64_(),
            bce: g.scalar(t.bce).to_f64_(),
            hybrid: g.scalar(t.hybrid).to_f64_(),
        });
        add_weighted(g, t.hybrid, w_u[j], &mut total);
    }
    if !uniform_u_only {
        for (j, &b) in b_heads.iter().enumerate() {
            check_same_shape(g.value(b), g.value(truth))?;
            let t = hybrid_loss(g, b, truth, h);
            per_point.push(PointLoss {
                kind: "b".into(),
                j: j + 1,
                dice: g.scalar(t.dice).to_f64_(),
                focal: g.scalar(t.focal).to_f64_(),
                bce: g.scalar(t.bce).to_f64_(),
                hybrid: g.scalar(t.hybrid).to_f64_(),
            });
            add_weighted(g, t.hybrid, w_s[j], &mut total);
        }
    }
    let total = total.expect("at least one head");
    let breakdown = LossBreakdown {
        per_point,
        w_u,
        w_s,
        total: g.scalar(total).to_f64_(),
    };
    Ok((total, breakdown))
}

// ---- convenience scalar evaluations over plain arrays ----

pub fn dice_loss_value<S: Scalar>(pred: &ArrayD<S>, truth: &ArrayD<S>, eps: f64) -> Result<S> {
    check_same_shape(pred, truth)?;
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let t = g.leaf(truth.clone());
    let l = dice_loss(&mut g, p, t, eps);
    Ok(g.scalar(l))
}

pub fn focal_loss_value<S: Scalar>(
    pred: &ArrayD<S>,
    truth: &ArrayD<S>,
    h: &LossHyperParams,
) -> Result<S> {
    check_same_shape(pred, truth)?;
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let t = g.leaf(truth.clone());
    let l = focal_loss(&mut g, p, t, h.focal_alpha, h.focal_gamma, h.clamp_eps);
    Ok(g.scalar(l))
}

pub fn bce_loss_value<S: Scalar>(pred: &ArrayD<S>, truth: &ArrayD<S>, clamp_eps: f64) -> Result<S> {
    check_same_shape(pred, truth)?;
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let t = g.leaf(truth.clone());
    let l = bce_loss(&mut g, p, t, clamp_eps);
    Ok(g.scalar(l))
}

pub fn hybrid_loss_value<S: Scalar>(
    pred: &ArrayD<S>,
    truth: &ArrayD<S>,
    h: &LossHyperParams,
) -> Result<S> {
    check_same_shape(pred, truth)?;
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let t = g.leaf(truth.clone());
    let terms = hybrid_loss(&mut g, p, t, h);
    Ok(g.scalar(terms.hybrid))
}
