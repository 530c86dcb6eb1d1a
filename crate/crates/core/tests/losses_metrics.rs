//! Closed-form values for the loss terms, brute-force metric oracles and
//! the learning-rate schedule.

mod common;

use common::*;
use dbif_aunet::losses::{
    bce_loss_value, depth_area_weights, dice_loss_value, focal_loss_value, hybrid_loss,
    hybrid_loss_value, supervision_weights, total_loss, LossHyperParams,
};
use dbif_aunet::metrics::{accumulate, binarize, report, report_split, ConfusionCounts};
use dbif_aunet::schedule::{lr_schedule, lr_trace};
use dbif_aunet::tape::Graph;
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn arr(vals: &[f64]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap()
}

#[test]
fn dice_loss_half_overlap() {
    // |inter| = 1, |pred| + |truth| = 4: coefficient 1/2, loss 1/2
    let pred = arr(&[1.0, 1.0, 0.0, 0.0]);
    let truth = arr(&[1.0, 0.0, 1.0, 0.0]);
    let eps = 1e-12;
    let l = dice_loss_value(&pred, &truth, eps).unwrap();
    assert!((l - 0.5).abs() < 1e-9, "{l}");
    // perfect match has zero loss for any eps
    let l0 = dice_loss_value(&truth, &truth, 1.0).unwrap();
    assert!(l0.abs() < 1e-12);
    // smoothing keeps the empty/empty case at zero loss
    let z = arr(&[0.0, 0.0]);
    let le = dice_loss_value(&z, &z, 1.0).unwrap();
    assert!(le.abs() < 1e-12, "{le}");
}

#[test]
fn focal_loss_closed_form_values() {
    let h = LossHyperParams::default();
    // single positive pixel at p = 1/2:
    // alpha (1-p)^gamma (-ln p) = 0.25 * 0.25 * ln 2
    let pred = arr(&[0.5]);
    let truth = arr(&[1.0]);
    let f = focal_loss_value(&pred, &truth, &h).unwrap();
    let expect = 0.25 * 0.25 * std::f64::consts::LN_2;
    assert!((f - expect).abs() < 1e-12, "{f} vs {expect}");

    // gamma = 0, alpha = 1/2 collapses to half the BCE
    let h2 = LossHyperParams {
        focal_gamma: 0.0,
        focal_alpha: 0.5,
        ..h
    };
    let mut r = rng(21);
    let p = random_unit::<f64>(&[8], &mut r).mapv(|v| v.clamp(0.05, 0.95));
    let t = random_binary::<f64>(&[8], &mut r);
    let f2 = focal_loss_value(&p, &t, &h2).unwrap();
    let b = bce_loss_value(&p, &t, h.clamp_eps).unwrap();
    assert!((f2 - 0.5 * b).abs() < 1e-12);
}

#[test]
fn bce_loss_closed_form() {
    let pred = arr(&[0.5, 0.5]);
    let truth = arr(&[1.0, 0.0]);
    let b = bce_loss_value(&pred, &truth, 1e-7).unwrap();
    assert!((b - std::f64::consts::LN_2).abs() < 1e-9, "{b}");
    // clamping keeps confident wrong answers finite
    let sure = arr(&[1.0]);
    let wrong = arr(&[0.0]);
    let bw = bce_loss_value(&sure, &wrong, 1e-7).unwrap();
    assert!(bw.is_finite() && bw > 10.0);
}

#[test]
fn hybrid_combines_with_default_lambdas() {
    let mut r = rng(22);
    let p = random_unit::<f64>(&[2, 1, 4, 4], &mut r).mapv(|v| v.clamp(0.05, 0.95));
    let t = random_binary::<f64>(&[2, 1, 4, 4], &mut r);
    let h = LossHyperParams::default();
    let hv = hybrid_loss_value(&p, &t, &h).unwrap();
    let d = dice_loss_value(&p, &t, h.smooth_eps).unwrap();
    let f = focal_loss_value(&p, &t, &h).unwrap();
    let b = bce_loss_value(&p, &t, h.clamp_eps).unwrap();
    assert!((hv - (0.4 * d + 0.3 * f + 0.3 * b)).abs() < 1e-12);
}

#[test]
fn hybrid_gradient_matches_finite_differences() {
    let mut r = rng(23);
    let p0 = random_unit::<f64>(&[1, 1, 4, 4], &mut r).mapv(|v| v.clamp(0.1, 0.9));
    let t0 = random_binary::<f64>(&[1, 1, 4, 4], &mut r);
    let h = LossHyperParams::default();
    let mut g = Graph::new();
    let p = g.leaf(p0.clone());
    let t = g.leaf(t0.clone());
    let terms = hybrid_loss(&mut g, p, t, &h);
    let grads = g.backward(terms.hybrid).unwrap();
    let analytic = grads.wrt(p, p0.shape());
    for idx in sample_coords(p0.shape(), 8, &mut r) {
        let fd = central_diff(&p0, &idx, 1e-6, |x| {
            hybrid_loss_value(x, &t0, &h).unwrap()
        });
        let an = analytic[IxDyn(&idx)];
        assert!(rel_err(an, fd, 1e-6) < 1e-4, "at {idx:?}: {an} vs {fd}");
    }
}

#[test]
fn area_weights_are_powers_of_four() {
    let w = depth_area_weights(4);
    let expect = [1.0 / 85.0, 4.0 / 85.0, 16.0 / 85.0, 64.0 / 85.0];
    for (a, b) in w.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn supervision_weight_ratios() {
    let h = LossHyperParams::default();
    let (w_u, w_s) = supervision_weights(4, &h);
    assert!((w_u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((w_s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // softmax ratio depends only on the logit gap: scale * (64 - 1)/85
    let ru = w_u[3] / w_u[0];
    let rs = w_s[3] / w_s[0];
    assert!((ru - f64::exp(1.5 * 0.9 * 63.0 / 85.0)).abs() < 1e-12, "{ru}");
    assert!((rs - f64::exp(1.5 * 0.7 * 63.0 / 85.0)).abs() < 1e-12, "{rs}");
    // deeper supervision points always weigh more
    assert!(w_u.windows(2).all(|p| p[1] > p[0]));
    assert!(w_s.windows(2).all(|p| p[1] > p[0]));
}

#[test]
fn total_loss_weighted_sum_and_ablation() {
    let mut r = rng(24);
    let h = LossHyperParams::default();
    let t0 = random_binary::<f64>(&[1, 1, 4, 4], &mut r);
    let preds: Vec<ArrayD<f64>> = (0..6)
        .map(|_| random_unit::<f64>(&[1, 1, 4, 4], &mut r).mapv(|v| v.clamp(0.05, 0.95)))
        .collect();
    let mut g = Graph::new();
    let truth = g.leaf(t0.clone());
    let u: Vec<_> = preds[..3].iter().map(|p| g.leaf(p.clone())).collect();
    let b: Vec<_> = preds[3..].iter().map(|p| g.leaf(p.clone())).collect();
    let (total, bd) = total_loss(&mut g, &u, &b, truth, &h, false).unwrap();
    let (w_u, w_s) = supervision_weights(3, &h);
    let mut expect = 0.0;
    for j in 0..3 {
        expect += w_u[j] * hybrid_loss_value(&preds[j], &t0, &h).unwrap();
        expect += w_s[j] * hybrid_loss_value(&preds[3 + j], &t0, &h).unwrap();
    }
    assert!((g.scalar(total) - expect).abs() < 1e-12);
    assert_eq!(bd.per_point.len(), 6);
    assert!((bd.total - expect).abs() < 1e-12);

    // uniform ablation: plain mean over u heads, b heads ignored
    let mut g2 = Graph::new();
    let truth2 = g2.leaf(t0.clone());
    let u2: Vec<_> = preds[..3].iter().map(|p| g2.leaf(p.clone())).collect();
    let (t2, bd2) = total_loss(&mut g2, &u2, &[], truth2, &h, true).unwrap();
    let mean: f64 = preds[..3]
        .iter()
        .map(|p| hybrid_loss_value(p, &t0, &h).unwrap())
        .sum::<f64>()
        / 3.0;
    assert!((g2.scalar(t2) - mean).abs() < 1e-12);
    assert!(bd2.w_s.iter().all(|&w| w == 0.0));

    // mismatched head counts outside the ablation are an error
    let mut g3 = Graph::<f64>::new();
    let truth3 = g3.leaf(t0);
    let u3 = vec![g3.leaf(preds[0].clone())];
    assert!(total_loss(&mut g3, &u3, &[], truth3, &h, false).is_err());
}

#[test]
fn hyper_param_validation() {
    let mut h = LossHyperParams::default();
    assert!(h.validate().is_ok());
    h.lambda_bce = 0.5;
    assert!(h.validate().is_err());
    h = LossHyperParams {
        focal_alpha: 1.5,
        ..LossHyperParams::default()
    };
    assert!(h.validate().is_err());
}

#[test]
fn metric_report_matches_brute_force() {
    let mut r = rng(25);
    let pred = random_unit::<f64>(&[1, 32, 32], &mut r);
    let truth = random_binary::<f64>(&[1, 32, 32], &mut r);
    let pb = binarize(&pred, 0.5);
    let c = accumulate(&pb, &truth).unwrap();
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        match (p >= 0.5, t > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
    let rep = report(&c).unwrap();
    assert!((rep.iou - tp as f64 / (tp + fp + fn_) as f64).abs() < 1e-15);
    assert!((rep.dice - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() < 1e-15);
    assert!((rep.accuracy - (tp + tn) as f64 / c.total() as f64).abs() < 1e-15);
    assert!((rep.precision - tp as f64 / (tp + fp) as f64).abs() < 1e-15);
    assert!((rep.recall - tp as f64 / (tp + fn_) as f64).abs() < 1e-15);
    assert!((rep.specificity - tn as f64 / (tn + fp) as f64).abs() < 1e-15);
    // dice = 2 iou / (1 + iou)
    assert!((rep.dice - 2.0 * rep.iou / (1.0 + rep.iou)).abs() < 1e-12);
}

#[test]
fn degenerate_counts_report_one() {
    // empty truth, empty prediction: no positives anywhere
    let c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 100,
    };
    let rep = report(&c).unwrap();
    assert_eq!(rep.iou, 1.0);
    assert_eq!(rep.dice, 1.0);
    assert_eq!(rep.precision, 1.0);
    assert_eq!(rep.recall, 1.0);
    assert!(rep.degenerate.contains(&"dice".to_string()));
    assert!(report(&ConfusionCounts::default()).is_err());
}

#[test]
fn split_report_pools_counts() {
    let mut r = rng(26);
    let pairs: Vec<(ArrayD<f64>, ArrayD<f64>)> = (0..3)
        .map(|_| {
            (
                random_unit::<f64>(&[8, 8], &mut r),
                random_binary::<f64>(&[8, 8], &mut r),
            )
        })
        .collect();
    let rep = report_split(&pairs, 0.5).unwrap();
    assert_eq!(rep.n_images, 3);
    let per = rep.per_image.as_ref().unwrap();
    assert_eq!(per.len(), 3);
    let mut pooled = ConfusionCounts::default();
    for (p, t) in &pairs {
        pooled += accumulate(&binarize(p, 0.5), t).unwrap();
    }
    let expect = report(&pooled).unwrap();
    assert_eq!(rep.iou, expect.iou);
    assert_eq!(rep.dice, expect.dice);
}

#[test]
fn lr_schedule_closed_form() {
    let (lr0, period, gamma) = (0.001f64, 20usize, 0.5f64);
    for epoch in 0..100 {
        let cycle = epoch / period;
        let t = (epoch % period) as f64;
        let expect = lr0
            * gamma.powi(cycle as i32)
            * (1.0 + (std::f64::consts::PI * t / period as f64).cos())
            / 2.0;
        let got = lr_schedule(epoch, lr0, period, gamma);
        assert!((got - expect).abs() < 1e-12, "epoch {epoch}");
    }
    // warm restart peaks decay geometrically
    assert_eq!(lr_schedule(0, lr0, period, gamma), lr0);
    assert!((lr_schedule(20, lr0, period, gamma) - lr0 * 0.5).abs() < 1e-15);
    assert!((lr_schedule(40, lr0, period, gamma) - lr0 * 0.25).abs() < 1e-15);
    // half-way through a cycle sits at half the peak
    assert!((lr_schedule(10, lr0, period, gamma) - lr0 / 2.0).abs() < 1e-15);
    let trace = lr_trace(40, lr0, period, gamma);
    assert_eq!(trace.len(), 40);
    // strictly decreasing within a cycle
    assert!(trace[..20].windows(2).all(|p| p[1] < p[0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_losses_bounded(seed in 0u64..500) {
        let mut r = rng(seed);
        let p = random_unit::<f64>(&[12], &mut r);
        let t = random_binary::<f64>(&[12], &mut r);
        let h = LossHyperParams::default();
        let d = dice_loss_value(&p, &t, h.smooth_eps).unwrap();
        let f = focal_loss_value(&p, &t, &h).unwrap();
        let b = bce_loss_value(&p, &t, h.clamp_eps).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(f >= 0.0 && f.is_finite());
        prop_assert!(b >= 0.0 && b.is_finite());
        // focal with default alpha never exceeds the bce upper envelope
        prop_assert!(f <= b + 1e-12);
    }

    #[test]
    fn prop_metrics_in_unit_range(seed in 0u64..500) {
        let mut r = rng(seed);
        let p = random_unit::<f64>(&[6, 6], &mut r);
        let t = random_binary::<f64>(&[6, 6], &mut r);
        let c = accumulate(&binarize(&p, 0.5), &t).unwrap();
        let rep = report(&c).unwrap();
        for v in [rep.iou, rep.dice, rep.accuracy, rep.precision, rep.recall, rep.specificity] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(rep.iou <= rep.dice + 1e-12);
    }

    #[test]
    fn prop_lr_positive_and_bounded(epoch in 0usize..500, period in 1usize..60) {
        let lr = lr_schedule(epoch, 0.01, period, 0.5);
        prop_assert!(lr >= 0.0 && lr <= 0.01 + 1e-18);
    }
}
