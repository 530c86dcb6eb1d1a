//! Training loop, evaluation, and prediction.

use crate::checkpoint::Checkpoint;
use crate::data::{self, SamplePair, SplitManifest};
use crate::error::{validation, Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossHyperParams};
use crate::metrics::{self, MetricReport};
use crate::network::{Ablation, Model, NetworkConfig};
use crate::params::SgdMomentum;
use crate::scalar::Scalar;
use crate::schedule::{lr_schedule, lr_trace};
use indexmap::IndexMap;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub restart_period: usize,
    pub restart_gamma: f64,
    pub seed: u64,
    /// Extra epoch-numbered checkpoints every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            momentum: 0.9,
            batch_size: 8,
            epochs: 200,
            restart_period: 20,
            restart_gamma: 0.5,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(validation(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.restart_period == 0 || self.batch_size == 0 {
            return Err(validation(
                "epochs, restart_period and batch_size must be >= 1",
            ));
        }
        if !(self.restart_gamma > 0.0 && self.restart_gamma <= 1.0) {
            return Err(validation(format!(
                "restart_gamma must be in (0,1], got {}",
                self.restart_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_loss: f64,
    pub val: MetricReport,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub param_count: usize,
    pub lr_trace: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_val_dice: f64,
    pub test: Option<MetricReport>,
}

/// Bit-reproducible single-threaded mode; execution here is single-threaded
/// regardless, the flag pins intent at the interface.
pub fn deterministic_mode() -> bool {
    std::env::var("DBIF_DETERMINISTIC").is_ok_and(|v| v == "1")
}

/// Stacks samples into (B, 1, H, W) image and mask tensors.
pub fn stack_batch<S: Scalar>(samples: &[&SamplePair<S>]) -> Result<(ArrayD<S>, ArrayD<S>)> {
    let (h, w) = samples[0].image.dim();
    let b = samples.len();
    let mut img = ArrayD::<S>::zeros(IxDyn(&[b, 1, h, w]));
    let mut mask = ArrayD::<S>::zeros(IxDyn(&[b, 1, h, w]));
    for (i, s) in samples.iter().enumerate() {
        if s.image.dim() != (h, w) {
            return Err(validation(format!(
                "sample `{}` has mismatched resolution {:?}",
                s.id,
                s.image.dim()
            )));
        }
        for ((y, x), &v) in s.image.indexed_iter() {
            img[[i, 0, y, x]] = v;
        }
        for ((y, x), &v) in s.mask.indexed_iter() {
            mask[[i, 0, y, x]] = v;
        }
    }
    Ok((img, mask))
}

/// One SGD step on a stacked batch; returns the loss breakdown.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    optimizer: &mut SgdMomentum<S>,
    images: &ArrayD<S>,
    masks: &ArrayD<S>,
    h: &LossHyperParams,
    lr: f64,
) -> Result<LossBreakdown> {
    let uniform = model.cfg.ablation == Ablation::NoNestedDs;
    let (mut f, outs) = model.forward(images, true)?;
    let truth = f.g.leaf(masks.clone());
    let (total, breakdown) = total_loss(&mut f.g, &outs.u_heads, &outs.b_heads, truth, h, uniform)?;
    if !breakdown.total.is_finite() {
        return Err(validation("non-finite loss"));
    }
    let grads = f.g.backward(total)?;
    let mut named: IndexMap<String, ArrayD<S>> = IndexMap::new();
    for (name, &var) in &f.bound {
        if let Some(g) = grads.get(var) {
            named.insert(name.clone(), g.clone());
        }
    }
    drop(f);
    optimizer.step(&mut model.store, &named, S::from_f64(lr));
    Ok(breakdown)
}

/// Eval-mode inference over samples, pooled micro metrics at threshold 0.5.
pub fn evaluate_samples<S: Scalar>(
    model: &mut Model<S>,
    samples: &[SamplePair<S>],
) -> Result<MetricReport> {
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let (img, mask) = stack_batch(&[s])?;
        let pred = model.infer(&img)?;
        pairs.push((pred, mask));
    }
    metrics::report_split(&pairs, 0.5)
}

pub fn train<S: Scalar>(
    net_cfg: NetworkConfig,
    tc: &TrainConfig,
    h: &LossHyperParams,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunRecord> {
    tc.validate()?;
    h.validate()?;
    let manifest = data::read_manifest(data_dir)?;
    let train_set: Vec<SamplePair<S>> = data::load_samples(data_dir, &manifest.train)?;
    let val_set: Vec<SamplePair<S>> = data::load_samples(data_dir, &manifest.val)?;
    let test_set: Vec<SamplePair<S>> = data::load_samples(data_dir, &manifest.test)?;
    if train_set.is_empty() {
        return Err(validation("empty training split"));
    }

    let (mut model, mut optimizer, mut rng, start_epoch, mut best_val_dice) = match resume {
        Some(path) => {
            let (m, o, r, e, b) = Checkpoint::<S>::load(path)?.into_model()?;
            if m.cfg.ablation != net_cfg.ablation || m.cfg.depth != net_cfg.depth {
                return Err(Error::Checkpoint(
                    "resume config disagrees with the checkpoint on depth/ablation".into(),
                ));
            }
            (m, o, r, e + 1, b)
        }
        None => (
            Model::build(net_cfg, tc.seed)?,
            SgdMomentum::new(tc.momentum),
            ChaCha8Rng::seed_from_u64(tc.seed),
            0,
            f64::NEG_INFINITY,
        ),
    };

    std::fs::create_dir_all(out_dir)?;
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("metrics.jsonl"))?;

    let mut records = Vec::new();
    for epoch in start_epoch..tc.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, tc.lr0, tc.restart_period, tc.restart_gamma);
        // data order depends only on (seed, epoch) so a resumed run replays
        // the exact original batches
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(epoch as u64));
        data::split::fisher_yates(&mut order, &mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&SamplePair<S>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (img, mask) = stack_batch(&batch)?;
            let breakdown = train_step(&mut model, &mut optimizer, &img, &mask, h, lr)
                .map_err(|e| match e {
                    Error::Validation(msg) if msg.contains("non-finite") => {
                        Error::Divergence { epoch, step }
                    }
                    other => other,
                })?;
            loss_sum += breakdown.total;
            steps += 1;
            let line = serde_json::json!({
                "kind": "step",
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "loss": breakdown,
            });
            writeln!(log, "{line}")?;
        }

        let val = if val_set.is_empty() {
            evaluate_samples(&mut model, &train_set)?
        } else {
            evaluate_samples(&mut model, &val_set)?
        };
        let record = EpochRecord {
            epoch,
            lr,
            mean_train_loss: loss_sum / steps.max(1) as f64,
            val: val.clone(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        writeln!(
            log,
            "{}",
            serde_json::json!({"kind": "epoch", "record": &record})
        )?;

        let ckpt = Checkpoint::new(&model, &optimizer, &rng, epoch, best_val_dice.max(val.dice));
        ckpt.save(&out_dir.join("last.ckpt.json"))?;
        if val.dice > best_val_dice {
            best_val_dice = val.dice;
            ckpt.save(&out_dir.join("best.ckpt.json"))?;
        }
        if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
            ckpt.save(&out_dir.join(format!("epoch{epoch}.ckpt.json")))?;
        }
        records.push(record);
        // keep the archived RNG in sync with the per-epoch derivation
        rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(epoch as u64 + 1));
    }

    let test = if test_set.is_empty() {
        None
    } else {
        Some(evaluate_samples(&mut model, &test_set)?)
    };
    let run = RunRecord {
        param_count: model.param_count(),
        lr_trace: lr_trace(tc.epochs, tc.lr0, tc.restart_period, tc.restart_gamma),
        epochs: records,
        best_val_dice,
        test,
    };
    std::fs::write(
        out_dir.join("run_record.json"),
        serde_json::to_string_pretty(&run)?,
    )?;
    Ok(run)
}

pub fn evaluate<S: Scalar>(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
) -> Result<MetricReport> {
    let manifest: SplitManifest = data::read_manifest(data_dir)?;
    let ids = manifest.ids(split)?;
    let samples: Vec<SamplePair<S>> = data::load_samples(data_dir, ids)?;
    if samples.is_empty() {
        return Err(validation(format!("split `{split}` is empty")));
    }
    let (mut model, ..) = Checkpoint::<S>::load(checkpoint)?.into_model()?;
    evaluate_samples(&mut model, &samples)
}

/// Reflect-pads trailing spatial dims up to multiples of `div`.
fn pad_to_multiple<S: Scalar>(a: &Array2<S>, div: usize) -> (Array2<S>, (usize, usize)) {
    let (h, w) = a.dim();
    let ph = h.div_ceil(div) * div;
    let pw = w.div_ceil(div) * div;
    if (ph, pw) == (h, w) {
        return (a.clone(), (h, w));
    }
    let mut out = Array2::<S>::zeros((ph, pw));
    let reflect = |i: usize, n: usize| {
        if i < n {
            i
        } else {
            // mirror without repeating the border sample
            n - 2 - (i - n) % n.saturating_sub(1).max(1)
        }
    };
    for y in 0..ph {
        for x in 0..pw {
            out[[y, x]] = a[[reflect(y, h), reflect(x, w)]];
        }
    }
    (out, (h, w))
}

/// Segments one image file, writing `{stem}_mask.png` and
/// `{stem}_overlay.png` into `out_dir`.
pub fn predict<S: Scalar>(checkpoint: &Path, input: &Path, out_dir: &Path) -> Result<()> {
    let (mut model, ..) = Checkpoint::<S>::load(checkpoint)?.into_model()?;
    let image: Array2<S> = data::load_gray(input)?;
    let div = model.cfg.required_divisor();
    let (padded, (h, w)) = pad_to_multiple(&image, div);
    let (ph, pw) = padded.dim();
    let batch = padded
        .clone()
        .into_shape_with_order(IxDyn(&[1, 1, ph, pw]))
        .expect("batch reshape");
    let pred = model.infer(&batch)?;
    let mut mask = Array2::<S>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            mask[[y, x]] = if pred[[0, 0, y, x]].to_f64_() >= 0.5 {
                S::one()
            } else {
                S::zero()
            };
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("prediction");
    data::save_gray(&out_dir.join(format!("{stem}_mask.png")), &mask)?;

    // overlay: input in gray, predicted boundary in red
    let mut overlay = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let g = (image[[y, x]].to_f64_().clamp(0.0, 1.0) * 255.0).round() as u8;
            let on = mask[[y, x]] == S::one();
            let boundary = on
                && [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    ny < 0
                        || nx < 0
                        || ny >= h as i64
                        || nx >= w as i64
                        || mask[[ny as usize, nx as usize]] == S::zero()
                });
            let px = if boundary {
                image::Rgb([255, 0, 0])
            } else {
                image::Rgb([g, g, g])
            };
            overlay.put_pixel(x as u32, y as u32, px);
        }
    }
    overlay.save(out_dir.join(format!("{stem}_overlay.png")))?;
    Ok(())
}
