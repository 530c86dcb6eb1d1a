use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dbif_aunet::biaf::FusionMode;
use dbif_aunet::data;
use dbif_aunet::losses::LossHyperParams;
use dbif_aunet::network::{Ablation, NetworkConfig};
use dbif_aunet::trainer::{self, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dbif-aunet", about = "Dual-branch fusion attention U-Net tooling", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// full | no-ddfd-biaf | no-ds
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset directory (overrides `data_dir` in the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | val | test
        #[arg(long)]
        split: String,
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        manifest: PathBuf,
        /// Write the full report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Segment a single image, writing mask and overlay files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic phantom dataset with a split manifest.
    GeneratePhantoms {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        blur: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
    },
    /// Ingest paired image/mask directories into a normalized dataset.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flat config file: every field of the train/network/loss configs as a
/// top-level key. CLI flags override file values.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    // training
    lr0: Option<f64>,
    momentum: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    restart_period: Option<usize>,
    restart_gamma: Option<f64>,
    seed: Option<u64>,
    checkpoint_every: Option<usize>,
    // network
    depth: Option<usize>,
    base_channels: Option<usize>,
    input_channels: Option<usize>,
    fusion_mode: Option<String>,
    ablation: Option<String>,
    attn_token_cap: Option<usize>,
    // loss
    lambda_dice: Option<f64>,
    lambda_focal: Option<f64>,
    lambda_bce: Option<f64>,
    focal_alpha: Option<f64>,
    focal_gamma: Option<f64>,
    smooth_eps: Option<f64>,
    clamp_eps: Option<f64>,
    ds_scale: Option<f64>,
    s_factor: Option<f64>,
    u_factor: Option<f64>,
    // paths / precision
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    precision: Option<String>,
}

fn parse_ablation(s: &str) -> anyhow::Result<Ablation> {
    match s {
        "full" => Ok(Ablation::Full),
        "no-ddfd-biaf" | "no_ddfd_biaf" => Ok(Ablation::NoDdfdBiaf),
        "no-ds" | "no_nested_ds" => Ok(Ablation::NoNestedDs),
        other => bail!("unknown ablation `{other}`"),
    }
}

fn parse_ratios(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad ratios `{s}`"))?;
    if parts.len() != 3 {
        bail!("ratios must be three comma-separated numbers, got `{s}`");
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn build_configs(
    fc: &FileConfig,
) -> anyhow::Result<(TrainConfig, NetworkConfig, LossHyperParams)> {
    let mut tc = TrainConfig::default();
    if let Some(v) = fc.lr0 {
        tc.lr0 = v;
    }
    if let Some(v) = fc.momentum {
        tc.momentum = v;
    }
    if let Some(v) = fc.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = fc.epochs {
        tc.epochs = v;
    }
    if let Some(v) = fc.restart_period {
        tc.restart_period = v;
    }
    if let Some(v) = fc.restart_gamma {
        tc.restart_gamma = v;
    }
    if let Some(v) = fc.seed {
        tc.seed = v;
    }
    if let Some(v) = fc.checkpoint_every {
        tc.checkpoint_every = v;
    }

    let mut nc = NetworkConfig::default();
    if let Some(v) = fc.depth {
        nc.depth = v;
    }
    if let Some(v) = fc.base_channels {
        nc.base_channels = v;
    }
    if let Some(v) = fc.input_channels {
        nc.input_channels = v;
    }
    if let Some(v) = &fc.fusion_mode {
        nc.fusion_mode = v.parse::<FusionMode>()?;
    }
    if let Some(v) = &fc.ablation {
        nc.ablation = parse_ablation(v)?;
    }
    if let Some(v) = fc.attn_token_cap {
        nc.attn_token_cap = v;
    }

    let mut h = LossHyperParams::default();
    if let Some(v) = fc.lambda_dice {
        h.lambda_dice = v;
    }
    if let Some(v) = fc.lambda_focal {
        h.lambda_focal = v;
    }
    if let Some(v) = fc.lambda_bce {
        h.lambda_bce = v;
    }
    if let Some(v) = fc.focal_alpha {
        h.focal_alpha = v;
    }
    if let Some(v) = fc.focal_gamma {
        h.focal_gamma = v;
    }
    if let Some(v) = fc.smooth_eps {
        h.smooth_eps = v;
    }
    if let Some(v) = fc.clamp_eps {
        h.clamp_eps = v;
    }
    if let Some(v) = fc.ds_scale {
        h.ds_scale = v;
    }
    if let Some(v) = fc.s_factor {
        h.s_factor = v;
    }
    if let Some(v) = fc.u_factor {
        h.u_factor = v;
    }
    Ok((tc, nc, h))
}

fn write_dataset(
    out: &Path,
    samples: Vec<dbif_aunet::SamplePair64>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> anyhow::Result<()> {
    let keyed: Vec<(String, String)> = samples
        .iter()
        .map(|s| (s.id.clone(), s.patient_id.clone()))
        .collect();
    let manifest = data::split::stratified_split(&keyed, ratios, seed)?;
    std::fs::create_dir_all(out)?;
    data::write_samples(out, &samples)?;
    data::write_manifest(out, &manifest)?;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        samples.len(),
        out.display(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            ablation,
            seed,
            out,
            data,
            resume,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let fc: FileConfig = toml::from_str(&text)?;
            let (mut tc, mut nc, h) = build_configs(&fc)?;
            if let Some(a) = ablation {
                nc.ablation = parse_ablation(&a)?;
            }
            if let Some(s) = seed {
                tc.seed = s;
            }
            let data_dir = data
                .or(fc.data_dir)
                .context("no dataset directory: pass --data or set data_dir")?;
            let out_dir = out
                .or(fc.out_dir)
                .unwrap_or_else(|| PathBuf::from("runs/default"));
            let precision = fc.precision.as_deref().unwrap_or("f32");
            if trainer::deterministic_mode() {
                eprintln!("DBIF_DETERMINISTIC=1: single-threaded bit-reproducible run");
            }
            let run = match precision {
                "f32" => trainer::train::<f32>(nc, &tc, &h, &data_dir, &out_dir, resume.as_deref())?,
                "f64" => trainer::train::<f64>(nc, &tc, &h, &data_dir, &out_dir, resume.as_deref())?,
                other => bail!("precision must be f32 or f64, got `{other}`"),
            };
            println!(
                "trained {} epochs, {} parameters, best val Dice {:.4}",
                run.epochs.len(),
                run.param_count,
                run.best_val_dice
            );
            if let Some(test) = &run.test {
                println!("test: {}", test.percent_line());
            }
        }
        Command::Eval {
            checkpoint,
            split,
            manifest,
            json,
        } => {
            let report = trainer::evaluate::<f32>(&checkpoint, &manifest, &split)?;
            println!("{split}: {}", report.percent_line());
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Predict {
            checkpoint,
            input,
            out,
        } => {
            trainer::predict::<f32>(&checkpoint, &input, &out)?;
            println!("wrote mask and overlay to {}", out.display());
        }
        Command::GeneratePhantoms {
            count,
            size,
            seed,
            out,
            blur,
            noise,
            ratios,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let samples = data::phantom::generate_set::<f64>(count, size, blur, noise, seed)?;
            write_dataset(&out, samples, ratios, seed)?;
        }
        Command::Ingest {
            images,
            masks,
            out,
            ratios,
            seed,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let samples = data::ingest::ingest_dirs::<f64>(&images, &masks)?;
            write_dataset(&out, samples, ratios, seed)?;
        }
    }
    Ok(())
}
