use dbif_aunet::biaf::FusionMode;
use dbif_aunet::data::phantom::generate_set;
use dbif_aunet::data::split::stratified_split;
use dbif_aunet::data::{write_manifest, write_samples, SamplePair};
use dbif_aunet::losses::LossHyperParams;
use dbif_aunet::network::{Ablation, NetworkConfig};
use dbif_aunet::trainer::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let data = tempfile::tempdir().unwrap();
    let set: Vec<SamplePair<f64>> = generate_set(200, 64, 2.0, 0.05, 42).unwrap();
    write_samples(data.path(), &set).unwrap();
    let pairs: Vec<(String, String)> = set
        .iter()
        .map(|s| (s.id.clone(), s.patient_id.clone()))
        .collect();
    let manifest = stratified_split(&pairs, (0.8, 0.1, 0.1), 42).unwrap();
    write_manifest(data.path(), &manifest).unwrap();

    let base: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(16);
    let cap: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(256);
    let epochs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let net = NetworkConfig {
        depth: 4,
        base_channels: base,
        input_channels: 1,
        fusion_mode: FusionMode::Add,
        ablation: std::env::var("ABL").ok().and_then(|s| s.parse().ok()).unwrap_or(Ablation::Full),
        attn_token_cap: cap,
    };
    let tc = TrainConfig {
        lr0: 0.01,
        momentum: 0.9,
        batch_size: 8,
        epochs,
        restart_period: 20,
        restart_gamma: 0.5,
        seed: 42,
        checkpoint_every: 0,
    };
    let out = tempfile::tempdir().unwrap();
    if std::env::var("PROF").is_ok() {
        *dbif_aunet::tape::PROF.lock().unwrap() = Some(Default::default());
    }
    let t0 = Instant::now();
    let run = train::<f64>(net, &tc, &LossHyperParams::default(), data.path(), out.path(), None)
        .unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "base {base} cap {cap}: {epochs} epochs in {dt:.1}s ({:.1}s/epoch)",
        dt / epochs as f64
    );
    for e in &run.epochs {
        println!(
            "  epoch {} loss {:.4} val dice {:.4}",
            e.epoch, e.mean_train_loss, e.val.dice
        );
    }
    if let Some(t) = &run.test {
        println!("  test dice {:.4}", t.dice);
    }
    if let Some(map) = dbif_aunet::tape::PROF.lock().unwrap().as_ref() {
        let mut v: Vec<_> = map.iter().collect();
        v.sort_by(|a, b| b.1 .0.partial_cmp(&a.1 .0).unwrap());
        for (name, (secs, n)) in v.iter().take(20) {
            println!("{secs:8.2}s {n:8} {name}");
        }
    }
}
