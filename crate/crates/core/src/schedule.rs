//! Cosine-annealing learning-rate schedule with fixed-length restarts.

/// Within cycle `k` (each of `period` epochs) the rate follows
/// `peak_k * (1 + cos(pi t / period)) / 2` with `peak_k = lr0 * gamma^k`.
pub fn lr_schedule(epoch: usize, lr0: f64, period: usize, gamma: f64) -> f64 {
    assert!(period >= 1, "restart period must be >= 1");
    let cycle = epoch / period;
    let t = (epoch % period) as f64;
    let peak = lr0 * gamma.powi(cycle as i32);
    peak * (1.0 + (std::f64::consts::PI * t / period as f64).cos()) / 2.0
}

/// Full per-epoch trace for a run of `epochs` epochs.
pub fn lr_trace(epochs: usize, lr0: f64, period: usize, gamma: f64) -> Vec<f64> {
    (0..epochs).map(|e| lr_schedule(e, lr0, period, gamma)).collect()
}
