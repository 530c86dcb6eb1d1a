//! Patient-stratified splitting: no patient's images cross split boundaries.

use super::SplitManifest;
use crate::error::{validation, Result};
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shuffles patients with the seed, then assigns each patient greedily to
/// the split whose image-count deficit against its target is largest.
pub fn stratified_split(
    samples: &[(String, String)], // (sample id, patient id)
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    let rsum = ratios.0 + ratios.1 + ratios.2;
    if (rsum - 1.0).abs() > 1e-9 {
        return Err(validation(format!("split ratios must sum to 1, got {rsum}")));
    }
    if ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(validation("split ratios must be nonnegative"));
    }
    let mut by_patient: IndexMap<String, Vec<String>> = IndexMap::new();
    for (id, patient) in samples {
        by_patient.entry(patient.clone()).or_default().push(id.clone());
    }
    let targets = [ratios.0, ratios.1, ratios.2];
    let active = targets.iter().filter(|&&r| r > 0.0).count();
    if by_patient.len() < active {
        return Err(validation(format!(
            "{} patients cannot fill {} nonempty splits",
            by_patient.len(),
            active
        )));
    }

    let mut order: Vec<usize> = (0..by_patient.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fisher_yates(&mut order, &mut rng);

    let total = samples.len() as f64;
    let mut assigned = [0usize; 3];
    let mut splits: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &pi in &order {
        let (_, ids) = by_patient.get_index(pi).expect("index in range");
        let pick = (0..3)
            .filter(|&s| targets[s] > 0.0)
            .max_by(|&a, &b| {
                let da = targets[a] * total - assigned[a] as f64;
                let db = targets[b] * total - assigned[b] as f64;
                da.partial_cmp(&db).expect("finite deficits")
            })
            .expect("at least one active split");
        assigned[pick] += ids.len();
        splits[pick].extend(ids.iter().cloned());
    }
    let [train, val, test] = splits;
    Ok(SplitManifest {
        ratios,
        seed,
        train,
        val,
        test,
    })
}

pub fn fisher_yates<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}
