//! Deterministic synthetic phantoms: a lesion shape over sinusoidal tissue
//! texture, with optional boundary blur and additive noise.

use super::{SamplePair, Source};
use crate::error::{validation, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LesionShape {
    Crescent,
    Ellipse,
    AnnularRing,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub canvas: usize,
    pub shape: LesionShape,
    pub lesion_mean: f64,
    pub lesion_std: f64,
    pub background_mean: f64,
    pub background_std: f64,
    /// Gaussian boundary blur sigma in pixels; 0 disables.
    pub blur_radius: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lesion_mean", self.lesion_mean),
            ("background_mean", self.background_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(validation(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.blur_radius < 0.0 || self.noise_std < 0.0 {
            return Err(validation("blur radius and noise std must be >= 0"));
        }
        if self.canvas < 16 {
            return Err(validation(format!(
                "canvas {} too small for a lesion",
                self.canvas
            )));
        }
        Ok(())
    }
}

/// Renders one phantom. Identical specs produce bit-identical pairs.
pub fn generate_phantom<S: Scalar>(spec: &PhantomSpec, id: &str) -> Result<SamplePair<S>> {
    spec.validate()?;
    let n = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = render_mask(spec, &mut rng)?;

    // low-frequency tissue texture so lesion/background gray levels overlap
    let fx = rng.random_range(1.0..3.0) / n as f64;
    let fy = rng.random_range(1.0..3.0) / n as f64;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let lesion_noise = gaussian_field(n, spec.lesion_std, &mut rng);
    let bg_noise = gaussian_field(n, spec.background_std, &mut rng);
    let mut img = Array2::<f64>::zeros((n, n));
    for ((y, x), v) in img.indexed_iter_mut() {
        let tex = (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
        let bg = spec.background_mean + spec.background_std * (0.5 * tex + bg_noise[[y, x]]);
        let lesion = spec.lesion_mean + lesion_noise[[y, x]];
        *v = if mask[[y, x]] > 0.5 { lesion } else { bg };
    }
    if spec.blur_radius > 0.0 {
        img = gaussian_blur(&img, spec.blur_radius);
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("valid noise std");
        img.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(SamplePair {
        id: id.to_string(),
        patient_id: super::patient_of(id),
        source: Source::Phantom,
        image: img.mapv(S::from_f64),
        mask: mask.mapv(S::from_f64),
    })
}

/// A batch of phantoms with varied shapes, ids `p{k}_0`.
pub fn generate_set<S: Scalar>(
    count: usize,
    canvas: usize,
    blur_radius: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SamplePair<S>>> {
    let shapes = [LesionShape::Crescent, LesionShape::Ellipse, LesionShape::AnnularRing];
    (0..count)
        .map(|k| {
            let spec = PhantomSpec {
                canvas,
                shape: shapes[k % shapes.len()],
                lesion_mean: 0.75,
                lesion_std: 0.05,
                background_mean: 0.35,
                background_std: 0.08,
                blur_radius,
                noise_std,
                seed: seed.wrapping_add(k as u64),
            };
            generate_phantom(&spec, &format!("p{k:04}_0"))
        })
        .collect()
}

fn render_mask(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let n = spec.canvas as f64;
    let cx = rng.random_range(0.35 * n..0.65 * n);
    let cy = rng.random_range(0.35 * n..0.65 * n);
    let r = rng.random_range(0.12 * n..0.22 * n);
    if cx - r < 1.0 || cy - r < 1.0 || cx + r > n - 1.0 || cy + r > n - 1.0 {
        return Err(validation("lesion exceeds canvas"));
    }
    let rot: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let aspect = rng.random_range(0.5..0.9);
    let mut mask = Array2::<f64>::zeros((spec.canvas, spec.canvas));
    let inside = |y: f64, x: f64| -> bool {
        let dx = x - cx;
        let dy = y - cy;
        match spec.shape {
            LesionShape::Ellipse => {
                let u = dx * rot.cos() + dy * rot.sin();
                let v = -dx * rot.sin() + dy * rot.cos();
                (u / r).powi(2) + (v / (r * aspect)).powi(2) <= 1.0
            }
            LesionShape::Crescent => {
                let off = 0.45 * r;
                let in_outer = dx * dx + dy * dy <= r * r;
                let bx = dx - off * rot.cos();
                let by = dy - off * rot.sin();
                let in_bite = bx * bx + by * by <= (0.8 * r).powi(2);
                in_outer && !in_bite
            }
            LesionShape::AnnularRing => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (aspect * 0.6 * r).powi(2)
            }
        }
    };
    for ((y, x), v) in mask.indexed_iter_mut() {
        if inside(y as f64, x as f64) {
            *v = 1.0;
        }
    }
    Ok(mask)
}

fn gaussian_field(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if std == 0.0 {
        return Array2::zeros((n, n));
    }
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((n, n), || normal.sample(rng))
}

/// Separable Gaussian blur with edge clamping, truncated at 3 sigma.
pub fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-(d * d) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= ksum;
    }
    let (h, w) = a.dim();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = clampi(x as isize + i as isize - radius, w);
                acc += k * a[[y, sx]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = clampi(y as isize + i as isize - radius, h);
                acc += k * rows[[sy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}
