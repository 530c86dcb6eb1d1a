//! Dataset plumbing: synthetic phantoms, real-image ingestion, and
//! patient-stratified splitting.

pub mod ingest;
pub mod phantom;
pub mod split;

use crate::error::{validation, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Phantom,
    Imported,
}

/// One normalized image/mask pair.
#[derive(Clone, Debug)]
pub struct SamplePair<S: Scalar> {
    pub id: String,
    pub patient_id: String,
    pub source: Source,
    /// Single channel, values in [0,1].
    pub image: Array2<S>,
    /// Strictly binary {0,1}.
    pub mask: Array2<S>,
}

impl<S: Scalar> SamplePair<S> {
    pub fn validate(&self) -> Result<()> {
        if self.image.dim() != self.mask.dim() {
            return Err(validation(format!(
                "sample `{}`: image {:?} vs mask {:?}",
                self.id,
                self.image.dim(),
                self.mask.dim()
            )));
        }
        for &v in self.mask.iter() {
            if v != S::zero() && v != S::one() {
                return Err(validation(format!("sample `{}`: mask is not binary", self.id)));
            }
        }
        Ok(())
    }
}

/// Sample identifiers per split plus the parameters that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn ids(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(validation(format!("unknown split `{other}`"))),
        }
    }
}

/// Writes a sample store: `images/{id}.png`, `masks/{id}.png`.
pub fn write_samples<S: Scalar>(dir: &Path, samples: &[SamplePair<S>]) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for s in samples {
        save_gray(&images.join(format!("{}.png", s.id)), &s.image)?;
        save_gray(&masks.join(format!("{}.png", s.id)), &s.mask)?;
    }
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &SplitManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the listed samples back from a store directory.
pub fn load_samples<S: Scalar>(dir: &Path, ids: &[String]) -> Result<Vec<SamplePair<S>>> {
    ids.iter()
        .map(|id| {
            let image = load_gray(&dir.join("images").join(format!("{id}.png")))?;
            let mask_raw: Array2<S> = load_gray(&dir.join("masks").join(format!("{id}.png")))?;
            let mask = mask_raw.mapv(|v| if v > S::zero() { S::one() } else { S::zero() });
            let patient_id = patient_of(id);
            Ok(SamplePair {
                id: id.clone(),
                patient_id,
                source: Source::Imported,
                image,
                mask,
            })
        })
        .collect()
}

/// Patient identity from a sample stem: the prefix before the last `_`
/// (slice index), or the whole stem when there is none.
pub fn patient_of(id: &str) -> String {
    match id.rfind('_') {
        Some(pos) => id[..pos].to_string(),
        None => id.to_string(),
    }
}

pub fn save_gray<S: Scalar>(path: &Path, a: &Array2<S>) -> Result<()> {
    let (h, w) = a.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in a.indexed_iter() {
        let p = (v.to_f64_().clamp(0.0, 1.0) * 255.0).round() as u8;
        buf.put_pixel(x as u32, y as u32, image::Luma([p]));
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_gray<S: Scalar>(path: &Path) -> Result<Array2<S>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut a = Array2::<S>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        a[[y as usize, x as usize]] = S::from_f64(p.0[0] as f64 / 255.0);
    }
    Ok(a)
}
