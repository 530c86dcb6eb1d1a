//! Real-data ingestion: HSV mask extraction, stem pairing, normalization.

use super::{SamplePair, Source};
use crate::error::{validation, Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::path::Path;

/// HSV thresholds for the red effusion annotation, with hue on the 8-bit
/// half-degree scale (0..=179).
pub const HUE_MAX: f64 = 10.0;
pub const SAT_MIN: f64 = 200.0;
pub const VAL_MIN: f64 = 200.0;

/// (H in 0..=179, S in 0..=255, V in 0..=255) from 8-bit RGB.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (rf, gf, bf) = (r as f64, g as f64, b as f64);
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let hue_deg = if delta == 0.0 {
        0.0
    } else if max == rf {
        60.0 * (((gf - bf) / delta).rem_euclid(6.0))
    } else if max == gf {
        60.0 * ((bf - rf) / delta + 2.0)
    } else {
        60.0 * ((rf - gf) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max * 255.0 };
    (hue_deg / 2.0, s, max)
}

/// Foreground iff H in [0,10], S in [200,255], V in [200,255].
pub fn extract_mask_hsv(img: &image::RgbImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    let mut out = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        let (hue, s, v) = rgb_to_hsv(p.0[0], p.0[1], p.0[2]);
        if hue <= HUE_MAX && s >= SAT_MIN && v >= VAL_MIN {
            out[[y as usize, x as usize]] = 255;
        }
    }
    out
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.to_string())
        .ok_or_else(|| validation(format!("bad file name {path:?}")))
}

/// Loads an image/mask file pair with matching stems into a normalized
/// sample. Color masks go through HSV extraction; grayscale masks are
/// binarized at > 0.
pub fn pair_and_normalize<S: Scalar>(image_path: &Path, mask_path: &Path) -> Result<SamplePair<S>> {
    let image_stem = stem(image_path)?;
    let mask_stem = stem(mask_path)?;
    if image_stem != mask_stem {
        return Err(Error::Pairing {
            image: image_path.display().to_string(),
            mask: mask_path.display().to_string(),
        });
    }
    let img = image::open(image_path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut image_arr = Array2::<S>::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        image_arr[[y as usize, x as usize]] = S::from_f64(p.0[0] as f64 / 255.0);
    }

    let mask_dyn = image::open(mask_path)?;
    let mask_u8 = match &mask_dyn {
        image::DynamicImage::ImageLuma8(m) => {
            let (mw, mh) = m.dimensions();
            let mut out = Array2::<u8>::zeros((mh as usize, mw as usize));
            for (x, y, p) in m.enumerate_pixels() {
                out[[y as usize, x as usize]] = p.0[0];
            }
            out
        }
        _ => extract_mask_hsv(&mask_dyn.to_rgb8()),
    };
    if mask_u8.dim() != image_arr.dim() {
        return Err(validation(format!(
            "`{image_stem}`: image {:?} vs mask {:?}",
            image_arr.dim(),
            mask_u8.dim()
        )));
    }
    let mask = mask_u8.mapv(|v| if v > 0 { S::one() } else { S::zero() });
    Ok(SamplePair {
        id: image_stem.clone(),
        patient_id: super::patient_of(&image_stem),
        source: Source::Imported,
        image: image_arr,
        mask,
    })
}

/// Ingests two directories of matching-stem files, sorted for determinism.
pub fn ingest_dirs<S: Scalar>(images: &Path, masks: &Path) -> Result<Vec<SamplePair<S>>> {
    let mut image_files: Vec<_> = std::fs::read_dir(images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    image_files.sort();
    image_files
        .into_iter()
        .map(|img| {
            let s = stem(&img)?;
            let mask = find_by_stem(masks, &s).ok_or_else(|| Error::Pairing {
                image: img.display().to_string(),
                mask: format!("{}/{s}.*", masks.display()),
            })?;
            pair_and_normalize(&img, &mask)
        })
        .collect()
}

fn find_by_stem(dir: &Path, wanted: &str) -> Option<std::path::PathBuf> {
    let mut matches: Vec<_> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s == wanted)
        })
        .collect();
    matches.sort();
    matches.into_iter().next()
}
