//! Phantom generation, mask extraction, patient-level splitting and the
//! on-disk sample store.

use dbif_aunet::data::ingest::{extract_mask_hsv, ingest_dirs, pair_and_normalize, rgb_to_hsv};
use dbif_aunet::data::phantom::{
    gaussian_blur, generate_phantom, generate_set, LesionShape, PhantomSpec,
};
use dbif_aunet::data::split::stratified_split;
use dbif_aunet::data::{
    load_samples, patient_of, read_manifest, write_manifest, write_samples, SamplePair, Source,
};
use ndarray::Array2;
use proptest::prelude::*;
use std::collections::HashSet;

fn spec(shape: LesionShape, seed: u64) -> PhantomSpec {
    PhantomSpec {
        canvas: 64,
        shape,
        lesion_mean: 0.75,
        lesion_std: 0.05,
        background_mean: 0.35,
        background_std: 0.08,
        blur_radius: 2.0,
        noise_std: 0.05,
        seed,
    }
}

#[test]
fn phantom_generation_is_deterministic() {
    for shape in [LesionShape::Crescent, LesionShape::Ellipse, LesionShape::AnnularRing] {
        let a: SamplePair<f64> = generate_phantom(&spec(shape, 7), "p0000_0").unwrap();
        let b: SamplePair<f64> = generate_phantom(&spec(shape, 7), "p0000_0").unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        let c: SamplePair<f64> = generate_phantom(&spec(shape, 8), "p0000_0").unwrap();
        assert_ne!(a.image, c.image);
        a.validate().unwrap();
        assert_eq!(a.source, Source::Phantom);
    }
}

#[test]
fn phantom_values_in_range_and_mask_binary() {
    let s: SamplePair<f64> = generate_phantom(&spec(LesionShape::Crescent, 3), "p0").unwrap();
    assert_eq!(s.image.dim(), (64, 64));
    assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    let area: f64 = s.mask.sum();
    assert!(area > 0.0, "lesion must be nonempty");
    assert!(area < (64 * 64) as f64, "lesion must not fill the canvas");
}

#[test]
fn phantom_lesion_contrast_is_statistical() {
    // lesion pixels should average clearly brighter than background while
    // the noise keeps the two gray-level populations overlapping
    let s: SamplePair<f64> = generate_phantom(&spec(LesionShape::Ellipse, 11), "p0").unwrap();
    let (mut les, mut bg) = (Vec::new(), Vec::new());
    for (v, m) in s.image.iter().zip(s.mask.iter()) {
        if *m > 0.5 {
            les.push(*v);
        } else {
            bg.push(*v);
        }
    }
    let ml: f64 = les.iter().sum::<f64>() / les.len() as f64;
    let mb: f64 = bg.iter().sum::<f64>() / bg.len() as f64;
    assert!(ml - mb > 0.2, "contrast too small: lesion {ml} vs bg {mb}");
    assert!(ml < 0.95 && mb > 0.05);
    // overlap: the brightest background pixel beats the darkest lesion pixel
    let les_min = les.iter().cloned().fold(f64::INFINITY, f64::min);
    let bg_max = bg.iter().cloned().fold(0.0f64, f64::max);
    assert!(bg_max > les_min, "gray levels must overlap under noise");
}

#[test]
fn clean_phantom_separates_perfectly() {
    // blur 0, noise 0: thresholding the image at the midpoint recovers the
    // mask exactly, the regime where near-perfect training Dice is expected
    let mut sp = spec(LesionShape::AnnularRing, 5);
    sp.blur_radius = 0.0;
    sp.noise_std = 0.0;
    sp.lesion_std = 0.0;
    sp.background_std = 0.0;
    let s: SamplePair<f64> = generate_phantom(&sp, "p0").unwrap();
    for (v, m) in s.image.iter().zip(s.mask.iter()) {
        let predicted = if *v >= 0.55 { 1.0 } else { 0.0 };
        assert_eq!(predicted, *m);
    }
}

#[test]
fn phantom_set_ids_and_shapes_cycle() {
    let set: Vec<SamplePair<f32>> = generate_set(6, 32, 1.0, 0.02, 42).unwrap();
    assert_eq!(set.len(), 6);
    assert_eq!(set[0].id, "p0000_0");
    assert_eq!(set[5].id, "p0005_0");
    let ids: HashSet<_> = set.iter().map(|s| &s.id).collect();
    assert_eq!(ids.len(), 6);
    for s in &set {
        assert_eq!(s.patient_id, patient_of(&s.id));
        s.validate().unwrap();
    }
    // determinism across calls
    let again: Vec<SamplePair<f32>> = generate_set(6, 32, 1.0, 0.02, 42).unwrap();
    for (a, b) in set.iter().zip(&again) {
        assert_eq!(a.image, b.image);
    }
}

#[test]
fn phantom_rejects_bad_specs() {
    let mut sp = spec(LesionShape::Ellipse, 0);
    sp.canvas = 8;
    assert!(generate_phantom::<f64>(&sp, "x").is_err());
    let mut sp = spec(LesionShape::Ellipse, 0);
    sp.lesion_mean = 1.5;
    assert!(generate_phantom::<f64>(&sp, "x").is_err());
    let mut sp = spec(LesionShape::Ellipse, 0);
    sp.noise_std = -0.1;
    assert!(generate_phantom::<f64>(&sp, "x").is_err());
}

#[test]
fn gaussian_blur_preserves_mass_and_smooths() {
    let mut a = Array2::<f64>::zeros((21, 21));
    a[[10, 10]] = 1.0;
    let b = gaussian_blur(&a, 2.0);
    // interior impulse: kernel support well inside, mass preserved
    assert!((b.sum() - 1.0).abs() < 1e-9);
    assert!(b[[10, 10]] < 1.0 && b[[10, 10]] > b[[10, 5]]);
    // symmetry of the response
    assert!((b[[10, 8]] - b[[10, 12]]).abs() < 1e-12);
    assert!((b[[8, 10]] - b[[12, 10]]).abs() < 1e-12);
}

#[test]
fn hsv_conversion_examples() {
    // pure red: hue 0 on the half-degree scale, full saturation/value
    assert_eq!(rgb_to_hsv(255, 0, 0), (0.0, 255.0, 255.0));
    // pure blue sits at 240 degrees -> 120 on the 0-179 scale
    let (h, s, v) = rgb_to_hsv(0, 0, 255);
    assert_eq!((h, s, v), (120.0, 255.0, 255.0));
    // gray has no saturation
    let (_, s, v) = rgb_to_hsv(128, 128, 128);
    assert_eq!(s, 0.0);
    assert_eq!(v, 128.0);
}

#[test]
fn red_annotation_extraction() {
    let mut img = image::RgbImage::from_pixel(8, 8, image::Rgb([30, 30, 30]));
    img.put_pixel(2, 3, image::Rgb([255, 0, 0])); // bright red: annotated
    img.put_pixel(4, 4, image::Rgb([250, 20, 10])); // slightly off red: still in
    img.put_pixel(5, 5, image::Rgb([120, 0, 0])); // dark red: value too low
    img.put_pixel(6, 6, image::Rgb([255, 200, 200])); // pale pink: unsaturated
    img.put_pixel(7, 1, image::Rgb([0, 0, 255])); // blue: wrong hue
    let m = extract_mask_hsv(&img);
    assert_eq!(m[[3, 2]], 255);
    assert_eq!(m[[4, 4]], 255);
    assert_eq!(m[[5, 5]], 0);
    assert_eq!(m[[6, 6]], 0);
    assert_eq!(m[[1, 7]], 0);
    assert_eq!(m.iter().filter(|&&v| v == 255).count(), 2);
}

#[test]
fn pairing_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let masks = dir.path().join("masks");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();

    let img = image::GrayImage::from_fn(16, 16, |x, y| image::Luma([((x + y) * 8) as u8]));
    img.save(images.join("case1_0.png")).unwrap();
    let mut mask = image::GrayImage::new(16, 16);
    for y in 4..8 {
        for x in 4..8 {
            mask.put_pixel(x, y, image::Luma([255]));
        }
    }
    mask.save(masks.join("case1_0.png")).unwrap();

    let s: SamplePair<f64> =
        pair_and_normalize(&images.join("case1_0.png"), &masks.join("case1_0.png")).unwrap();
    assert_eq!(s.id, "case1_0");
    assert_eq!(s.patient_id, "case1");
    assert!((s.image[[1, 1]] - 16.0 / 255.0).abs() < 1e-12);
    assert_eq!(s.mask[[5, 5]], 1.0);
    assert_eq!(s.mask[[0, 0]], 0.0);

    // stem mismatch is a pairing error
    mask.save(masks.join("case2_0.png")).unwrap();
    let err = pair_and_normalize::<f64>(&images.join("case1_0.png"), &masks.join("case2_0.png"));
    assert!(matches!(err, Err(dbif_aunet::error::Error::Pairing { .. })));

    // directory ingest pairs by stem and sorts
    let img2 = image::GrayImage::new(16, 16);
    img2.save(images.join("case2_0.png")).unwrap();
    let all: Vec<SamplePair<f64>> = ingest_dirs(&images, &masks).unwrap();
    assert_eq!(all.len(), 2);
    assert_eq!(all[0].id, "case1_0");
    assert_eq!(all[1].id, "case2_0");
}

#[test]
fn patient_grouping_from_ids() {
    assert_eq!(patient_of("p0003_2"), "p0003");
    assert_eq!(patient_of("case_17_slice_4"), "case_17_slice");
    assert_eq!(patient_of("solo"), "solo");
}

#[test]
fn stratified_split_partitions_patients() {
    // 10 patients x 3 slices
    let mut samples = Vec::new();
    for p in 0..10 {
        for s in 0..3 {
            samples.push((format!("p{p:04}_{s}"), format!("p{p:04}")));
        }
    }
    let m = stratified_split(&samples, (0.8, 0.1, 0.1), 5).unwrap();
    let all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
    assert_eq!(all.len(), 30);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 30);
    // patient disjointness across splits
    let pats = |ids: &[String]| -> HashSet<String> { ids.iter().map(|i| patient_of(i)).collect() };
    let (tr, va, te) = (pats(&m.train), pats(&m.val), pats(&m.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!(tr.len(), 8);
    assert_eq!(va.len(), 1);
    assert_eq!(te.len(), 1);
    // determinism and seed sensitivity
    let m2 = stratified_split(&samples, (0.8, 0.1, 0.1), 5).unwrap();
    assert_eq!(m.train, m2.train);
    let m3 = stratified_split(&samples, (0.8, 0.1, 0.1), 6).unwrap();
    assert!(m.train != m3.train || m.val != m3.val || m.test != m3.test);
}

#[test]
fn split_error_cases() {
    let samples = vec![("a_0".to_string(), "a".to_string())];
    assert!(stratified_split(&samples, (0.5, 0.4, 0.2), 0).is_err());
    // fewer patients than active splits
    assert!(stratified_split(&samples, (0.8, 0.1, 0.1), 0).is_err());
    // one patient, train-only split is fine
    assert!(stratified_split(&samples, (1.0, 0.0, 0.0), 0).is_ok());
}

#[test]
fn store_roundtrip_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let set: Vec<SamplePair<f64>> = generate_set(4, 32, 1.0, 0.03, 9).unwrap();
    write_samples(dir.path(), &set).unwrap();
    let pairs: Vec<(String, String)> = set
        .iter()
        .map(|s| (s.id.clone(), s.patient_id.clone()))
        .collect();
    let manifest = stratified_split(&pairs, (0.5, 0.25, 0.25), 0).unwrap();
    write_manifest(dir.path(), &manifest).unwrap();
    let back = read_manifest(dir.path()).unwrap();
    assert_eq!(back.train, manifest.train);
    assert_eq!(back.seed, manifest.seed);

    let ids: Vec<String> = set.iter().map(|s| s.id.clone()).collect();
    let loaded: Vec<SamplePair<f64>> = load_samples(dir.path(), &ids).unwrap();
    for (orig, l) in set.iter().zip(&loaded) {
        assert_eq!(l.id, orig.id);
        // masks are exactly recovered; images are 8-bit quantized
        assert_eq!(l.mask, orig.mask);
        let err = (&l.image - &orig.image)
            .mapv(f64::abs)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12, "quantization err {err}");
    }
    // second write/load cycle is exact: already quantized values are fixed
    write_samples(dir.path(), &loaded).unwrap();
    let twice: Vec<SamplePair<f64>> = load_samples(dir.path(), &ids).unwrap();
    for (a, b) in loaded.iter().zip(&twice) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_split_partition(seed in 0u64..500, np in 10usize..30) {
        let samples: Vec<(String, String)> = (0..np)
            .flat_map(|p| (0..2).map(move |s| (format!("p{p}_{s}"), format!("p{p}"))))
            .collect();
        let m = stratified_split(&samples, (0.8, 0.1, 0.1), seed).unwrap();
        let total = m.train.len() + m.val.len() + m.test.len();
        prop_assert_eq!(total, samples.len());
        let pats = |ids: &[String]| -> HashSet<String> {
            ids.iter().map(|i| patient_of(i)).collect()
        };
        let (tr, va, te) = (pats(&m.train), pats(&m.val), pats(&m.test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert!(!m.train.is_empty() && !m.val.is_empty() && !m.test.is_empty());
    }

    #[test]
    fn prop_phantoms_valid(seed in 0u64..200) {
        let s: SamplePair<f64> =
            generate_phantom(&spec(LesionShape::Crescent, seed), "p").unwrap();
        prop_assert!(s.validate().is_ok());
        prop_assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(s.mask.sum() > 0.0);
    }
}
