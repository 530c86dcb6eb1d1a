//! Oracle checks for the spectral primitives: direct-sum DCT and Haar
//! references, roundtrips, energy preservation and band partitions.

mod common;

use common::*;
use dbif_aunet::biaf::dft_matrices;
use dbif_aunet::ddfd::haar_matrix;
use dbif_aunet::spectral::{
    band_masks, band_split, dct2, dct_matrix, dwt2_haar, freq_channel_attention, gabor_kernel,
    idct2, idwt2_haar, strip_pool, GaborParams,
};
use ndarray::{Array1, Array2, Array4, Axis};
use proptest::prelude::*;

/// Direct O(N^2 M^2) type-II orthonormal 2-D DCT.
fn dct2_naive(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    for u in 0..h {
        for v in 0..w {
            let au = if u == 0 { (1.0 / h as f64).sqrt() } else { (2.0 / h as f64).sqrt() };
            let av = if v == 0 { (1.0 / w as f64).sqrt() } else { (2.0 / w as f64).sqrt() };
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x[[i, j]]
                        * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64
                            / (2.0 * h as f64))
                            .cos()
                        * (std::f64::consts::PI * (2 * j + 1) as f64 * v as f64
                            / (2.0 * w as f64))
                            .cos();
                }
            }
            out[[u, v]] = au * av * acc;
        }
    }
    out
}

fn plane(x: &Array4<f64>, n: usize, c: usize) -> Array2<f64> {
    x.index_axis(Axis(0), n)
        .index_axis(Axis(0), c)
        .to_owned()
}

#[test]
fn dct2_matches_direct_sum_oracle() {
    let mut r = rng(11);
    for &(h, w) in &[(1usize, 1usize), (2, 3), (4, 4), (5, 7), (8, 8), (16, 16), (16, 9)] {
        let x = random_array::<f64>(&[2, 2, h, w], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let f = dct2(&x).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                let oracle = dct2_naive(&plane(&x, n, c));
                let got = plane(&f, n, c);
                let err = (&oracle - &got).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
                assert!(err < 1e-8, "dct2 {h}x{w} max err {err}");
            }
        }
    }
}

#[test]
fn dct2_idct2_roundtrip() {
    let mut r = rng(12);
    for &(h, w) in &[(3usize, 5usize), (8, 8), (16, 16), (1, 16)] {
        let x = random_array::<f64>(&[1, 3, h, w], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let back = idct2(&dct2(&x).unwrap()).unwrap();
        let err = (&x - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(err < 1e-10, "roundtrip {h}x{w} max err {err}");
    }
}

#[test]
fn dct_is_orthonormal_and_energy_preserving() {
    for n in [1usize, 2, 5, 8, 16] {
        let d = dct_matrix::<f64>(n);
        let ident = d.dot(&d.t());
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ident[[i, j]] - expect).abs() < 1e-12, "D D^T != I at n={n}");
            }
        }
    }
    let mut r = rng(13);
    let x = random_array::<f64>(&[1, 1, 8, 16], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let f = dct2(&x).unwrap();
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let ef: f64 = f.iter().map(|v| v * v).sum();
    assert!((ex - ef).abs() < 1e-10 * ex.max(1.0), "Parseval: {ex} vs {ef}");
}

#[test]
fn band_masks_partition_and_split_sums_back() {
    let masks = band_masks::<f64>(8, 8, 0.25, 0.75).unwrap();
    let total = &masks[0] + &masks[1] + &masks[2];
    assert!(total.iter().all(|&v| v == 1.0), "masks must cover each bin once");
    assert_eq!(masks[0][[0, 0]], 1.0);
    assert_eq!(masks[2][[7, 7]], 1.0);

    let mut r = rng(14);
    let f = random_array::<f64>(&[2, 2, 8, 8], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let (lo, mid, hi) = band_split(&f, 0.25, 0.75).unwrap();
    let sum = &(&lo + &mid) + &hi;
    let err = (&sum - &f).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    assert!(err < 1e-15);
    assert!(band_masks::<f64>(4, 4, 0.75, 0.25).is_err());
    assert!(band_masks::<f64>(4, 4, 0.0, 0.5).is_err());
}

#[test]
fn haar_matches_block_oracle_and_inverts() {
    let mut r = rng(15);
    let x = random_array::<f64>(&[1, 2, 6, 8], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let bands = dwt2_haar(&x).unwrap();
    // direct 2x2 block reference: orthonormal Haar combines each block with
    // weight 1/2 per coefficient
    for ci in 0..2 {
        for i in 0..3 {
            for j in 0..4 {
                let a = x[[0, ci, 2 * i, 2 * j]];
                let b = x[[0, ci, 2 * i, 2 * j + 1]];
                let c = x[[0, ci, 2 * i + 1, 2 * j]];
                let d = x[[0, ci, 2 * i + 1, 2 * j + 1]];
                assert!((bands.ll[[0, ci, i, j]] - 0.5 * (a + b + c + d)).abs() < 1e-12);
                assert!((bands.lh[[0, ci, i, j]] - 0.5 * (a + b - c - d)).abs() < 1e-12);
                assert!((bands.hl[[0, ci, i, j]] - 0.5 * (a - b + c - d)).abs() < 1e-12);
                assert!((bands.hh[[0, ci, i, j]] - 0.5 * (a - b - c + d)).abs() < 1e-12);
            }
        }
    }
    let back = idwt2_haar(&bands).unwrap();
    let err = (&x - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    assert!(err < 1e-10);
    // energy preserved on even shapes
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let eb: f64 = [&bands.ll, &bands.lh, &bands.hl, &bands.hh]
        .iter()
        .map(|b| b.iter().map(|v| v * v).sum::<f64>())
        .sum();
    assert!((ex - eb).abs() < 1e-10 * ex.max(1.0));
}

#[test]
fn haar_odd_sizes_roundtrip() {
    let mut r = rng(16);
    for &(h, w) in &[(5usize, 7usize), (1, 4), (3, 3), (16, 15)] {
        let x = random_array::<f64>(&[1, 1, h, w], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let back = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
        assert_eq!(back.dim(), x.dim());
        let err = (&x - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(err < 1e-10, "odd roundtrip {h}x{w} err {err}");
    }
}

#[test]
fn haar_matrix_agrees_with_dwt_rows() {
    // applying the analysis matrices on both sides of a plane must equal the
    // corresponding band from the direct transform
    let mut r = rng(17);
    let x = random_array::<f64>(&[1, 1, 8, 8], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let low = haar_matrix::<f64>(8, false);
    let high = haar_matrix::<f64>(8, true);
    let p = plane(&x, 0, 0);
    let ll = low.dot(&p).dot(&low.t());
    let hh = high.dot(&p).dot(&high.t());
    let bands = dwt2_haar(&x).unwrap();
    let ell = (&ll - &plane(&bands.ll, 0, 0)).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    let ehh = (&hh - &plane(&bands.hh, 0, 0)).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    assert!(ell < 1e-12 && ehh < 1e-12, "ll {ell} hh {ehh}");
}

#[test]
fn dft_matrices_are_unitary() {
    for n in [1usize, 2, 3, 8, 16] {
        let (fr, fi) = dft_matrices::<f64>(n);
        // (Fr + i Fi)(Fr - i Fi)^T = I for a unitary symmetric DFT
        let re = fr.dot(&fr.t()) + fi.dot(&fi.t());
        let im = fi.dot(&fr.t()) - fr.dot(&fi.t());
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((re[[i, j]] - expect).abs() < 1e-12, "re n={n}");
                assert!(im[[i, j]].abs() < 1e-12, "im n={n}");
            }
        }
        // symmetry of the transform matrix
        assert!((&fr - &fr.t()).iter().all(|v| v.abs() < 1e-12));
        assert!((&fi - &fi.t()).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn gabor_kernel_examples() {
    let p = GaborParams {
        theta: 0.0,
        f: 0.25,
        gamma: 0.5,
        sigma: 2.0,
        phi: 0.0,
        size: 7,
    };
    let k = gabor_kernel(&p).unwrap();
    assert_eq!(k.dim(), (7, 7));
    // center pixel: envelope 1, cos(0) = 1
    assert!((k[[3, 3]] - 1.0).abs() < 1e-12);
    // theta = 0 propagates along rows; the center row is pure envelope
    for j in 0..7i64 {
        let dj = (j - 3) as f64;
        let env = (-(0.5f64 * 0.5 * dj * dj) / (2.0 * 2.0 * 2.0)).exp();
        assert!((k[[3, j as usize]] - env).abs() < 1e-12);
    }
    // even symmetry in the propagation direction when phi = 0
    for i in 0..7 {
        assert!((k[[i, 3]] - k[[6 - i, 3]]).abs() < 1e-12);
    }
    // a quarter-cycle frequency puts a zero crossing one pixel off center
    assert!(k[[2, 3]].abs() < 1e-12);

    assert!(gabor_kernel(&GaborParams { size: 6, ..p }).is_err());
    assert!(gabor_kernel(&GaborParams { size: 1, ..p }).is_err());
    assert!(gabor_kernel(&GaborParams { sigma: 0.0, ..p }).is_err());
    assert!(gabor_kernel(&GaborParams { f: 0.0, ..p }).is_err());
}

#[test]
fn strip_pool_matches_means() {
    let mut r = rng(18);
    let x = random_array::<f64>(&[2, 3, 4, 5], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let (yh, yv) = strip_pool(&x);
    assert_eq!(yh.dim(), (2, 3, 4, 1));
    assert_eq!(yv.dim(), (2, 3, 1, 5));
    for n in 0..2 {
        for c in 0..3 {
            for i in 0..4 {
                let m: f64 = (0..5).map(|j| x[[n, c, i, j]]).sum::<f64>() / 5.0;
                assert!((yh[[n, c, i, 0]] - m).abs() < 1e-12);
            }
            for j in 0..5 {
                let m: f64 = (0..4).map(|i| x[[n, c, i, j]]).sum::<f64>() / 4.0;
                assert!((yv[[n, c, 0, j]] - m).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fca_neutral_gate_halves_spectrum() {
    // zero weights and biases make the gate sigmoid(0) = 1/2 everywhere,
    // so the output is half the channel spectrum of the pooled input
    let mut r = rng(19);
    let c = 6;
    let x = random_array::<f64>(&[2, c, 3, 3], &mut r)
        .into_dimensionality::<ndarray::Ix4>()
        .unwrap();
    let w1 = Array2::<f64>::zeros((4, c));
    let w2 = Array2::<f64>::zeros((c, 4));
    let b1 = Array1::<f64>::zeros(4);
    let b2 = Array1::<f64>::zeros(c);
    let out = freq_channel_attention(&x, &w1, &w2, &b1, &b2).unwrap();
    let d = dct_matrix::<f64>(c);
    for n in 0..2 {
        let gap: Array1<f64> = (0..c)
            .map(|ci| x.index_axis(Axis(0), n).index_axis(Axis(0), ci).mean().unwrap())
            .collect();
        let spec = d.dot(&gap);
        for ci in 0..c {
            assert!((out[[n, ci]] - 0.5 * spec[ci]).abs() < 1e-12);
        }
    }
}

#[test]
fn fca_rejects_mismatched_weights() {
    let x = Array4::<f64>::zeros((1, 4, 2, 2));
    let w1 = Array2::<f64>::zeros((3, 5));
    let w2 = Array2::<f64>::zeros((4, 3));
    assert!(freq_channel_attention(&x, &w1, &w2, &Array1::zeros(3), &Array1::zeros(4)).is_err());
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut x = Array4::<f64>::zeros((1, 1, 4, 4));
    x[[0, 0, 1, 1]] = f64::NAN;
    assert!(dct2(&x).is_err());
    assert!(dwt2_haar(&x).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_dct_roundtrip(seed in 0u64..1000, h in 1usize..12, w in 1usize..12) {
        let mut r = rng(seed);
        let x = random_array::<f64>(&[1, 1, h, w], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let back = idct2(&dct2(&x).unwrap()).unwrap();
        let err = (&x - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn prop_haar_roundtrip(seed in 0u64..1000, h in 1usize..12, w in 1usize..12) {
        let mut r = rng(seed);
        let x = random_array::<f64>(&[1, 1, h, w], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let back = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
        prop_assert_eq!(back.dim(), x.dim());
        let err = (&x - &back).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn prop_band_split_partitions(seed in 0u64..1000, lo in 0.05f64..0.5, span in 0.05f64..0.45) {
        let hi = (lo + span).min(1.0);
        let mut r = rng(seed);
        let f = random_array::<f64>(&[1, 1, 6, 6], &mut r)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let (a, b, c) = band_split(&f, lo, hi).unwrap();
        let sum = &(&a + &b) + &c;
        let err = (&sum - &f).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        prop_assert!(err < 1e-15);
        // disjoint support: at most one part is nonzero per bin
        for idx in 0..f.len() {
            let nz = [a.as_slice().unwrap()[idx], b.as_slice().unwrap()[idx], c.as_slice().unwrap()[idx]]
                .iter()
                .filter(|v| **v != 0.0)
                .count();
            prop_assert!(nz <= 1);
        }
    }
}
