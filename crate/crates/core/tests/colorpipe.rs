use hdrtv_core::colorpipe::gamut::*;
use hdrtv_core::colorpipe::transfer::{eotf_value, gamma_eotf, oetf_value};
use hdrtv_core::colorpipe::*;
use hdrtv_core::{EncodedImage, Gamut, LinearImage, Transfer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Reference values evaluated with 40-digit arithmetic from the rational
// PQ constants.
const PQ_AT_0_01: f64 = 0.50807842151739485507;
const PQ_AT_0_1: f64 = 0.75182709624704177314;

/// RGB→XYZ from primaries and white chromaticities, solved independently of
/// the pinned tables.
fn npm(prim: [(f64, f64); 3], white: (f64, f64)) -> Mat3 {
    let col = |(x, y): (f64, f64)| [x / y, 1.0, (1.0 - x - y) / y];
    let p: Vec<[f64; 3]> = prim.iter().map(|&c| col(c)).collect();
    let m = [
        [p[0][0], p[1][0], p[2][0]],
        [p[0][1], p[1][1], p[2][1]],
        [p[0][2], p[1][2], p[2][2]],
    ];
    let s = solve(m, col(white));
    let mut out = m;
    for row in out.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= s[j];
        }
    }
    out
}

fn solve(m: Mat3, b: [f64; 3]) -> [f64; 3] {
    let det = |m: &Mat3| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = b[i];
        }
        *xk = det(&mk) / d;
    }
    x
}

fn max_diff(a: &Mat3, b: &Mat3) -> f64 {
    (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).abs())
        .fold(0.0, f64::max)
}

const D65: (f64, f64) = (0.3127, 0.3290);
const P709: [(f64, f64); 3] = [(0.64, 0.33), (0.30, 0.60), (0.15, 0.06)];
const P2020: [(f64, f64); 3] = [(0.708, 0.292), (0.170, 0.797), (0.131, 0.046)];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn pq_reference_values() {
    assert!((pq_oetf(0.01) - PQ_AT_0_01).abs() < 1e-12);
    assert!((pq_oetf(0.1) - PQ_AT_0_1).abs() < 1e-12);
    assert!((pq_eotf(PQ_AT_0_01) - 0.01).abs() < 1e-12);
    assert_eq!(pq_oetf(0.0), 0.0);
    assert_eq!(pq_oetf(1.0), 1.0);
    assert_eq!(PQ.a1 + PQ.a2, 1.0 + PQ.a3);
}

#[test]
fn transfer_round_trips() {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let x: f64 = r.gen();
        for t in [Transfer::Gamma22, Transfer::Pq] {
            let back = eotf_value(t, oetf_value(t, x));
            assert!((back - x).abs() < 1e-6, "{t:?} at {x}: {back}");
        }
    }
    assert_eq!(gamma_eotf(0.5), 0.5f64.powf(2.2));
}

#[test]
fn transfers_strictly_monotone() {
    for t in [Transfer::Gamma22, Transfer::Pq] {
        let mut prev = -1.0;
        for i in 0..=4096 {
            let v = oetf_value(t, i as f64 / 4096.0);
            assert!(v > prev, "{t:?} not increasing at {i}");
            prev = v;
        }
    }
}

#[test]
fn eotf_rejects_wrong_tag() {
    let img = EncodedImage::sdr(1, 1, 8, vec![[0.5; 3]]).unwrap();
    assert!(transfer::eotf_checked(&img, Transfer::Pq).is_err());
    assert!(transfer::eotf_checked(&img, Transfer::Gamma22).is_ok());
}

#[test]
fn pinned_matrices_match_chromaticity_derivation() {
    assert!(max_diff(&npm(P709, D65), &BT709_TO_XYZ) < 1e-12);
    assert!(max_diff(&npm(P2020, D65), &BT2020_TO_XYZ) < 1e-12);
}

#[test]
fn matrices_invert_and_preserve_white() {
    let pairs = [
        (BT709_TO_XYZ, XYZ_TO_BT709),
        (BT2020_TO_XYZ, XYZ_TO_BT2020),
        (BT709_TO_BT2020, BT2020_TO_BT709),
    ];
    for (m, inv) in pairs {
        assert!(max_diff(&mat_mul(&m, &inv), &IDENTITY) < 1e-10);
        assert!(max_diff(&mat_mul(&inv, &m), &IDENTITY) < 1e-10);
    }
    for m in [XYZ_TO_BT709, XYZ_TO_BT2020] {
        let w = mat_vec(&m, D65_WHITE_XYZ);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-4), "{w:?}");
    }
    let w = mat_vec(&BT709_TO_BT2020, [1.0; 3]);
    assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-4));
}

#[test]
fn red_709_in_2020() {
    let img = LinearImage::new(1, 1, Gamut::Bt709, vec![[1.0, 0.0, 0.0]]).unwrap();
    let out = gamut_convert(&img, Gamut::Bt2020);
    // First column of the composite, evaluated at 40 digits.
    let expect = [0.62740389593469907874, 0.069097289358232077443, 0.016391438875150279368];
    for (a, b) in out.pixels()[0].iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    // The composite agrees with going through XYZ.
    let via = mat_mul(&XYZ_TO_BT2020, &BT709_TO_XYZ);
    assert!(max_diff(&via, &BT709_TO_BT2020) < 1e-12);
}

#[test]
fn gamut_round_trip() {
    let mut r = rng(2);
    let pixels: Vec<_> = (0..10_000).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let img = LinearImage::new(100, 100, Gamut::Bt709, pixels).unwrap();
    let back = gamut_convert(&gamut_convert(&img, Gamut::Bt2020), Gamut::Bt709);
    for (a, b) in img.pixels().iter().zip(back.pixels()) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-6);
        }
    }
}

#[test]
fn out_of_gamut_negatives_kept() {
    let img = LinearImage::new(1, 1, Gamut::Bt2020, vec![[0.0, 1.0, 0.0]]).unwrap();
    let out = gamut_convert(&img, Gamut::Bt709);
    assert!(out.pixels()[0][0] < 0.0 && out.pixels()[0][2] < 0.0);
}

#[test]
fn quantize_lattice() {
    assert_eq!(quantize_value(0.0, 8), 0.0);
    assert_eq!(quantize_value(1.0, 8), 1.0);
    assert_eq!(quantize_value(0.3, 8), 77.0 / 255.0);
    for n in [8u8, 10, 12, 16] {
        let bound = 1.0 / (2.0 * ((1u32 << n) - 1) as f64);
        let mut prev = 0.0;
        for i in 0..=200_000 {
            let x = i as f64 / 200_000.0;
            let q = quantize_value(x, n);
            assert_eq!(quantize_value(q, n), q);
            assert!((q - x).abs() <= bound + 1e-15);
            assert!(q >= prev);
            prev = q;
        }
    }
}

#[test]
fn quantized_images_check_lattice() {
    let img = EncodedImage::sdr(2, 1, 8, vec![[0.3; 3], [0.7; 3]]).unwrap();
    let q = quantize(&img, 8).unwrap();
    assert!(q.is_quantized());
    assert!(EncodedImage::new_quantized(2, 1, Transfer::Gamma22, Gamut::Bt709, 8, q.codes().to_vec()).is_ok());
    assert!(EncodedImage::new_quantized(1, 1, Transfer::Gamma22, Gamut::Bt709, 8, vec![[0.3; 3]]).is_err());
    assert!(quantize(&img, 9).is_err());
}

#[test]
fn tone_identity_and_statistic_determinism() {
    let mut r = rng(3);
    let pixels: Vec<_> = (0..64).map(|_| [r.gen::<f64>() * 0.05, r.gen::<f64>() * 0.05, r.gen::<f64>() * 0.05]).collect();
    let img = LinearImage::new(8, 8, Gamut::Xyz, pixels.clone()).unwrap();
    assert_eq!(tone_map_global(&img, &ToneCurveParams::identity()).unwrap(), img);

    let dup = LinearImage::new(8, 8, Gamut::Xyz, pixels).unwrap();
    assert_eq!(sdr_default(&img, 1.3), sdr_default(&dup, 1.3));
    assert_eq!(hdr_default(&img, 1.0), hdr_default(&dup, 1.0));
}

#[test]
fn tone_keeps_chromaticity() {
    let img = LinearImage::new(1, 1, Gamut::Xyz, vec![[0.2, 0.3, 0.1]]).unwrap();
    let p = ToneCurveParams {
        curve: ToneCurve::Reinhard { gain: 1.0 },
        theta: 0.0,
        clip: None,
    };
    let out = tone_map_global(&img, &p).unwrap().pixels()[0];
    let y = 0.3 / 1.3;
    assert!((out[1] - y).abs() < 1e-15);
    assert!((out[0] / out[1] - 0.2 / 0.3).abs() < 1e-12);
}

#[test]
fn all_zero_raw_forms_black() {
    let raw = LinearImage::constant(4, 4, Gamut::Xyz, [0.0; 3]).unwrap();
    let sdr = form_content(&raw, Standard::Sdr, &sdr_default(&raw, 1.0)).unwrap();
    let hdr = form_content(&raw, Standard::HDR10, &hdr_default(&raw, 1.0)).unwrap();
    assert!(sdr.codes().iter().chain(hdr.codes()).all(|p| *p == [0.0; 3]));
}

#[test]
fn form_content_is_the_stage_chain() {
    let mut r = rng(4);
    let pixels: Vec<_> = (0..256).map(|_| [r.gen::<f64>() * 0.1, r.gen::<f64>() * 0.1, r.gen::<f64>() * 0.1]).collect();
    let raw = LinearImage::new(16, 16, Gamut::Xyz, pixels).unwrap();
    for (std, tone) in [
        (Standard::Sdr, sdr_default(&raw, 1.0)),
        (Standard::Hdr { bits: 12 }, hdr_default(&raw, 1.0)),
    ] {
        let manual = quantize(
            &oetf(&gamut_convert(&tone_map_global(&raw, &tone).unwrap(), std.gamut()), std.transfer(), std.bits()).unwrap(),
            std.bits(),
        )
        .unwrap();
        assert_eq!(form_content(&raw, std, &tone).unwrap(), manual);
    }
}

#[test]
fn mid_gray_hdr_code() {
    let xyz = D65_WHITE_XYZ.map(|v| v * 0.01);
    let raw = LinearImage::new(1, 1, Gamut::Xyz, vec![xyz]).unwrap();
    let out = form_content(&raw, Standard::HDR10, &hdr_default(&raw, 1.0)).unwrap();
    for v in out.codes()[0] {
        assert!((v - PQ_AT_0_01).abs() <= 0.5 / 1023.0 + 1e-9, "{v}");
    }
}

#[test]
fn hdr_identity_tone_on_bt2020_is_oetf_then_quantize() {
    let mut r = rng(5);
    let pixels: Vec<_> = (0..100).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let raw = LinearImage::new(10, 10, Gamut::Bt2020, pixels).unwrap();
    let direct = quantize(&oetf(&raw, Transfer::Pq, 10).unwrap(), 10).unwrap();
    let formed = form_content(&raw, Standard::HDR10, &ToneCurveParams::identity()).unwrap();
    assert_eq!(direct, formed);
}

fn permuted(img: &LinearImage, perm: &[usize]) -> LinearImage {
    let px = perm.iter().map(|&i| img.pixels()[i]).collect();
    LinearImage::new(img.width(), img.height(), img.gamut(), px).unwrap()
}

proptest! {
    #[test]
    fn stages_commute_with_pixel_permutation(seed in 0u64..1000, jitter in 0.5f64..2.0) {
        let mut r = rng(seed);
        let pixels: Vec<_> = (0..64).map(|_| [r.gen::<f64>() * 0.2, r.gen::<f64>() * 0.2, r.gen::<f64>() * 0.2]).collect();
        let raw = LinearImage::new(8, 8, Gamut::Xyz, pixels).unwrap();
        let mut perm: Vec<usize> = (0..64).collect();
        for i in (1..64).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let p = permuted(&raw, &perm);
        let tone = sdr_default(&raw, jitter);
        // The statistic itself is permutation invariant up to summation order.
        let tp = sdr_default(&p, jitter);
        prop_assert!((tone.theta - tp.theta).abs() <= 1e-12 * tone.theta);
        let a = form_content(&raw, Standard::Sdr, &tone).unwrap();
        let b = form_content(&p, Standard::Sdr, &tone).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.codes()[i], b.codes()[k]);
        }
    }

    #[test]
    fn sdr_curve_monotone(l0 in 0.0f64..10.0, dl in 0.0f64..10.0, theta in 1e-4f64..1.0, w in 0.1f64..50.0) {
        let p = ToneCurveParams {
            curve: ToneCurve::ReinhardExtended { gain: 0.18 / theta, white: w },
            theta,
            clip: Some(1.0),
        };
        prop_assert!(p.apply(l0 + dl) >= p.apply(l0));
        let m = ToneCurveParams { curve: ToneCurve::MuLaw { gain: 1.0, mu: w }, theta, clip: None };
        prop_assert!(m.apply(l0 + dl) >= m.apply(l0));
    }
}
