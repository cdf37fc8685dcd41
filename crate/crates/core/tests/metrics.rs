use hdrtv_core::metrics::{delta_e_itp, ictcp, psnr, ssim, MetricReport, PSNR_CAP_DB};
use hdrtv_core::{EncodedImage, Gamut, Rgb, Transfer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(w: usize, h: usize, transfer: Transfer, gamut: Gamut, rng: &mut ChaCha8Rng) -> EncodedImage {
    let codes = (0..w * h)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    EncodedImage::new(w, h, transfer, gamut, 10, codes).unwrap()
}

/// A correlated pair: b is a noisy copy of a.
fn pair(seed: u64) -> (EncodedImage, EncodedImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_image(23, 19, Transfer::Pq, Gamut::Bt2020, &mut rng);
    let codes = a
        .codes()
        .iter()
        .map(|p| p.map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0)))
        .collect();
    let b = EncodedImage::hdr(23, 19, 10, codes).unwrap();
    (a, b)
}

fn naive_psnr(a: &EncodedImage, b: &EncodedImage) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for (p, q) in a.codes().iter().zip(b.codes()) {
        for c in 0..3 {
            se += (p[c] - q[c]).powi(2);
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

/// Direct 2-D Gaussian windows, population statistics.
fn naive_ssim(a: &EncodedImage, b: &EncodedImage) -> f64 {
    let (w, h) = (a.width(), a.height());
    let y = |img: &EncodedImage, x: usize, yy: usize| {
        let p = img.code(x, yy);
        0.2627 * p[0] + 0.6780 * p[1] + 0.0593 * p[2]
    };
    let mut kern = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for (i, row) in kern.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0.0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = kern[i][j] / s;
                    mx += k * y(a, ox + j, oy + i);
                    my += k * y(b, ox + j, oy + i);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = kern[i][j] / s;
                    let (p, q) = (y(a, ox + j, oy + i) - mx, y(b, ox + j, oy + i) - my);
                    vx += k * p * p;
                    vy += k * q * q;
                    cxy += k * p * q;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

/// ICtCp from the published decimal coefficients.
fn oracle_ictcp(rgb: Rgb) -> Rgb {
    let m1 = 0.1593017578125;
    let m2 = 78.84375;
    let c1 = 0.8359375;
    let c2 = 18.8515625;
    let c3 = 18.6875;
    let pq = |y: f64| {
        let yp = y.max(0.0).powf(m1);
        ((c1 + c2 * yp) / (1.0 + c3 * yp)).powf(m2)
    };
    let l = 0.412109375 * rgb[0] + 0.52392578125 * rgb[1] + 0.06396484375 * rgb[2];
    let m = 0.166748046875 * rgb[0] + 0.720458984375 * rgb[1] + 0.11279296875 * rgb[2];
    let s = 0.024169921875 * rgb[0] + 0.075439453125 * rgb[1] + 0.900390625 * rgb[2];
    let (l, m, s) = (pq(l), pq(m), pq(s));
    [
        0.5 * l + 0.5 * m,
        1.613769531250 * l - 3.323486328125 * m + 1.709716796875 * s,
        4.378173828125 * l - 4.245605468750 * m - 0.132568359375 * s,
    ]
}

fn pq_decode(e: f64) -> f64 {
    let m1 = 0.1593017578125;
    let m2 = 78.84375;
    let (c1, c2, c3) = (0.8359375, 18.8515625, 18.6875);
    let ep = e.powf(1.0 / m2);
    ((ep - c1).max(0.0) / (c2 - c3 * ep)).powf(1.0 / m1)
}

fn naive_de(a: &EncodedImage, b: &EncodedImage) -> f64 {
    let mut sum = 0.0;
    for (p, q) in a.codes().iter().zip(b.codes()) {
        let x = oracle_ictcp(p.map(pq_decode));
        let y = oracle_ictcp(q.map(pq_decode));
        let (di, dt, dp) = (x[0] - y[0], 0.5 * (x[1] - y[1]), x[2] - y[2]);
        sum += 720.0 * (di * di + dt * dt + dp * dp).sqrt();
    }
    sum / a.codes().len() as f64
}

#[test]
fn psnr_matches_formula_and_edge_cases() {
    for seed in 0..20 {
        let (a, b) = pair(seed);
        assert!((psnr(&a, &b).unwrap() - naive_psnr(&a, &b)).abs() < 1e-6);
    }
    let (a, _) = pair(0);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    let lo = EncodedImage::hdr(8, 8, 10, vec![[0.2; 3]; 64]).unwrap();
    let hi = EncodedImage::hdr(8, 8, 10, vec![[0.3; 3]; 64]).unwrap();
    assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() < 1e-9);
    let small = EncodedImage::hdr(4, 4, 10, vec![[0.2; 3]; 16]).unwrap();
    assert!(psnr(&lo, &small).is_err());
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_image(32, 32, Transfer::Pq, Gamut::Bt2020, &mut rng);
    let noise: Vec<Rgb> = (0..32 * 32).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let mut last = f64::INFINITY;
    for amp in [0.001, 0.01, 0.03, 0.1] {
        let codes = a
            .codes()
            .iter()
            .zip(&noise)
            .map(|(p, n)| [0, 1, 2].map(|c| (0.5 * p[c] + 0.25 + amp * n[c]).clamp(0.0, 1.0)))
            .collect();
        let base = a.codes().iter().map(|p| p.map(|v| 0.5 * v + 0.25)).collect();
        let base = EncodedImage::hdr(32, 32, 10, base).unwrap();
        let noisy = EncodedImage::hdr(32, 32, 10, codes).unwrap();
        let p = psnr(&base, &noisy).unwrap();
        assert!(p < last, "{p} after {last}");
        last = p;
    }
}

#[test]
fn ssim_matches_direct_window_reference() {
    for seed in 0..20 {
        let (a, b) = pair(100 + seed);
        let got = ssim(&a, &b).unwrap();
        let want = naive_ssim(&a, &b);
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn ssim_edge_cases() {
    let (a, _) = pair(3);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bits: Vec<f64> = (0..24 * 24).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
    let x = EncodedImage::hdr(24, 24, 10, bits.iter().map(|&v| [v; 3]).collect()).unwrap();
    let y = EncodedImage::hdr(24, 24, 10, bits.iter().map(|&v| [1.0 - v; 3]).collect()).unwrap();
    assert!(ssim(&x, &y).unwrap() < 0.0);
    let tiny = EncodedImage::hdr(10, 30, 10, vec![[0.5; 3]; 300]).unwrap();
    assert!(ssim(&tiny, &tiny).is_err());
}

#[test]
fn delta_e_matches_decimal_reference() {
    for seed in 0..20 {
        let (a, b) = pair(200 + seed);
        let got = delta_e_itp(&a, &b).unwrap();
        let want = naive_de(&a, &b);
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn delta_e_properties() {
    let (a, b) = pair(7);
    assert_eq!(delta_e_itp(&a, &a).unwrap(), 0.0);
    let ab = delta_e_itp(&a, &b).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, delta_e_itp(&b, &a).unwrap());
    // neutral colors have Ct = Cp = 0, leaving only the I term
    let g1 = EncodedImage::hdr(1, 1, 10, vec![[0.4; 3]]).unwrap();
    let g2 = EncodedImage::hdr(1, 1, 10, vec![[0.55; 3]]).unwrap();
    let i1 = ictcp([pq_decode(0.4); 3]);
    let i2 = ictcp([pq_decode(0.55); 3]);
    assert!(i1[1].abs() < 1e-12 && i1[2].abs() < 1e-12);
    let de = delta_e_itp(&g1, &g2).unwrap();
    assert!((de - 720.0 * (i1[0] - i2[0]).abs()).abs() < 1e-9);
    // a one-code change is still detected
    let q1 = EncodedImage::hdr(1, 1, 10, vec![[512.0 / 1023.0; 3]]).unwrap();
    let q2 = EncodedImage::hdr(1, 1, 10, vec![[513.0 / 1023.0; 3]]).unwrap();
    assert!(delta_e_itp(&q1, &q2).unwrap() > 0.0);
}

#[test]
fn delta_e_accepts_sdr_input() {
    let sdr = EncodedImage::sdr(2, 1, 8, vec![[1.0; 3], [0.5, 0.2, 0.1]]).unwrap();
    let v = delta_e_itp(&sdr, &sdr).unwrap();
    assert_eq!(v, 0.0);
    // SDR white at 100 cd/m² equals PQ-coded 100 cd/m² white
    let white_sdr = EncodedImage::sdr(1, 1, 8, vec![[1.0; 3]]).unwrap();
    let code = hdrtv_core::colorpipe::pq_oetf(0.01);
    let white_hdr = EncodedImage::hdr(1, 1, 16, vec![[code; 3]]).unwrap();
    assert!(delta_e_itp(&white_sdr, &white_hdr).unwrap() < 1e-9);
}

#[test]
fn report_mean_and_csv() {
    let items: Vec<_> = (0..3).map(|i| {
        let (a, b) = pair(300 + i);
        (format!("img{i}"), a, b)
    }).collect();
    let r = MetricReport::evaluate(&items).unwrap();
    assert_eq!(r.rows.len(), 3);
    let (p, s, d) = r.mean();
    let mp = r.rows.iter().map(|x| x.psnr).sum::<f64>() / 3.0;
    assert!((p - mp).abs() < 1e-12);
    assert!(s.is_some() && d > 0.0);
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,psnr,ssim,de_itp");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("img0,"));
    assert!(lines[4].starts_with("mean,"));
}
