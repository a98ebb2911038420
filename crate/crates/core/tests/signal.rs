use std::f64::consts::PI;

use catsam_core::signal::{
    extract_hfc, extract_hfc_channels, fft2d, ifft2d, ifft2d_complex, Spectrum,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct O(N^2) DFT of a complex grid; `sign = -1` forward.
fn naive_dft(re: &[f64], im: &[f64], h: usize, w: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    let mut or = vec![0.0; h * w];
    let mut oi = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a =
                        sign * 2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    let (c, s) = (a.cos(), a.sin());
                    let (xr, xi) = (re[y * w + x], im[y * w + x]);
                    sr += xr * c - xi * s;
                    si += xr * s + xi * c;
                }
            }
            or[u * w + v] = sr;
            oi[u * w + v] = si;
        }
    }
    (or, oi)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fft_matches_direct_dft() {
    for (h, w) in [(8, 8), (4, 16), (2, 8)] {
        let x = random_grid(h, w, (h * w) as u64);
        let s = fft2d(&x, h, w).unwrap();
        let (re, im) = naive_dft(&x, &vec![0.0; h * w], h, w, -1.0);
        assert!(max_diff(&s.real, &re) < 1e-9);
        assert!(max_diff(&s.imag, &im) < 1e-9);
    }
}

#[test]
fn inverse_matches_direct_dft() {
    let (h, w) = (8, 8);
    let re = random_grid(h, w, 1);
    let im = random_grid(h, w, 2);
    let spec = Spectrum {
        height: h,
        width: w,
        real: re.clone(),
        imag: im.clone(),
    };
    let (r, i) = ifft2d_complex(&spec).unwrap();
    let (nr, ni) = naive_dft(&re, &im, h, w, 1.0);
    let n = (h * w) as f64;
    assert!(max_diff(&r, &nr.iter().map(|v| v / n).collect::<Vec<_>>()) < 1e-9);
    assert!(max_diff(&i, &ni.iter().map(|v| v / n).collect::<Vec<_>>()) < 1e-9);
}

#[test]
fn round_trip_64() {
    let x = random_grid(64, 64, 5);
    let back = ifft2d(&fft2d(&x, 64, 64).unwrap()).unwrap();
    assert!(max_diff(&x, &back) < 1e-9);
}

#[test]
fn parseval_64() {
    let x = random_grid(64, 64, 6);
    let s = fft2d(&x, 64, 64).unwrap();
    let lhs: f64 = x.iter().map(|v| v * v).sum();
    let rhs: f64 = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(r, i)| r * r + i * i)
        .sum::<f64>()
        / 4096.0;
    assert!((lhs - rhs).abs() / lhs < 1e-9);
}

#[test]
fn constant_spectrum() {
    let s = fft2d(&vec![0.3; 64], 8, 8).unwrap();
    assert!((s.real[0] - 64.0 * 0.3).abs() < 1e-12);
    assert!(s.real[1..].iter().chain(&s.imag).all(|v| v.abs() < 1e-12));
}

#[test]
fn non_power_of_two_is_an_error() {
    assert!(fft2d(&[0.0; 48], 6, 8).is_err());
    assert!(extract_hfc(&[0.0; 48], 8, 6, 0.25).is_err());
}

fn checkerboard(n: usize) -> Vec<f64> {
    (0..n * n)
        .map(|i| {
            if (i / n + i % n).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Low-pass part by direct DFT: keep frequencies with `|k| <= r` per axis.
fn naive_lowpass(x: &[f64], n: usize, r: isize) -> Vec<f64> {
    let (re, im) = naive_dft(x, &vec![0.0; n * n], n, n, -1.0);
    let signed = |i: usize| {
        if i < n / 2 {
            i as isize
        } else {
            i as isize - n as isize
        }
    };
    let keep = |u: usize, v: usize| signed(u).abs() <= r && signed(v).abs() <= r;
    let (mut kr, mut ki) = (vec![0.0; n * n], vec![0.0; n * n]);
    for u in 0..n {
        for v in 0..n {
            if keep(u, v) {
                kr[u * n + v] = re[u * n + v];
                ki[u * n + v] = im[u * n + v];
            }
        }
    }
    let (lr, _) = naive_dft(&kr, &ki, n, n, 1.0);
    lr.iter().map(|v| v / (n * n) as f64).collect()
}

#[test]
fn hfc_matches_direct_dft_oracle() {
    let n = 16;
    let x = random_grid(n, n, 8);
    // floor(0.25 * 16) = 4, symmetric half-width 2.
    let low = naive_lowpass(&x, n, 2);
    let expected: Vec<f64> = x.iter().zip(&low).map(|(a, b)| a - b).collect();
    let got = extract_hfc(&x, n, n, 0.25).unwrap();
    assert!(max_diff(&got, &expected) < 1e-9);
}

#[test]
fn checkerboard_passes_through() {
    let cb = checkerboard(64);
    let out = extract_hfc(&cb, 64, 64, 0.25).unwrap();
    assert!(max_diff(&out, &cb) < 1e-9);
}

#[test]
fn dc_plus_checkerboard_keeps_checkerboard() {
    let cb = checkerboard(32);
    let x: Vec<f64> = cb.iter().map(|v| 0.5 + 0.25 * v).collect();
    let out = extract_hfc(&x, 32, 32, 0.25).unwrap();
    let expected: Vec<f64> = cb.iter().map(|v| 0.25 * v).collect();
    assert!(max_diff(&out, &expected) < 1e-9);
}

#[test]
fn constant_image_has_no_high_frequencies() {
    let out = extract_hfc(&vec![0.8; 64 * 64], 64, 64, 0.25).unwrap();
    assert!(out.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn hfc_of_real_input_is_real() {
    let n = 32;
    let x = random_grid(n, n, 12);
    let mut s = fft2d(&x, n, n).unwrap();
    // Same symmetric mask as extract_hfc with tau = 0.25.
    for u in 0..n {
        for v in 0..n {
            let su = if u < n / 2 {
                u as isize
            } else {
                u as isize - n as isize
            };
            let sv = if v < n / 2 {
                v as isize
            } else {
                v as isize - n as isize
            };
            if su.abs() <= 4 && sv.abs() <= 4 {
                s.real[u * n + v] = 0.0;
                s.imag[u * n + v] = 0.0;
            }
        }
    }
    let (_, im) = ifft2d_complex(&s).unwrap();
    assert!(im.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn channels_are_independent() {
    let (n, c) = (16, 3);
    let planes: Vec<Vec<f64>> = (0..c).map(|k| random_grid(n, n, 20 + k as u64)).collect();
    let interleaved: Vec<f64> = (0..n * n)
        .flat_map(|i| planes.iter().map(move |p| p[i]))
        .collect();
    let out = extract_hfc_channels(&interleaved, n, n, c, 0.25).unwrap();
    for (k, p) in planes.iter().enumerate() {
        let single = extract_hfc(p, n, n, 0.25).unwrap();
        let got: Vec<f64> = (0..n * n).map(|i| out[i * c + k]).collect();
        assert_eq!(got, single);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hfc_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = random_grid(32, 32, seed);
        let y = random_grid(32, 32, seed + 1);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let hx = extract_hfc(&x, 32, 32, 0.25).unwrap();
        let hy = extract_hfc(&y, 32, 32, 0.25).unwrap();
        let hm = extract_hfc(&mix, 32, 32, 0.25).unwrap();
        let lin: Vec<f64> = hx.iter().zip(&hy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_diff(&hm, &lin) < 1e-9);
    }

    #[test]
    fn hfc_is_idempotent_with_zero_mean(seed in 0u64..10_000, tau in 0.05f64..0.95) {
        let x = random_grid(32, 32, seed);
        let once = extract_hfc(&x, 32, 32, tau).unwrap();
        let twice = extract_hfc(&once, 32, 32, tau).unwrap();
        prop_assert!(max_diff(&once, &twice) < 1e-9);
        let mean = once.iter().sum::<f64>() / once.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn round_trip_any_power_of_two(seed in 0u64..10_000, lh in 0u32..6, lw in 0u32..6) {
        let (h, w) = (1usize << lh, 1usize << lw);
        let x = random_grid(h, w, seed);
        let back = ifft2d(&fft2d(&x, h, w).unwrap()).unwrap();
        prop_assert!(max_diff(&x, &back) < 1e-9);
    }
}
