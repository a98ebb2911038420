//! Radix-2 2-D FFT and high-frequency component extraction.
//!
//! Spectra keep the DC term at index `(0, 0)`. Row index `i` of an `n`-point
//! transform holds signed frequency `i` for `i < n/2` and `i - n` otherwise.
//! The DC-centered ("fftshift") view places frequency `k` at row `k + n/2`,
//! so the centered square around `(n/2, n/2)` in that view is the set of
//! frequencies with small `|k|` on both axes.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Complex spectrum of an `h x w` real grid, DC at `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft2d needs power-of-two dims, got {h}x{w}"
        )));
    }
    Ok(())
}

/// In-place iterative radix-2 transform of one strided line.
fn fft_line(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<(f64, f64)> = (0..half)
            .map(|k| ((ang * k as f64).cos(), (ang * k as f64).sin()))
            .collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn fft2_inplace(h: usize, w: usize, re: &mut [f64], im: &mut [f64], inverse: bool) {
    for r in 0..h {
        fft_line(
            &mut re[r * w..(r + 1) * w],
            &mut im[r * w..(r + 1) * w],
            inverse,
        );
    }
    let (mut cr, mut ci) = (vec![0.0; h], vec![0.0; h]);
    for c in 0..w {
        for r in 0..h {
            cr[r] = re[r * w + c];
            ci[r] = im[r * w + c];
        }
        fft_line(&mut cr, &mut ci, inverse);
        for r in 0..h {
            re[r * w + c] = cr[r];
            im[r * w + c] = ci[r];
        }
    }
}

/// Unnormalized forward DFT of a row-major `h x w` grid.
pub fn fft2d(image: &[f64], h: usize, w: usize) -> Result<Spectrum> {
    check_pow2(h, w)?;
    if image.len() != h * w {
        return Err(Error::invalid(format!(
            "fft2d: {} values for {h}x{w}",
            image.len()
        )));
    }
    let mut re = image.to_vec();
    let mut im = vec![0.0; h * w];
    fft2_inplace(h, w, &mut re, &mut im, false);
    Ok(Spectrum {
        height: h,
        width: w,
        real: re,
        imag: im,
    })
}

/// Inverse DFT scaled by `1 / (h w)`; returns (real, imag) parts.
pub fn ifft2d_complex(spec: &Spectrum) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, w) = (spec.height, spec.width);
    check_pow2(h, w)?;
    let mut re = spec.real.clone();
    let mut im = spec.imag.clone();
    fft2_inplace(h, w, &mut re, &mut im, true);
    let s = 1.0 / (h * w) as f64;
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    Ok((re, im))
}

/// Real part of the inverse transform.
pub fn ifft2d(spec: &Spectrum) -> Result<Vec<f64>> {
    Ok(ifft2d_complex(spec)?.0)
}

/// Position of storage index `i` in the DC-centered view of an `n`-point axis.
pub fn fftshift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Signed frequency stored at index `i`: its centered position minus `n/2`.
fn signed_freq(i: usize, n: usize) -> isize {
    fftshift_index(i, n) as isize - (n / 2) as isize
}

/// High-frequency components of one real channel.
///
/// In the centered view, the square of side `floor(tau * n)` around DC is
/// zeroed. The square is taken symmetric about DC (half-width
/// `floor(floor(tau * n) / 2)`) so a real input yields a real output; DC is
/// always inside it.
pub fn extract_hfc(image: &[f64], h: usize, w: usize, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!(
            "hfc mask ratio must be in (0,1), got {tau}"
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "extract_hfc" });
    }
    let mut spec = fft2d(image, h, w)?;
    let ry = ((tau * h as f64).floor() as isize) / 2;
    let rx = ((tau * w as f64).floor() as isize) / 2;
    for r in 0..h {
        if signed_freq(r, h).abs() > ry {
            continue;
        }
        for c in 0..w {
            if signed_freq(c, w).abs() <= rx {
                spec.real[r * w + c] = 0.0;
                spec.imag[r * w + c] = 0.0;
            }
        }
    }
    ifft2d(&spec)
}

/// Per-channel HFC of an interleaved `h x w x c` image.
pub fn extract_hfc_channels(
    image: &[f64],
    h: usize,
    w: usize,
    c: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    if image.len() != h * w * c {
        return Err(Error::invalid("extract_hfc: image size mismatch"));
    }
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let plane: Vec<f64> = (0..h * w).map(|i| image[i * c + ch]).collect();
        let hfc = extract_hfc(&plane, h, w, tau)?;
        for (i, v) in hfc.into_iter().enumerate() {
            out[i * c + ch] = v;
        }
    }
    Ok(out)
}
