//! Seeded synthetic segmentation domains, few-shot splits, prompt sampling
//! and PGM export.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask, SoftMask};
use crate::prompt::{BoxPrompt, GeometricPrompt, PointPrompt, PromptKind};

pub const MIN_FOREGROUND: f64 = 0.02;
pub const MAX_FOREGROUND: f64 = 0.60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Flat shapes on flat backgrounds; the base pretraining corpus.
    #[serde(rename = "generic")]
    Generic,
    #[serde(rename = "aerial-rects")]
    AerialRects,
    #[serde(rename = "speckle-ellipses")]
    SpeckleEllipses,
    #[serde(rename = "inverted-blobs")]
    InvertedBlobs,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::Generic,
        Domain::AerialRects,
        Domain::SpeckleEllipses,
        Domain::InvertedBlobs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Generic => "generic",
            Domain::AerialRects => "aerial-rects",
            Domain::SpeckleEllipses => "speckle-ellipses",
            Domain::InvertedBlobs => "inverted-blobs",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Domain::Generic => 0,
            Domain::AerialRects => 1,
            Domain::SpeckleEllipses => 2,
            Domain::InvertedBlobs => 3,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                "unknown domain `{s}` (generic | aerial-rects | speckle-ellipses | inverted-blobs)"
            ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: usize,
    pub domain: Domain,
    pub image: Image,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub seed: u64,
    /// Indexed by sample id.
    pub samples: Vec<ImageSample>,
    pub split: FewShotSplit,
}

impl Dataset {
    pub fn train(&self) -> Vec<&ImageSample> {
        self.split.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test(&self) -> Vec<&ImageSample> {
        self.split.test.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// `n_train` training then `n_test` test samples of `size x size x channels`.
pub fn generate_dataset(
    domain: Domain,
    n_train: usize,
    n_test: usize,
    seed: u64,
    size: usize,
    channels: usize,
) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "dataset sizes must be positive (train {n_train}, test {n_test})"
        )));
    }
    if size < 8 || channels == 0 {
        return Err(Error::invalid(format!(
            "cannot render {size}x{size}x{channels} samples"
        )));
    }
    let samples = (0..n_train + n_test)
        .map(|id| generate_sample(domain, id, seed, size, channels))
        .collect();
    Ok(Dataset {
        domain,
        seed,
        samples,
        split: FewShotSplit {
            train: (0..n_train).collect(),
            test: (n_train..n_train + n_test).collect(),
            seed,
        },
    })
}

/// One sample, a pure function of `(domain, id, seed)`.
pub fn generate_sample(
    domain: Domain,
    id: usize,
    seed: u64,
    size: usize,
    channels: usize,
) -> ImageSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain.stream() << 40) | id as u64);
    loop {
        let (gray, mask) = match domain {
            Domain::Generic => render_generic(&mut rng, size),
            Domain::AerialRects => render_aerial(&mut rng, size),
            Domain::SpeckleEllipses => render_speckle(&mut rng, size),
            Domain::InvertedBlobs => render_blobs(&mut rng, size),
        };
        let f = mask.fraction();
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f) {
            continue;
        }
        let image = colorize(&gray, size, channels, &mut rng);
        return ImageSample {
            id,
            domain,
            image,
            mask,
        };
    }
}

/// Replicates a grayscale render across channels with a small per-channel gain.
fn colorize(gray: &[f64], size: usize, channels: usize, rng: &mut ChaCha8Rng) -> Image {
    let gains: Vec<f64> = (0..channels)
        .map(|c| if c == 0 { 1.0 } else { rng.gen_range(0.8..1.0) })
        .collect();
    let mut data = Vec::with_capacity(gray.len() * channels);
    for &v in gray {
        for g in &gains {
            data.push((v * g).clamp(0.0, 1.0));
        }
    }
    Image::new(size, size, channels, data).expect("rendered image has valid shape")
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    /// Membership of the pixel center `(x + 0.5, y + 0.5)`.
    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let u = (dx * c + dy * s) / rx;
                let v = (-dx * s + dy * c) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Triangle(p) => {
                let edge = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
                };
                let (e0, e1, e2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }

    fn mask(&self, size: usize) -> Mask {
        Mask::from_fn(size, size, |y, x| self.contains(x, y))
    }
}

fn random_rect(rng: &mut ChaCha8Rng, size: usize, min: f64, max: f64) -> Shape {
    let s = size as f64;
    let w = rng.gen_range(min..max) * s;
    let h = rng.gen_range(min..max) * s;
    let x0 = rng.gen_range(0.0..(s - w));
    let y0 = rng.gen_range(0.0..(s - h));
    Shape::Rect {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, size: usize, min: f64, max: f64) -> Shape {
    let s = size as f64;
    let rx = rng.gen_range(min..max) * s / 2.0;
    let ry = rng.gen_range(min..max) * s / 2.0;
    let r = rx.max(ry);
    Shape::Ellipse {
        cx: rng.gen_range(r..(s - r)),
        cy: rng.gen_range(r..(s - r)),
        rx,
        ry,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

fn random_triangle(rng: &mut ChaCha8Rng, size: usize) -> Shape {
    let s = size as f64;
    let cx = rng.gen_range(0.3 * s..0.7 * s);
    let cy = rng.gen_range(0.3 * s..0.7 * s);
    let r = rng.gen_range(0.15 * s..0.3 * s);
    let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut p = [(0.0, 0.0); 3];
    for (k, v) in p.iter_mut().enumerate() {
        let a = a0 + k as f64 * std::f64::consts::TAU / 3.0 + rng.gen_range(-0.3..0.3);
        *v = (
            (cx + r * a.cos()).clamp(0.0, s),
            (cy + r * a.sin()).clamp(0.0, s),
        );
    }
    Shape::Triangle(p)
}

fn paint(img: &mut [f64], mask: &Mask, v: f64) {
    for (p, &m) in img.iter_mut().zip(&mask.data) {
        if m {
            *p = v;
        }
    }
}

fn add_noise(img: &mut [f64], rng: &mut ChaCha8Rng, std: f64) {
    let n = Normal::new(0.0, std).unwrap();
    for p in img.iter_mut() {
        *p = (*p + n.sample(rng)).clamp(0.0, 1.0);
    }
}

/// Target shape plus up to two distractors, flat intensities.
fn render_generic(rng: &mut ChaCha8Rng, size: usize) -> (Vec<f64>, Mask) {
    let bg = rng.gen_range(0.0..0.3);
    let mut img = vec![bg; size * size];
    let pick = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => random_rect(rng, size, 0.2, 0.6),
        1 => random_ellipse(rng, size, 0.25, 0.65),
        _ => random_triangle(rng, size),
    };
    for _ in 0..rng.gen_range(0..3) {
        let d = pick(rng);
        let v = rng.gen_range(0.45..1.0);
        paint(&mut img, &d.mask(size), v);
    }
    let target = pick(rng).mask(size);
    let v = rng.gen_range(0.6..1.0);
    paint(&mut img, &target, v);
    add_noise(&mut img, rng, 0.01);
    (img, target)
}

/// Smooth random texture from a few low-frequency sinusoids.
fn texture(rng: &mut ChaCha8Rng, size: usize, base: f64, amp: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.5..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let s = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(f, theta, phase, a) in &waves {
                let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) / s;
                v += a * (std::f64::consts::TAU * f * t + phase).sin();
            }
            out.push(base + amp * v / norm);
        }
    }
    out
}

/// Bright axis-aligned rectangles on a textured background.
fn render_aerial(rng: &mut ChaCha8Rng, size: usize) -> (Vec<f64>, Mask) {
    let mut img = texture(rng, size, 0.4, 0.2);
    let mut mask = Mask::empty(size, size);
    for _ in 0..rng.gen_range(1..=3) {
        let r = random_rect(rng, size, 0.12, 0.4).mask(size);
        let v = rng.gen_range(0.75..0.95);
        paint(&mut img, &r, v);
        mask = mask.union(&r);
    }
    // Roof texture inside the rectangles.
    let roof = texture(rng, size, 0.0, 0.08);
    for (i, p) in img.iter_mut().enumerate() {
        if mask.data[i] {
            *p += roof[i];
        }
    }
    add_noise(&mut img, rng, 0.03);
    (img, mask)
}

/// One ellipse under two-look multiplicative speckle.
fn render_speckle(rng: &mut ChaCha8Rng, size: usize) -> (Vec<f64>, Mask) {
    let target = random_ellipse(rng, size, 0.25, 0.7).mask(size);
    let (bg, fg) = (rng.gen_range(0.15..0.25), rng.gen_range(0.45..0.6));
    let looks: f64 = 2.0;
    let speckle = Gamma::new(looks, 1.0 / looks).unwrap();
    let img = target
        .data
        .iter()
        .map(|&m| {
            let r = if m { fg } else { bg };
            (r * speckle.sample(rng)).clamp(0.0, 1.0)
        })
        .collect();
    (img, target)
}

/// Dark smooth blob on a bright shaded background.
fn render_blobs(rng: &mut ChaCha8Rng, size: usize) -> (Vec<f64>, Mask) {
    let s = size as f64;
    let n = rng.gen_range(2..=4);
    let cx0 = rng.gen_range(0.3 * s..0.7 * s);
    let cy0 = rng.gen_range(0.3 * s..0.7 * s);
    let centers: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                cx0 + rng.gen_range(-0.15 * s..0.15 * s),
                cy0 + rng.gen_range(-0.15 * s..0.15 * s),
                rng.gen_range(0.08 * s..0.16 * s),
            )
        })
        .collect();
    let field = |x: usize, y: usize| -> f64 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        centers
            .iter()
            .map(|&(cx, cy, r)| (-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * r * r)).exp())
            .sum()
    };
    let mask = Mask::from_fn(size, size, |y, x| field(x, y) >= 0.6);
    let shade = texture(rng, size, 0.8, 0.1);
    let dark = rng.gen_range(0.1..0.3);
    let mut img: Vec<f64> = shade
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let (y, x) = (i / size, i % size);
            let t = (field(x, y) / 0.6).min(1.0);
            if mask.data[i] {
                dark
            } else {
                b + (dark - b) * 0.3 * t
            }
        })
        .collect();
    add_noise(&mut img, rng, 0.02);
    (img, mask)
}

/// L-infinity distance from each pixel to the nearest pixel of the other label,
/// capped at `cap + 1`.
pub fn boundary_distance(mask: &Mask, cap: usize) -> Vec<usize> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![cap + 1; h * w];
    for y in 0..h {
        for x in 0..w {
            let label = mask.get(y, x);
            'ring: for r in 1..=cap {
                let (ylo, yhi) = (y.saturating_sub(r), (y + r).min(h - 1));
                let (xlo, xhi) = (x.saturating_sub(r), (x + r).min(w - 1));
                for yy in ylo..=yhi {
                    for xx in xlo..=xhi {
                        if mask.get(yy, xx) != label {
                            out[y * w + x] = r;
                            break 'ring;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Coarse mask: pixel at boundary distance `t <= band` flips when an
/// `N(0, sigma^2)` draw exceeds `t`.
pub fn degrade_mask(
    mask: &Mask,
    sigma: f64,
    band: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SoftMask> {
    if band < 1 {
        return Err(Error::invalid("degrade band must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma {sigma} must be finite and non-negative"
        )));
    }
    let dist = boundary_distance(mask, band);
    let mut out = SoftMask::from(mask);
    for (i, &t) in dist.iter().enumerate() {
        if t > band {
            continue;
        }
        let z = if sigma == 0.0 {
            0.0
        } else {
            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
        };
        if z > t as f64 {
            out.data[i] = 1.0 - out.data[i];
        }
    }
    Ok(out)
}

pub const DEGRADE_SIGMA: f64 = 1.0;
pub const DEGRADE_BAND: usize = 3;

pub fn sample_prompt(
    mask: &Mask,
    kind: PromptKind,
    rng: &mut ChaCha8Rng,
) -> Result<GeometricPrompt> {
    let bb = mask
        .bbox()
        .ok_or_else(|| Error::invalid("cannot sample a prompt from an empty mask"))?;
    Ok(match kind {
        PromptKind::Box => GeometricPrompt::Box(BoxPrompt {
            x0: bb.x0,
            y0: bb.y0,
            x1: bb.x1,
            y1: bb.y1,
        }),
        PromptKind::Point => {
            let fg: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
            let i = *fg.choose(rng).expect("nonempty mask");
            GeometricPrompt::Points(vec![PointPrompt {
                x: i % mask.width,
                y: i / mask.width,
                positive: true,
            }])
        }
        PromptKind::Coarse => {
            GeometricPrompt::CoarseMask(degrade_mask(mask, DEGRADE_SIGMA, DEGRADE_BAND, rng)?)
        }
    })
}

/// Fixed per-sample generator for evaluation prompts.
pub fn eval_prompt_rng(sample_id: usize, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    rng.set_stream(sample_id as u64);
    rng
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (`P5`) for one channel, binary PPM (`P6`) for three.
pub fn write_image_pnm(path: &Path, image: &Image) -> Result<()> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("cannot export {c}-channel image"))),
    };
    let mut buf = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    buf.extend(image.data.iter().map(|&v| to_byte(v)));
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    f.write_all(&bytes)?;
    Ok(())
}

fn next_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut line = String::new();
            r.read_line(&mut line)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(Error::invalid("truncated PNM header"));
    }
    Ok(tok)
}

/// Reads a `P5` or `P6` file with maxval 255 into `[0, 1]` values.
pub fn read_image_pnm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let magic = next_token(&mut r)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => {
            return Err(Error::invalid(format!(
                "{}: not a binary PGM/PPM",
                path.display()
            )))
        }
    };
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::invalid(format!("{}: bad header field `{s}`", path.display())))
    };
    let width = parse(next_token(&mut r)?)?;
    let height = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval != 255 {
        return Err(Error::invalid(format!(
            "{}: maxval {maxval} unsupported",
            path.display()
        )));
    }
    let mut bytes = vec![0u8; width * height * channels];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::invalid(format!("{}: truncated pixel data", path.display())))?;
    Image::new(
        height,
        width,
        channels,
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Mask pixels are those at or above half intensity.
pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let img = read_image_pnm(path)?;
    if img.channels != 1 {
        return Err(Error::invalid(format!(
            "{}: mask must be single-channel",
            path.display()
        )));
    }
    Mask::new(
        img.height,
        img.width,
        img.data.iter().map(|&v| v >= 0.5).collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domain: Domain,
    pub seed: u64,
    pub image_size: usize,
    pub channels: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn sample_stem(id: usize) -> String {
    format!("{id:05}")
}

/// Writes `train/` and `test/` image/mask pairs plus `manifest.json`.
/// Refuses to write into a non-empty directory.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::invalid(format!(
            "output directory {} is not empty",
            dir.display()
        )));
    }
    let first = &ds.samples[0].image;
    for (split, ids) in [("train", &ds.split.train), ("test", &ds.split.test)] {
        let sub = dir.join(split);
        fs::create_dir_all(&sub)?;
        for &id in ids.iter() {
            let s = &ds.samples[id];
            let ext = if s.image.channels == 3 { "ppm" } else { "pgm" };
            write_image_pnm(
                &sub.join(format!("{}_image.{ext}", sample_stem(id))),
                &s.image,
            )?;
            write_mask_pgm(&sub.join(format!("{}_mask.pgm", sample_stem(id))), &s.mask)?;
        }
    }
    let manifest = Manifest {
        domain: ds.domain,
        seed: ds.seed,
        image_size: first.height,
        channels: first.channels,
        train: ds.split.train.clone(),
        test: ds.split.test.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Reads a directory written by [`export_dataset`]. Pixel values come back
/// quantized to 8 bits.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let ext = if manifest.channels == 3 { "ppm" } else { "pgm" };
    let mut samples = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (split, ids, out) in [
        ("train", &manifest.train, &mut train),
        ("test", &manifest.test, &mut test),
    ] {
        for &id in ids {
            let sub = dir.join(split);
            let image = read_image_pnm(&sub.join(format!("{}_image.{ext}", sample_stem(id))))?;
            let mask = read_mask_pgm(&sub.join(format!("{}_mask.pgm", sample_stem(id))))?;
            out.push(samples.len());
            samples.push(ImageSample {
                id,
                domain: manifest.domain,
                image,
                mask,
            });
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "{}: empty split in manifest",
            dir.display()
        )));
    }
    Ok(Dataset {
        domain: manifest.domain,
        seed: manifest.seed,
        samples,
        split: FewShotSplit {
            train,
            test,
            seed: manifest.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_strings_round_trip() {
        for d in Domain::ALL {
            assert_eq!(d.as_str().parse::<Domain>().unwrap(), d);
        }
    }

    #[test]
    fn triangle_contains_centroid() {
        let t = Shape::Triangle([(2.0, 2.0), (14.0, 3.0), (8.0, 13.0)]);
        assert!(t.contains(7, 6));
        assert!(!t.contains(0, 15));
    }

    #[test]
    fn boundary_distance_of_square() {
        let m = Mask::from_fn(9, 9, |y, x| (2..7).contains(&y) && (2..7).contains(&x));
        let d = boundary_distance(&m, 5);
        assert_eq!(d[4 * 9 + 4], 3);
        assert_eq!(d[2 * 9 + 2], 1);
        assert_eq!(d[9 + 1], 1);
        assert_eq!(d[0], 2);
    }
}
