//! Mask IoU and boundary IoU.

use crate::image::Mask;

pub const BOUNDARY_FRACTION: f64 = 0.02;

fn assert_same(a: &Mask, b: &Mask) {
    assert!(
        a.height == b.height && a.width == b.width,
        "mask shapes differ: {}x{} vs {}x{}",
        a.height,
        a.width,
        b.height,
        b.width
    );
}

fn iou_counts(a: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in a {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|P ∩ G| / |P ∪ G|`, and 1 when both masks are empty.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> f64 {
    assert_same(pred, gt);
    iou_counts(pred.data.iter().copied().zip(gt.data.iter().copied()))
}

/// Boundary width in pixels for an `h x w` frame.
pub fn boundary_width(h: usize, w: usize, frac: f64) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    ((frac * diag).round() as usize).max(1)
}

/// Squared Euclidean distance transform of one row or column (lower envelope
/// of parabolas). `f` holds 0 at sources and `INF` elsewhere.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q] == f64::INFINITY {
            continue;
        }
        let Some(mut kk) = k else {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            k = Some(0);
            continue;
        };
        let qf = q as f64;
        loop {
            let p = v[kk];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= z[kk] {
                kk -= 1;
                continue;
            }
            kk += 1;
            v[kk] = q;
            z[kk] = s;
            z[kk + 1] = f64::INFINITY;
            break;
        }
        k = Some(kk);
    }
    if k.is_none() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut kk = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[kk + 1] < q as f64 {
            kk += 1;
        }
        let d = q as f64 - v[kk] as f64;
        *o = d * d + f[v[kk]];
    }
}

/// Squared distance from every pixel to the nearest pixel outside the mask,
/// where everything beyond the frame counts as outside.
pub fn squared_distance_to_background(mask: &Mask) -> Vec<f64> {
    let (h, w) = (mask.height + 2, mask.width + 2);
    let mut grid = vec![0.0; h * w];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                grid[(y + 1) * w + x + 1] = f64::INFINITY;
            }
        }
    }
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    let mut row = vec![0.0; w];
    let mut out = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&row, &mut out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    let mut res = Vec::with_capacity(mask.height * mask.width);
    for y in 0..mask.height {
        res.extend_from_slice(&grid[(y + 1) * w + 1..(y + 1) * w + 1 + mask.width]);
    }
    res
}

/// Mask pixels within Euclidean distance `d` of a non-mask pixel.
pub fn boundary_region(mask: &Mask, d: usize) -> Mask {
    let dist = squared_distance_to_background(mask);
    let lim = (d * d) as f64;
    Mask {
        height: mask.height,
        width: mask.width,
        data: dist
            .iter()
            .zip(&mask.data)
            .map(|(&s, &m)| m && s <= lim)
            .collect(),
    }
}

/// IoU of the two boundary regions, with `d = max(1, round(frac * diagonal))`.
pub fn boundary_iou(pred: &Mask, gt: &Mask, frac: f64) -> f64 {
    assert_same(pred, gt);
    let d = boundary_width(pred.height, pred.width, frac);
    let pb = boundary_region(pred, d);
    let gb = boundary_region(gt, d);
    iou_counts(pb.data.iter().copied().zip(gb.data.iter().copied()))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
