use super::maps::{check_pair, GroundTruthMask, SaliencyMap};
use crate::error::Result;

pub const DEPENDENCY_SIZE: usize = 7;
pub const DEPENDENCY_SIGMA: f64 = 5.0;
/// Distance at which background errors are weighted 1.5.
pub const LOCATION_HALF: f64 = 5.0;
const MACHINE_EPS: f64 = f64::EPSILON;

/// Normalized square Gaussian kernel, row-major.
pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - mid, (i % size) as f64 - mid);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// For every pixel, the squared distance to and the index of the nearest
/// foreground pixel; ties go to the smallest row-major index. Foreground
/// pixels map to themselves.
///
/// Only foreground pixels with a background 4-neighbor are searched: a step
/// from any interior pixel toward the query strictly shortens the distance,
/// so interior pixels are never nearest.
pub(crate) fn nearest_foreground(g: &GroundTruthMask) -> Vec<(usize, usize)> {
    let (h, w) = g.dims();
    let fg = g.data();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); h];
    for y in 0..h {
        for x in 0..w {
            if !fg[y * w + x] {
                continue;
            }
            let bg_neighbor = (y > 0 && !fg[(y - 1) * w + x])
                || (y + 1 < h && !fg[(y + 1) * w + x])
                || (x > 0 && !fg[y * w + x - 1])
                || (x + 1 < w && !fg[y * w + x + 1]);
            if bg_neighbor {
                rows[y].push(x);
            }
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if fg[i] {
                out.push((0, i));
                continue;
            }
            let mut best = (usize::MAX, usize::MAX);
            for dy in 0..h {
                if dy * dy > best.0 {
                    break;
                }
                for ry in [y.checked_sub(dy), (dy > 0).then_some(y + dy)].into_iter().flatten() {
                    let Some(cols) = rows.get(ry) else { continue };
                    let at = cols.partition_point(|&c| c < x);
                    for &cx in cols[at.saturating_sub(1)..(at + 1).min(cols.len())].iter() {
                        let cand = (dy * dy + cx.abs_diff(x).pow(2), ry * w + cx);
                        best = best.min(cand);
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

/// Zero-padded same-size correlation.
fn filter_same(field: &[f64], h: usize, w: usize, kernel: &[f64], size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..size as isize {
                let sy = y + ky - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..size as isize {
                    let sx = x + kx - r;
                    if sx >= 0 && sx < w as isize {
                        acc += kernel[(ky * size as isize + kx) as usize] * field[(sy * w as isize + sx) as usize];
                    }
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    out
}

/// Weighted F-beta (beta^2 = 1) with dependency smoothing of foreground
/// errors and distance attenuation of background errors.
pub fn weighted_f(s: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_pair(s, g)?;
    let (h, w) = g.dims();
    let fg = g.data();
    let count = g.foreground();
    if count == 0 {
        return Ok(0.0);
    }
    let err: Vec<f64> = s
        .data()
        .iter()
        .zip(fg)
        .map(|(&v, &b)| (v - if b { 1.0 } else { 0.0 }).abs())
        .collect();
    let nearest = nearest_foreground(g);
    let spread: Vec<f64> = nearest.iter().map(|&(_, idx)| err[idx]).collect();
    let kernel = gaussian_kernel(DEPENDENCY_SIZE, DEPENDENCY_SIGMA);
    let smoothed = filter_same(&spread, h, w, &kernel, DEPENDENCY_SIZE);
    let alpha = 0.5f64.ln() / LOCATION_HALF;
    let (mut tp, mut fp, mut fg_err) = (count as f64, 0.0, 0.0);
    for i in 0..h * w {
        if fg[i] {
            let e = err[i].min(smoothed[i]);
            tp -= e;
            fg_err += e;
        } else {
            let dist = (nearest[i].0 as f64).sqrt();
            fp += err[i] * (2.0 - (alpha * dist).exp());
        }
    }
    let recall = 1.0 - fg_err / count as f64;
    let precision = tp / (MACHINE_EPS + tp + fp);
    Ok(2.0 * recall * precision / (MACHINE_EPS + recall + precision))
}
