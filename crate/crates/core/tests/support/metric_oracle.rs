//! Direct-definition saliency scores on 2-D grids plus seeded random
//! mask/map pairs. Shared by the metric tests and the acceptance run.
#![allow(dead_code)]

use ddnet::metrics::{GroundTruthMask, SaliencyMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn grid_of_map(s: &SaliencyMap) -> Grid {
    s.data().chunks(s.width()).map(|r| r.to_vec()).collect()
}

pub fn grid_of_mask(g: &GroundTruthMask) -> Grid {
    g.data()
        .chunks(g.width())
        .map(|r| r.iter().map(|&b| b as u8 as f64).collect())
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---- E-measure ------------------------------------------------------------

pub fn oracle_e(s: &Grid, g: &Grid) -> f64 {
    let flat_s: Vec<f64> = s.concat();
    let flat_g: Vec<f64> = g.concat();
    let level = (2.0 * mean(&flat_s)).min(1.0);
    let bin: Vec<f64> = flat_s.iter().map(|&v| if v > 0.0 && v >= level { 1.0 } else { 0.0 }).collect();
    let fg: f64 = flat_g.iter().sum();
    if fg == 0.0 {
        return 1.0 - mean(&bin);
    }
    if fg == flat_g.len() as f64 {
        return mean(&bin);
    }
    let (mg, ms) = (mean(&flat_g), mean(&bin));
    let mut acc = Vec::new();
    for i in 0..bin.len() {
        let a = flat_g[i] - mg;
        let b = bin[i] - ms;
        let align = 2.0 * a * b / (a * a + b * b + 1e-12);
        acc.push((1.0 + align).powi(2) / 4.0);
    }
    mean(&acc)
}

// ---- S-measure ------------------------------------------------------------

pub fn oracle_object(vals: &[f64]) -> f64 {
    let x = if vals.is_empty() { 0.0 } else { mean(vals) };
    let sd = if vals.len() < 2 {
        0.0
    } else {
        (vals.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    2.0 * x / (x * x + 1.0 + sd + f64::EPSILON)
}

pub fn oracle_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let var = |a: &[f64], m: f64, b: &[f64], k: f64| {
        a.iter().zip(b).map(|(u, v)| (u - m) * (v - k)).sum::<f64>() / (n - 1.0 + f64::EPSILON)
    };
    let (sx, sy, sxy) = (var(p, x, p, x), var(g, y, g, y), var(p, x, g, y));
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn oracle_s(s: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let flat_g = g.concat();
    let gm = mean(&flat_g);
    if gm == 0.0 {
        return (1.0 - mean(&s.concat())).clamp(0.0, 1.0);
    }
    if gm == 1.0 {
        return mean(&s.concat()).clamp(0.0, 1.0);
    }
    let (mut fg_vals, mut bg_vals) = (vec![], vec![]);
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                fg_vals.push(s[r][c]);
            } else {
                bg_vals.push(1.0 - s[r][c]);
            }
        }
    }
    let object = gm * oracle_object(&fg_vals) + (1.0 - gm) * oracle_object(&bg_vals);

    // Centroid with 1-based coordinates.
    let (mut sum_c, mut sum_r, mut total) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            sum_c += g[r][c] * (c + 1) as f64;
            sum_r += g[r][c] * (r + 1) as f64;
            total += g[r][c];
        }
    }
    let cx = (sum_c / total).round() as usize;
    let cy = (sum_r / total).round() as usize;
    let mut region = 0.0;
    let quads = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    for (rows, cols) in quads {
        let (mut p, mut q) = (vec![], vec![]);
        for r in rows.clone() {
            for c in cols.clone() {
                p.push(s[r][c]);
                q.push(g[r][c]);
            }
        }
        if p.is_empty() {
            continue;
        }
        region += p.len() as f64 / (h * w) as f64 * oracle_ssim(&p, &q);
    }
    (0.5 * object + 0.5 * region).clamp(0.0, 1.0)
}

// ---- weighted F -----------------------------------------------------------

pub fn oracle_wf(s: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let fg: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| g[r][c] == 1.0).collect();
    if fg.is_empty() {
        return 0.0;
    }
    let err: Grid = (0..h).map(|r| (0..w).map(|c| (s[r][c] - g[r][c]).abs()).collect()).collect();
    // Brute-force nearest foreground over every foreground pixel; the list is
    // in row-major order so the first strict minimum is the smallest index.
    let mut dist = vec![vec![0.0; w]; h];
    let mut et = err.clone();
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                continue;
            }
            let mut best = (f64::INFINITY, (0, 0));
            for &(fr, fc) in &fg {
                let d = ((fr as f64 - r as f64).powi(2) + (fc as f64 - c as f64).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, (fr, fc));
                }
            }
            dist[r][c] = best.0;
            et[r][c] = err[best.1 .0][best.1 .1];
        }
    }
    let sigma = 5.0f64;
    let mut kernel = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *k = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            ksum += *k;
        }
    }
    let mut tpw = fg.len() as f64;
    let (mut fpw, mut sum_fg) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if g[r][c] == 1.0 {
                let mut ea = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, k) in row.iter().enumerate() {
                        let (rr, cc) = (r as isize + i as isize - 3, c as isize + j as isize - 3);
                        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                            ea += k / ksum * et[rr as usize][cc as usize];
                        }
                    }
                }
                let e = if ea < err[r][c] { ea } else { err[r][c] };
                tpw -= e;
                sum_fg += e;
            } else {
                let b = 2.0 - ((0.5f64).ln() / 5.0 * dist[r][c]).exp();
                fpw += err[r][c] * b;
            }
        }
    }
    let recall = 1.0 - sum_fg / fg.len() as f64;
    let precision = tpw / (f64::EPSILON + tpw + fpw);
    2.0 * recall * precision / (f64::EPSILON + recall + precision)
}

// ---- random pairs ---------------------------------------------------------

pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> GroundTruthMask {
    match r.random_range(0..4) {
        0 => GroundTruthMask::from_fn(h, w, |_| r.random_bool(0.3)).unwrap(),
        _ => {
            let (cy, cx) = (r.random_range(0.0..h as f64), r.random_range(0.0..w as f64));
            let (ry, rx) = (r.random_range(1.5..h as f64 / 2.0), r.random_range(1.5..w as f64 / 2.0));
            let speckle = r.random_range(0.0..0.1);
            GroundTruthMask::from_fn(h, w, |i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let inside = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0;
                inside ^ r.random_bool(speckle)
            })
            .unwrap()
        }
    }
}

pub fn random_map(r: &mut ChaCha8Rng, g: &GroundTruthMask) -> SaliencyMap {
    let style = r.random_range(0..3);
    let noise = r.random_range(0.0..0.6);
    SaliencyMap::from_fn(g.height(), g.width(), |i| {
        let base = if g.data()[i] { 1.0 } else { 0.0 };
        match style {
            0 => r.random_range(0.0..1.0),
            1 => base * (1.0 - noise) + noise * r.random_range(0.0..1.0),
            _ => (r.random_range(0.0..1.0) < 0.5) as u8 as f64 * r.random_range(0.0..1.0),
        }
    })
    .unwrap()
}

pub fn pairs(seed: u64, n: usize, h: usize, w: usize) -> Vec<(SaliencyMap, GroundTruthMask)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let g = random_mask(&mut r, h, w);
            (random_map(&mut r, &g), g)
        })
        .collect()
}
