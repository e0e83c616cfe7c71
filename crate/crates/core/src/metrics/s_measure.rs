use super::maps::{check_pair, GroundTruthMask, SaliencyMap};
use crate::error::Result;

pub const S_ALPHA: f64 = 0.5;
const MACHINE_EPS: f64 = f64::EPSILON;

/// Structure measure: object-aware plus region-aware similarity.
pub fn s_measure(s: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_pair(s, g)?;
    let q = if g.foreground() == 0 {
        1.0 - s.mean()
    } else if g.foreground() == g.data().len() {
        s.mean()
    } else {
        S_ALPHA * object_score(s, g) + (1.0 - S_ALPHA) * region_score(s, g)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Mean and sample standard deviation (zero for fewer than two values).
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn object_similarity(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + MACHINE_EPS)
}

fn object_score(s: &SaliencyMap, g: &GroundTruthMask) -> f64 {
    let pairs = s.data().iter().zip(g.data());
    let fg = object_similarity(pairs.clone().filter(|(_, &b)| b).map(|(&v, _)| v));
    let bg = object_similarity(pairs.filter(|(_, &b)| !b).map(|(&v, _)| 1.0 - v));
    let u = g.mean();
    u * fg + (1.0 - u) * bg
}

/// Rounded centroid of the foreground in 1-based (column, row) coordinates,
/// i.e. the number of columns/rows in the left/top blocks.
fn centroid(g: &GroundTruthMask) -> (usize, usize) {
    let (h, w) = g.dims();
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (i, &b) in g.data().iter().enumerate() {
        if b {
            sx += (i % w + 1) as f64;
            sy += (i / w + 1) as f64;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return (((w as f64) / 2.0).round() as usize, ((h as f64) / 2.0).round() as usize);
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

fn region_score(s: &SaliencyMap, g: &GroundTruthMask) -> f64 {
    let (h, w) = g.dims();
    let (cx, cy) = centroid(g);
    let area = (h * w) as f64;
    let blocks = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut total = 0.0;
    for (y0, y1, x0, x1) in blocks {
        let n = (y1 - y0) * (x1 - x0);
        if n == 0 {
            continue;
        }
        let mut ps = Vec::with_capacity(n);
        let mut gs = Vec::with_capacity(n);
        for y in y0..y1 {
            for x in x0..x1 {
                ps.push(s.data()[y * w + x]);
                gs.push(if g.data()[y * w + x] { 1.0 } else { 0.0 });
            }
        }
        total += n as f64 / area * block_ssim(&ps, &gs);
    }
    total
}

/// Whole-block SSIM variant with the degenerate rules of the reference
/// evaluation code.
fn block_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let denom = n - 1.0 + MACHINE_EPS;
    let sx2 = p.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom;
    let sy2 = g.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + MACHINE_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> GroundTruthMask {
        GroundTruthMask::from_fn(10, 10, |i| {
            let (y, x) = (i / 10, i % 10);
            (2..6).contains(&y) && (3..8).contains(&x)
        })
        .unwrap()
    }

    #[test]
    fn perfect_structure_scores_one() {
        let g = blob();
        assert!((s_measure(&g.as_map(), &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_masks() {
        let empty = GroundTruthMask::new(4, 4, vec![false; 16]).unwrap();
        let zeros = SaliencyMap::new(4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(s_measure(&zeros, &empty).unwrap(), 1.0);
        let full = GroundTruthMask::new(4, 4, vec![true; 16]).unwrap();
        let quarter = SaliencyMap::new(4, 4, vec![0.25; 16]).unwrap();
        assert_eq!(s_measure(&quarter, &full).unwrap(), 0.25);
    }

    #[test]
    fn centroid_is_one_based() {
        let g = GroundTruthMask::new(1, 4, vec![false, false, false, true]).unwrap();
        assert_eq!(centroid(&g), (4, 1));
    }

    #[test]
    fn empty_blocks_are_skipped() {
        // Foreground in the last column puts the split at the right edge.
        let g = GroundTruthMask::from_fn(4, 4, |i| i % 4 == 3).unwrap();
        let v = s_measure(&g.as_map(), &g).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    }
}
