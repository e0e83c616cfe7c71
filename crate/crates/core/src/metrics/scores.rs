use super::maps::{check_pair, GroundTruthMask, SaliencyMap};
use crate::error::Result;

pub const F_BETA2: f64 = 0.3;
pub const E_EPSILON: f64 = 1e-12;

/// Binarization level: in [0,1], twice the mean saliency, capped at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Adaptive,
    Fixed(f64),
}

impl Threshold {
    pub fn level(self, s: &SaliencyMap) -> f64 {
        match self {
            Threshold::Adaptive => (2.0 * s.mean()).min(1.0),
            Threshold::Fixed(t) => t,
        }
    }
}

/// `s >= t`, with zero saliency never counted as a detection. Without the
/// second condition an all-zero map (adaptive level 0) would predict every
/// pixel as foreground.
pub fn binarize(s: &SaliencyMap, threshold: Threshold) -> Vec<bool> {
    let t = threshold.level(s);
    s.data().iter().map(|&v| v >= t && v > 0.0).collect()
}

pub fn mae(s: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_pair(s, g)?;
    let total: f64 = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &b)| (v - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / s.data().len() as f64)
}

/// F-beta (beta^2 = 0.3) of the binarized map.
pub fn f_measure(s: &SaliencyMap, g: &GroundTruthMask, threshold: Threshold) -> Result<f64> {
    check_pair(s, g)?;
    let bin = binarize(s, threshold);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in bin.iter().zip(g.data()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp == 0 || tp + fn_ == 0 || tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    Ok((1.0 + F_BETA2) * p * r / (F_BETA2 * p + r))
}

/// Enhanced-alignment score of the adaptively binarized map.
pub fn e_measure(s: &SaliencyMap, g: &GroundTruthMask) -> Result<f64> {
    check_pair(s, g)?;
    let bin: Vec<f64> = binarize(s, Threshold::Adaptive)
        .into_iter()
        .map(|b| if b { 1.0 } else { 0.0 })
        .collect();
    let n = bin.len() as f64;
    let mean_s = bin.iter().sum::<f64>() / n;
    let fg = g.foreground();
    if fg == 0 {
        return Ok(1.0 - mean_s);
    }
    if fg == g.data().len() {
        return Ok(mean_s);
    }
    let mean_g = g.mean();
    let total: f64 = bin
        .iter()
        .zip(g.data())
        .map(|(&sv, &b)| {
            let pg = if b { 1.0 } else { 0.0 } - mean_g;
            let ps = sv - mean_s;
            let xi = 2.0 * pg * ps / (pg * pg + ps * ps + E_EPSILON);
            (xi + 1.0) * (xi + 1.0) / 4.0
        })
        .sum();
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, v: &[u8]) -> GroundTruthMask {
        GroundTruthMask::new(h, w, v.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let s = map(2, 2, &[0.5, 0.0, 1.0, 1.0]);
        let g = mask(2, 2, &[1, 0, 1, 0]);
        assert!((mae(&s, &g).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(mae(&g.as_map(), &g).unwrap(), 0.0);
        assert_eq!(mae(&map(1, 2, &[1.0, 1.0]), &mask(1, 2, &[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn f_measure_examples() {
        let g = mask(1, 4, &[1, 0, 0, 0]);
        assert_eq!(f_measure(&g.as_map(), &g, Threshold::Adaptive).unwrap(), 1.0);
        // Two detections, one correct: P = 0.5, R = 1.
        let s = map(1, 4, &[1.0, 1.0, 0.0, 0.0]);
        let f = f_measure(&s, &g, Threshold::Fixed(0.5)).unwrap();
        assert!((f - 1.3 * 0.5 / (0.15 + 1.0)).abs() < 1e-15);
        assert_eq!(f_measure(&map(1, 4, &[0.0; 4]), &g, Threshold::Adaptive).unwrap(), 0.0);
        assert_eq!(f_measure(&s, &mask(1, 4, &[0; 4]), Threshold::Adaptive).unwrap(), 0.0);
    }

    #[test]
    fn e_measure_examples() {
        let g = mask(2, 3, &[1, 1, 0, 0, 0, 1]);
        assert!((e_measure(&g.as_map(), &g).unwrap() - 1.0).abs() < 1e-10);
        let inv = map(2, 3, &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(e_measure(&inv, &g).unwrap() < 1e-20);
        let empty = mask(2, 3, &[0; 6]);
        assert_eq!(e_measure(&map(2, 3, &[0.0; 6]), &empty).unwrap(), 1.0);
        let full = mask(2, 3, &[1; 6]);
        assert_eq!(e_measure(&map(2, 3, &[0.0; 6]), &full).unwrap(), 0.0);
    }

    #[test]
    fn adaptive_level_is_capped() {
        assert_eq!(Threshold::Adaptive.level(&map(1, 2, &[0.9, 0.8])), 1.0);
        assert_eq!(Threshold::Adaptive.level(&map(1, 2, &[0.1, 0.2])), 0.30000000000000004);
    }
}
