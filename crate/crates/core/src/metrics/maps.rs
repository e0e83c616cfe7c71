use crate::error::{Error, Result};
use crate::nn::resize_plane;

/// Single-channel prediction with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    /// Clamps every value into [0, 1]; non-finite values are rejected.
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        check_len("saliency map", h, w, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "saliency map".into(),
            });
        }
        Ok(SaliencyMap {
            h,
            w,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_fn(h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new(h, w, (0..h * w).map(f).collect())
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear resize (half-pixel centers).
    pub fn resized(&self, h: usize, w: usize) -> Result<Self> {
        if (h, w) == (self.h, self.w) {
            return Ok(self.clone());
        }
        Self::new(h, w, resize_plane(&self.data, self.h, self.w, h, w))
    }
}

/// Binary reference mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        check_len("mask", h, w, data.len())?;
        Ok(GroundTruthMask { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, f: impl FnMut(usize) -> bool) -> Result<Self> {
        Self::new(h, w, (0..h * w).map(f).collect())
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn mean(&self) -> f64 {
        self.foreground() as f64 / self.data.len() as f64
    }

    pub fn as_map(&self) -> SaliencyMap {
        SaliencyMap {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Nearest-neighbor resize, so the result stays binary.
    pub fn resized(&self, h: usize, w: usize) -> Result<Self> {
        if (h, w) == (self.h, self.w) {
            return Ok(self.clone());
        }
        let ys = nearest_taps(self.h, h);
        let xs = nearest_taps(self.w, w);
        let data = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
            .map(|(y, x)| self.data[y * self.w + x])
            .collect();
        Self::new(h, w, data)
    }
}

/// Source index per destination index for nearest-neighbor resizing.
pub(crate) fn nearest_taps(input: usize, output: usize) -> Vec<usize> {
    (0..output)
        .map(|d| (((d as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1))
        .collect()
}

fn check_len(what: &str, h: usize, w: usize, len: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::shape(format!("{what} must be non-empty, got {h}x{w}")));
    }
    if len != h * w {
        return Err(Error::shape(format!("{what} of {h}x{w} given {len} values")));
    }
    Ok(())
}

pub(crate) fn check_pair(s: &SaliencyMap, g: &GroundTruthMask) -> Result<()> {
    if s.dims() != g.dims() {
        return Err(Error::shape(format!(
            "saliency map {}x{} vs mask {}x{}",
            s.h, s.w, g.h, g.w
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_on_construction() {
        let s = SaliencyMap::new(1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(s.data(), &[0.0, 0.5, 1.0]);
        assert!(SaliencyMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(SaliencyMap::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn nearest_resize_stays_binary() {
        let g = GroundTruthMask::from_fn(4, 4, |i| i % 4 >= 2).unwrap();
        let r = g.resized(8, 2).unwrap();
        assert_eq!(r.dims(), (8, 2));
        assert_eq!(r.data().iter().filter(|&&b| b).count(), 8);
        assert!(!r.data()[0] && r.data()[1]);
    }
}
