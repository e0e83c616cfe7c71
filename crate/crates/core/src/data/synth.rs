use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codec::{encode_gray, encode_rgb, write, RgbImage};
use super::manifest::{Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};

pub const MIN_FOREGROUND: f64 = 0.02;
pub const MAX_FOREGROUND: f64 = 0.5;
const TRAIN_FRACTION_NUM: usize = 4;
const TRAIN_FRACTION_DEN: usize = 5;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Ellipse {
    fn random(r: &mut ChaCha8Rng, size: f64) -> Self {
        let angle = r.random_range(0.0..std::f64::consts::PI);
        Ellipse {
            cy: r.random_range(0.15 * size..0.85 * size),
            cx: r.random_range(0.15 * size..0.85 * size),
            ry: r.random_range(0.07 * size..0.28 * size),
            rx: r.random_range(0.07 * size..0.28 * size),
            cos: angle.cos(),
            sin: angle.sin(),
            color: [0; 3].map(|_| r.random_range(160.0..255.0)),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// One synthetic pair: noisy dark background with 1-3 bright ellipses; the
/// mask is the exact union of the ellipses (pixel centers).
pub fn synth_pair(r: &mut ChaCha8Rng, size: usize) -> (RgbImage, Vec<u8>) {
    let s = size as f64;
    let (shapes, mask) = loop {
        let count = r.random_range(1..=3);
        let shapes: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(r, s)).collect();
        let mask: Vec<bool> = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
                shapes.iter().any(|e| e.contains(y, x))
            })
            .collect();
        let frac = mask.iter().filter(|&&b| b).count() as f64 / (size * size) as f64;
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            break (shapes, mask);
        }
    };
    let base = [0; 3].map(|_| r.random_range(30.0..100.0));
    let mut pixels = Vec::with_capacity(3 * size * size);
    for i in 0..size * size {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        let inside = shapes.iter().rev().find(|e| e.contains(y, x));
        for c in 0..3 {
            let v = match inside {
                Some(e) => e.color[c] + r.random_range(-10.0..10.0),
                None => base[c] + r.random_range(-20.0..20.0),
            };
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let img = RgbImage {
        height: size,
        width: size,
        pixels,
    };
    (img, mask.into_iter().map(|b| if b { 255 } else { 0 }).collect())
}

/// Train and test manifests of a generated set.
#[derive(Clone, Debug)]
pub struct SynthSet {
    pub train: Manifest,
    pub test: Manifest,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Writes `n` pairs under `out/images` and `out/masks` plus `train.txt` and
/// `test.txt` (first 80% train, rest test).
pub fn synth_generate(n: usize, size: usize, seed: u64, out: &Path) -> Result<SynthSet> {
    if n == 0 {
        return Err(Error::arg("synthetic set needs at least one pair"));
    }
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::arg(format!("synthetic size {size} must be a positive multiple of 8")));
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let (img, mask) = synth_pair(&mut r, size);
        let name = format!("{i:05}.png");
        let entry = ManifestEntry {
            image: Path::new("images").join(&name),
            mask: Path::new("masks").join(&name),
        };
        write(&out.join(&entry.image), &encode_rgb(&img)?)?;
        write(&out.join(&entry.mask), &encode_gray(size, size, mask)?)?;
        entries.push(entry);
    }
    let n_train = (n * TRAIN_FRACTION_NUM / TRAIN_FRACTION_DEN).max(1);
    let test_entries = entries.split_off(n_train);
    let train = Manifest {
        root: out.to_path_buf(),
        split: Some(Split::Train),
        entries,
    };
    let test = Manifest {
        root: out.to_path_buf(),
        split: Some(Split::Test),
        entries: test_entries,
    };
    let (train_path, test_path) = (out.join("train.txt"), out.join("test.txt"));
    train.save(&train_path)?;
    test.save(&test_path)?;
    Ok(SynthSet {
        train,
        test,
        train_path,
        test_path,
    })
}
