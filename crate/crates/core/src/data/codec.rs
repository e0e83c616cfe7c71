use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, Limits};

use crate::error::{Error, Result};
use crate::metrics::{nearest_taps, GroundTruthMask, SaliencyMap};
use crate::nn::resize_plane;
use crate::tensor::Tensor4;

/// Largest accepted side, in pixels, for any decoded file.
pub const MAX_SIDE: u32 = 8192;
/// Mask pixels at or above this value are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// Decoded 8-bit RGB pixels, row-major and interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// (1, 3, h, w) view scaled by 1/255, resized bilinearly when `size`
    /// differs from the native dims.
    pub fn to_tensor(&self, size: Option<(usize, usize)>) -> Tensor4<f32> {
        let (h, w) = (self.height, self.width);
        let (oh, ow) = size.unwrap_or((h, w));
        let mut data = Vec::with_capacity(3 * oh * ow);
        for c in 0..3 {
            let plane: Vec<f32> = self.pixels.iter().skip(c).step_by(3).map(|&v| v as f32 / 255.0).collect();
            if (oh, ow) == (h, w) {
                data.extend(plane);
            } else {
                data.extend(resize_plane(&plane, h, w, oh, ow));
            }
        }
        Tensor4::from_vec((1, 3, oh, ow), data).expect("plane sizes match dims")
    }
}

fn limits() -> Limits {
    let mut l = Limits::default();
    l.max_image_width = Some(MAX_SIDE);
    l.max_image_height = Some(MAX_SIDE);
    l.max_alloc = Some(256 * 1024 * 1024);
    l
}

fn decode(bytes: &[u8], only_png: bool) -> Result<DynamicImage> {
    let mut reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) => {}
        Some(ImageFormat::Jpeg) if !only_png => {}
        Some(f) => return Err(Error::Decode(format!("unsupported format {f:?}"))),
        None => return Err(Error::Decode("unrecognized image format".into())),
    }
    reader.limits(limits());
    let img = reader.decode().map_err(|e| Error::Decode(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Decode("image has no pixels".into()));
    }
    Ok(img)
}

/// Decodes a PNG or JPEG into 8-bit RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode(bytes, false)?.to_rgb8();
    Ok(RgbImage {
        height: img.height() as usize,
        width: img.width() as usize,
        pixels: img.into_raw(),
    })
}

/// Decodes a PNG and keeps its first channel (luma for gray images, red
/// otherwise) as 8-bit values: (h, w, values).
pub fn decode_gray(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode(bytes, true)?;
    let (h, w) = (img.height() as usize, img.width() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other.to_rgba8().pixels().map(|p| p.0[0]).collect(),
    };
    Ok((h, w, values))
}

/// Decodes a PNG mask, nearest-resizes it and binarizes at 128.
pub fn decode_mask(bytes: &[u8], size: Option<(usize, usize)>) -> Result<GroundTruthMask> {
    let (h, w, v) = decode_gray(bytes)?;
    let (oh, ow) = size.unwrap_or((h, w));
    let ys = nearest_taps(h, oh);
    let xs = nearest_taps(w, ow);
    let data = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .map(|(y, x)| v[y * w + x] >= MASK_THRESHOLD)
        .collect();
    GroundTruthMask::new(oh, ow, data)
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    decode_image(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn load_mask(path: &Path, size: Option<(usize, usize)>) -> Result<GroundTruthMask> {
    decode_mask(&read(path)?, size).map_err(|e| with_path(e, path))
}

/// Reads an 8-bit map back as values / 255.
pub fn load_saliency(path: &Path) -> Result<SaliencyMap> {
    let (h, w, v) = decode_gray(&read(path)?).map_err(|e| with_path(e, path))?;
    SaliencyMap::new(h, w, v.into_iter().map(|b| b as f64 / 255.0).collect())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// 8-bit value of a saliency level: round(255 s), halves rounded up.
pub fn quantize(s: f64) -> u8 {
    (255.0 * s.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Encodes a map as an 8-bit single-channel PNG.
pub fn encode_saliency(map: &SaliencyMap) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = map.data().iter().map(|&v| quantize(v)).collect();
    encode_gray(map.height(), map.width(), pixels)
}

pub(crate) fn encode_gray(h: usize, w: usize, pixels: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).ok_or_else(|| Error::shape("gray buffer size"))?;
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

pub(crate) fn encode_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| Error::shape("rgb buffer size"))?;
    let mut out = Vec::new();
    buf.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_saliency(map: &SaliencyMap, path: &Path) -> Result<()> {
    write(path, &encode_saliency(map)?)
}
