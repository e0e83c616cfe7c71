use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::train::to_map;
use crate::data::{load_image, load_mask, load_saliency, save_saliency};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, Evaluation};
use crate::model::Model;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files of `dir` keyed by stem, in name order. Two files sharing a
/// stem are an error.
pub fn list_images(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !path.is_file() || !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "{} and {} share the name `{stem}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Wall time of one inferred image.
#[derive(Clone, Debug, PartialEq)]
pub struct InferRecord {
    pub name: String,
    pub millis: f64,
}

/// Writes one 8-bit PNG map per image of `images` into `out`, named after
/// the image stem. Maps are produced at the model's input size and resized
/// to the matching mask in `masks` when given, otherwise to the image's
/// native size.
pub fn infer(model: &Model<f32>, images: &Path, masks: Option<&Path>, out: &Path, mut on_image: impl FnMut(&InferRecord)) -> Result<Vec<InferRecord>> {
    let files = list_images(images, &IMAGE_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no images in {}", images.display())));
    }
    let mask_files = masks.map(|m| list_images(m, &["png"])).transpose()?;
    let mut records = Vec::with_capacity(files.len());
    for (name, path) in &files {
        let start = Instant::now();
        let img = load_image(path)?;
        let native = match &mask_files {
            Some(m) => {
                let mp = m
                    .get(name)
                    .ok_or_else(|| Error::Data(format!("no mask named `{name}` for {}", path.display())))?;
                load_mask(mp, None)?.dims()
            }
            None => (img.height, img.width),
        };
        let x = img.to_tensor(Some(model.config().input_size));
        let y = model.predict(&x)?;
        let map = to_map(&y, 0)?.resized(native.0, native.1)?;
        save_saliency(&map, &out.join(format!("{name}.png")))?;
        let rec = InferRecord {
            name: name.clone(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        };
        on_image(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Scores every prediction in `pred` against the same-named mask in `gt`.
/// Names present on only one side are all listed in the error.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<Evaluation> {
    let preds = list_images(pred, &["png"])?;
    let masks = list_images(gt, &["png"])?;
    let only_pred: Vec<&str> = preds.keys().filter(|k| !masks.contains_key(*k)).map(String::as_str).collect();
    let only_gt: Vec<&str> = masks.keys().filter(|k| !preds.contains_key(*k)).map(String::as_str).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        let mut msg = String::from("unmatched names:");
        if !only_pred.is_empty() {
            msg += &format!(" predictions without masks [{}]", only_pred.join(", "));
        }
        if !only_gt.is_empty() {
            msg += &format!(" masks without predictions [{}]", only_gt.join(", "));
        }
        return Err(Error::Data(msg));
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for (name, p) in &preds {
        pairs.push((name.clone(), load_saliency(p)?, load_mask(&masks[name], None)?));
    }
    evaluate_pairs(&pairs)
}
