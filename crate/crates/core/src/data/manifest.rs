use std::fmt;
use std::path::{Component, Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One image/mask pair, paths relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

impl ManifestEntry {
    /// The shared file stem, used as the pair's name.
    pub fn name(&self) -> String {
        stem(&self.image)
    }
}

/// Ordered list of pairs under a root directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub split: Option<Split>,
    pub entries: Vec<ManifestEntry>,
}

const SPLIT_TAG: &str = "# split:";

pub(crate) fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn relative(raw: &str, line: usize) -> Result<PathBuf> {
    let p = PathBuf::from(raw);
    let bad = raw.is_empty()
        || p.components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if bad {
        return Err(Error::Data(format!(
            "manifest line {line}: `{raw}` must be a relative path inside the root"
        )));
    }
    Ok(p)
}

impl Manifest {
    /// Parses manifest text: one `image<TAB>mask` pair per line, `#` comments,
    /// blank lines ignored, an optional `# split: train|test` tag.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut split = None;
        let mut entries = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            let n = i + 1;
            if line.contains('\r') {
                return Err(Error::Data(format!("manifest line {n}: CR line endings are not accepted")));
            }
            if let Some(tag) = line.strip_prefix(SPLIT_TAG) {
                split = Some(match tag.trim() {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => return Err(Error::Data(format!("manifest line {n}: unknown split `{other}`"))),
                });
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(img), Some(mask), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Data(format!(
                    "manifest line {n}: expected `image<TAB>mask`"
                )));
            };
            let entry = ManifestEntry {
                image: relative(img, n)?,
                mask: relative(mask, n)?,
            };
            if stem(&entry.image) != stem(&entry.mask) {
                return Err(Error::Data(format!(
                    "manifest line {n}: image `{img}` and mask `{mask}` have different names"
                )));
            }
            entries.push(entry);
        }
        Ok(Manifest {
            root: root.into(),
            split,
            entries,
        })
    }

    /// Reads a manifest file; entries are relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Data(format!("{}: manifest is not UTF-8", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(s) = self.split {
            out.push_str(&format!("{SPLIT_TAG} {s}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\n", e.image.display(), e.mask.display()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::codec::write(path, self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].image)
    }

    pub fn mask_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].mask)
    }
}
