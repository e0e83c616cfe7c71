//! Flat binary container: a text header of named arrays followed by their
//! little-endian payload in header order.
//!
//! ```text
//! DDNETCKPT 1
//! config <nbytes>
//! <nbytes of model config TOML>
//! param stem.conv.weight 16x3x7x7 f32
//! buffer stem.norm.running_mean 1x16x1x1 f32
//! ...
//! end
//! <payload>
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::config::ModelConfig;
use super::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

pub const CHECKPOINT_MAGIC: &str = "DDNETCKPT 1";
const MAX_ENTRIES: usize = 1 << 20;
const MAX_CONFIG_BYTES: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Param,
    Buffer,
}

impl EntryKind {
    fn tag(self) -> &'static str {
        match self {
            EntryKind::Param => "param",
            EntryKind::Buffer => "buffer",
        }
    }
}

/// One named array. Values are widened to f64, which is exact for f32 data.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub kind: EntryKind,
    pub name: String,
    pub dims: Dims,
    /// Scalar width in bytes on disk, 4 or 8.
    pub width: usize,
    pub values: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub entries: Vec<CheckpointEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Decode(format!("checkpoint: {}", msg.into()))
}

fn width_name(width: usize) -> &'static str {
    if width == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<&str> = s.split('x').collect();
    let [n, c, h, w] = parts[..] else {
        return Err(bad(format!("dims `{s}` must be NxCxHxW")));
    };
    let v = [n, c, h, w].map(|p| p.parse::<usize>().ok().filter(|&v| v > 0));
    match v {
        [Some(n), Some(c), Some(h), Some(w)] => {
            n.checked_mul(c)
                .and_then(|v| v.checked_mul(h))
                .and_then(|v| v.checked_mul(w))
                .ok_or_else(|| bad(format!("dims `{s}` overflow")))?;
            Ok(Dims::new(n, c, h, w))
        }
        _ => Err(bad(format!("dims `{s}` must be positive integers"))),
    }
}

/// Splits off one LF-terminated line.
fn take_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    Ok((line, &bytes[end + 1..]))
}

/// Parses and validates a checkpoint byte stream without building a model.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (magic, rest) = take_line(bytes)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("missing magic line"));
    }
    let (line, rest) = take_line(rest)?;
    let n = line
        .strip_prefix("config ")
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n <= MAX_CONFIG_BYTES)
        .ok_or_else(|| bad("expected `config <nbytes>`"))?;
    if rest.len() < n + 1 || rest[n] != b'\n' {
        return Err(bad("truncated config"));
    }
    let text = std::str::from_utf8(&rest[..n]).map_err(|_| bad("config is not UTF-8"))?;
    let config = ModelConfig::from_toml(text)?;
    let mut rest = &rest[n + 1..];

    let mut headers = Vec::new();
    loop {
        let (line, tail) = take_line(rest)?;
        rest = tail;
        if line == "end" {
            break;
        }
        if headers.len() == MAX_ENTRIES {
            return Err(bad("too many entries"));
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let [tag, name, dims, width] = fields[..] else {
            return Err(bad(format!("malformed entry `{line}`")));
        };
        let kind = match tag {
            "param" => EntryKind::Param,
            "buffer" => EntryKind::Buffer,
            _ => return Err(bad(format!("unknown entry kind `{tag}`"))),
        };
        if name.is_empty() {
            return Err(bad("empty entry name"));
        }
        let width = match width {
            "f32" => 4,
            "f64" => 8,
            _ => return Err(bad(format!("unknown scalar type `{width}`"))),
        };
        headers.push((kind, name.to_string(), parse_dims(dims)?, width));
    }

    let mut needed = 0usize;
    for (_, _, d, w) in &headers {
        needed = d
            .len()
            .checked_mul(*w)
            .and_then(|b| needed.checked_add(b))
            .ok_or_else(|| bad("payload size overflows"))?;
    }
    if rest.len() != needed {
        return Err(bad(format!("payload has {} bytes, header describes {needed}", rest.len())));
    }
    let mut entries = Vec::with_capacity(headers.len());
    for (kind, name, dims, width) in headers {
        let (chunk, tail) = rest.split_at(dims.len() * width);
        rest = tail;
        let values = if width == 4 {
            chunk.chunks_exact(4).map(|b| f64::from(f32::read_le(b))).collect()
        } else {
            chunk.chunks_exact(8).map(f64::read_le).collect()
        };
        entries.push(CheckpointEntry {
            kind,
            name,
            dims,
            width,
            values,
        });
    }
    Ok(Checkpoint { config, entries })
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::Config(format!("checkpoint/config mismatch: {}", msg.into()))
}

impl<T: Scalar> Model<T> {
    fn named_arrays(&self) -> Vec<(EntryKind, String, Dims, Vec<T>)> {
        let mut out: Vec<_> = self
            .params()
            .iter()
            .map(|p| (EntryKind::Param, p.name.clone(), p.value.dims(), p.value.data().to_vec()))
            .collect();
        for b in self.buffers() {
            let d = Dims::new(1, b.stats.channels(), 1, 1);
            out.push((EntryKind::Buffer, format!("{}.running_mean", b.name), d, b.stats.mean.clone()));
            out.push((EntryKind::Buffer, format!("{}.running_var", b.name), d, b.stats.var.clone()));
        }
        out
    }

    /// Serialized checkpoint; identical models give identical bytes.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let config = self.config().to_toml();
        let arrays = self.named_arrays();
        let mut out = format!("{CHECKPOINT_MAGIC}\nconfig {}\n{config}\n", config.len()).into_bytes();
        for (kind, name, d, _) in &arrays {
            out.extend(format!("{} {name} {}x{}x{}x{} {}\n", kind.tag(), d.n, d.c, d.h, d.w, width_name(T::WIDTH)).bytes());
        }
        out.extend(b"end\n");
        for (_, _, _, values) in &arrays {
            for &v in values {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Rebuilds the network from a decoded checkpoint. Every array the
    /// config implies must be present with matching dims, and nothing else.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::<T>::build(&ckpt.config, 0)?;
        let mut by_name: HashMap<(EntryKind, &str), &CheckpointEntry> = HashMap::with_capacity(ckpt.entries.len());
        for e in &ckpt.entries {
            if by_name.insert((e.kind, e.name.as_str()), e).is_some() {
                return Err(mismatch(format!("duplicate entry `{}`", e.name)));
            }
        }
        let expected = model.named_arrays();
        if expected.len() != ckpt.entries.len() {
            return Err(mismatch(format!(
                "checkpoint holds {} arrays, config implies {}",
                ckpt.entries.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        for (kind, name, dims, _) in &expected {
            let e = by_name
                .get(&(*kind, name.as_str()))
                .ok_or_else(|| mismatch(format!("missing {} `{name}`", kind.tag())))?;
            if e.dims != *dims {
                return Err(mismatch(format!("`{name}` has dims {}, config implies {dims}", e.dims)));
            }
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: format!("checkpoint entry {name}"),
                });
            }
            values.push(e.values.iter().map(|&v| T::c(v)).collect::<Vec<T>>());
        }
        let n_params = model.params().len();
        let (pv, bv) = values.split_at(n_params);
        for (p, v) in model.params_mut().iter_mut().zip(pv) {
            p.value = Tensor4::from_vec(p.value.dims(), v.clone())?;
        }
        for (b, pair) in model.buffers_mut().iter_mut().zip(bv.chunks_exact(2)) {
            b.stats.mean = pair[0].clone();
            b.stats.var = pair[1].clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_file(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = decode_checkpoint(&bytes).map_err(|e| match e {
            Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Self::from_checkpoint(&ckpt)
    }
}
