//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "VNET" | u32 version | u32 header_len | header (UTF-8 key=value lines)
//! u32 block_count | per block: u32 name_len, name, 4 × u32 dims, f32 values
//! ```
//!
//! The header carries the network spec and training metadata. Blocks follow
//! the spec's declaration order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Network, NetworkSpec, Upsample};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VNET";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f32,
    /// `vessel`, `content` or `single`, when known.
    pub role: Option<String>,
    /// Annotation level of the output classes, when known.
    pub level: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, meta: TrainingMeta) -> Self {
        Checkpoint { network, meta }
    }

    fn header(&self) -> String {
        let spec = self.network.spec();
        let mut h = String::new();
        let _ = writeln!(h, "in_channels={}", spec.in_channels);
        match spec.seg_channels {
            Some(s) => {
                let _ = writeln!(h, "seg_channels={s}");
            }
            None => h.push_str("seg_channels=none\n"),
        }
        let widths: Vec<String> = spec.widths.iter().map(usize::to_string).collect();
        let _ = writeln!(h, "widths={}", widths.join(","));
        let _ = writeln!(h, "kernel={}", spec.kernel);
        let _ = writeln!(h, "classes={}", spec.num_classes);
        let _ = writeln!(h, "upsample={}", spec.upsample);
        let _ = writeln!(h, "seed={}", self.meta.seed);
        let _ = writeln!(h, "steps={}", self.meta.steps);
        let _ = writeln!(h, "final_loss={}", self.meta.final_loss);
        if let Some(role) = &self.meta.role {
            let _ = writeln!(h, "role={role}");
        }
        if let Some(level) = self.meta.level {
            let _ = writeln!(h, "level={level}");
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.network.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let blocks: Vec<_> = self.network.named_params().collect();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, t) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|_| Error::Header("header is not UTF-8".into()))?;
        let (spec, meta) = parse_header(header)?;
        let count = r.u32("block count")? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32("block name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "block name")?)
                .map_err(|_| Error::Header("block name is not UTF-8".into()))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("block dims")? as usize;
            }
            let shape = Shape::from(dims);
            let raw = r.take(shape.len() * 4, "block values")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push((name, Tensor::from_vec(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Header(format!(
                "{} trailing bytes after parameter blocks",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            network: Network::from_params(spec, params)?,
            meta,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("file ends inside {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_header(text: &str) -> Result<(NetworkSpec, TrainingMeta)> {
    let mut spec = NetworkSpec::plain(2);
    let mut meta = TrainingMeta::default();
    let mut seen = 0u32;
    let bad = |key: &str, value: &str| Error::Header(format!("bad value {value:?} for {key}"));
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("line without '=': {line:?}")))?;
        let num = || value.parse::<usize>().map_err(|_| bad(key, value));
        match key {
            "in_channels" => spec.in_channels = num()?,
            "seg_channels" => {
                spec.seg_channels = match value {
                    "none" => None,
                    _ => Some(num()?),
                }
            }
            "widths" => {
                spec.widths = value
                    .split(',')
                    .map(|w| w.parse().map_err(|_| bad(key, value)))
                    .collect::<Result<_>>()?
            }
            "kernel" => spec.kernel = num()?,
            "classes" => spec.num_classes = num()?,
            "upsample" => spec.upsample = value.parse::<Upsample>().map_err(|_| bad(key, value))?,
            "seed" => meta.seed = value.parse().map_err(|_| bad(key, value))?,
            "steps" => meta.steps = num()?,
            "final_loss" => meta.final_loss = value.parse().map_err(|_| bad(key, value))?,
            "role" => meta.role = Some(value.to_string()),
            "level" => meta.level = Some(value.parse().map_err(|_| bad(key, value))?),
            other => return Err(Error::Header(format!("unknown key {other:?}"))),
        }
        seen += 1;
    }
    if seen < 9 {
        return Err(Error::Header("missing required header keys".into()));
    }
    Ok((spec, meta))
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = ckpt.network.spec();
    if found != expected {
        return Err(Error::CheckpointShape(format!(
            "checkpoint has {} classes / seg {:?} / widths {:?}, expected {} classes / seg {:?} / widths {:?}",
            found.num_classes,
            found.seg_channels,
            found.widths,
            expected.num_classes,
            expected.seg_channels,
            expected.widths
        )));
    }
    Ok(ckpt)
}
