//! Binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CCKD"  u32 version  u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 rank, u32 extent * rank,
//!             f64 payload (row-major)
//! u64 checksum = sum of all payload bytes mod 2^64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Role};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CCKD";
pub const VERSION: u32 = 1;

/// Serialises `(name, tensor)` pairs into the container format.
pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|(_, t)| 8 * t.len()).sum();
    let mut out = Vec::with_capacity(payload + 64 * tensors.len() + 20);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut checksum: u64 = 0;
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            let bytes = v.to_le_bytes();
            checksum = bytes.iter().fold(checksum, |c, &b| c.wrapping_add(b as u64));
            out.extend_from_slice(&bytes);
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a container, verifying magic, version and checksum.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    let mut checksum: u64 = 0;
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_owned();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u32("extent")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?}: extents overflow")))?;
        let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX), "payload")?;
        checksum = raw.iter().fold(checksum, |c, &b| c.wrapping_add(b as u64));
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(dims, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, t));
    }
    let stored = {
        let b = r.take(8, "checksum")?;
        u64::from_le_bytes(b.try_into().expect("8 bytes"))
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    if stored != checksum {
        return Err(Error::ChecksumMismatch {
            stored,
            computed: checksum,
        });
    }
    Ok(tensors)
}

pub fn write_file(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

fn marker() -> Tensor {
    Tensor::from_vec(vec![0.0])
}

fn as_usizes(t: &Tensor, what: &str) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("{what}: {v} is not a count")))
            }
        })
        .collect()
}

/// Tensors describing a network: role, input shape, layer chain, parameters.
pub fn network_tensors(net: &Network) -> Vec<(String, Tensor)> {
    let mut out = vec![
        (format!("meta.role.{}", net.role().as_str()), marker()),
        (
            "meta.input".to_owned(),
            Tensor::from_vec(net.input_shape().iter().map(|&d| d as f64).collect()),
        ),
    ];
    for (i, layer) in net.layers().iter().enumerate() {
        let args: Vec<f64> = match *layer {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => vec![in_units as f64, out_units as f64],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => vec![in_channels as f64, out_channels as f64, kernel as f64],
            _ => vec![0.0],
        };
        out.push((format!("spec.{i}.{}", layer.kind()), Tensor::from_vec(args)));
    }
    for (name, p) in net.param_names().into_iter().zip(net.params()) {
        out.push((name, p.clone()));
    }
    out
}

/// Rebuilds a network from [`network_tensors`] output.
pub fn network_from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Network> {
    let mut role = None;
    let mut input = None;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for (name, t) in tensors {
        if let Some(r) = name.strip_prefix("meta.role.") {
            role = Some(Role::parse(r).ok_or_else(|| Error::Checkpoint(format!("unknown role {r:?}")))?);
        } else if name == "meta.input" {
            input = Some(as_usizes(&t, "input shape")?);
        } else if let Some(rest) = name.strip_prefix("spec.") {
            let (idx, kind) = rest
                .split_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("bad layer entry {name:?}")))?;
            if idx.parse::<usize>().ok() != Some(layers.len()) {
                return Err(Error::Checkpoint(format!("layer entry {name:?} out of order")));
            }
            let a = as_usizes(&t, &name)?;
            let layer = match (kind, &a[..]) {
                ("dense", &[i, o]) => LayerSpec::dense(i, o),
                ("conv2d", &[i, o, k]) => LayerSpec::Conv2d {
                    in_channels: i,
                    out_channels: o,
                    kernel: k,
                },
                ("maxpool2x2", _) => LayerSpec::MaxPool2x2,
                ("relu", _) => LayerSpec::Relu,
                ("flatten", _) => LayerSpec::Flatten,
                _ => return Err(Error::Checkpoint(format!("bad layer entry {name:?}"))),
            };
            layers.push(layer);
        } else if name.starts_with("layer") {
            params.push((name, t));
        } else {
            return Err(Error::Checkpoint(format!("unexpected tensor {name:?}")));
        }
    }
    let input = input.ok_or_else(|| Error::Checkpoint("missing input shape".into()))?;
    let role = role.ok_or_else(|| Error::Checkpoint("missing role".into()))?;
    let mut net = Network::zeroed(input, layers, role)
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let names = net.param_names();
    if names.len() != params.len() || names.iter().zip(&params).any(|(a, (b, _))| a != b) {
        return Err(Error::Checkpoint("parameter tensors do not match the layer chain".into()));
    }
    net.set_params(params.into_iter().map(|(_, t)| t).collect())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(net)
}

pub fn save_network(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    write_file(path, &network_tensors(net))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    network_from_tensors(read_file(path)?)
}
