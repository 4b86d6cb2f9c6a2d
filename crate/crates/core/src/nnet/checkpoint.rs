//! "LSUN" checkpoint files: network tensors, configuration and optimizer state.
//!
//! Layout: magic, u32 version, u32 tensor count, then per tensor
//! `{u16 name length, name, u8 ndim, u32 dims.., f32 LE data}`; an optimizer block
//! with the same framing (possibly empty) follows.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::layers::Module;
use super::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSUN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn scalar(name: &str, v: f64) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![1],
            data: vec![v],
        }
    }
}

fn write_block(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize || t.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("tensor {} cannot be framed", t.name)));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::format(self.path, "truncated checkpoint")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn block(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| Error::format(self.path, "tensor name is not UTF-8"))?;
            let ndim = self.take(1)?[0] as usize;
            let dims = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::format(self.path, format!("tensor {name} too large")))?;
            let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "tensor too large"))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            out.push(NamedTensor { name, dims, data });
        }
        Ok(out)
    }
}

fn network_tensors(net: &mut UNet) -> Vec<NamedTensor> {
    let cfg = net.config;
    let mut out: Vec<NamedTensor> = net
        .params_mut()
        .into_iter()
        .map(|p| NamedTensor {
            name: p.name.clone(),
            dims: p.shape.clone(),
            data: p.data.clone(),
        })
        .collect();
    for (name, buf) in net.buffers_mut() {
        out.push(NamedTensor {
            name,
            dims: vec![buf.len()],
            data: buf.clone(),
        });
    }
    out.push(NamedTensor::scalar("meta.depth", cfg.depth as f64));
    out.push(NamedTensor::scalar("meta.base_channels", cfg.base_channels as f64));
    out.push(NamedTensor::scalar("meta.ls_skip", if cfg.ls_skip { 1.0 } else { 0.0 }));
    out.push(NamedTensor::scalar("meta.leaky_slope", cfg.leaky_slope));
    out
}

fn adam_tensors(adam: &AdamState, names: &[(String, Vec<usize>)]) -> Vec<NamedTensor> {
    if adam.m.is_empty() {
        return Vec::new();
    }
    let mut out = vec![
        NamedTensor::scalar("adam.lr", adam.lr),
        NamedTensor::scalar("adam.beta1", adam.beta1),
        NamedTensor::scalar("adam.beta2", adam.beta2),
        NamedTensor::scalar("adam.eps", adam.eps),
        NamedTensor::scalar("adam.step", adam.step as f64),
    ];
    for ((name, dims), (m, v)) in names.iter().zip(adam.m.iter().zip(&adam.v)) {
        out.push(NamedTensor {
            name: format!("adam.m.{name}"),
            dims: dims.clone(),
            data: m.clone(),
        });
        out.push(NamedTensor {
            name: format!("adam.v.{name}"),
            dims: dims.clone(),
            data: v.clone(),
        });
    }
    out
}

/// Serializes a network and (optionally) its optimizer state.
pub fn checkpoint_bytes(net: &mut UNet, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    write_block(&mut out, &network_tensors(net))?;
    let names: Vec<(String, Vec<usize>)> =
        net.params_mut().iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    let opt = adam.map(|a| adam_tensors(a, &names)).unwrap_or_default();
    write_block(&mut out, &opt)?;
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &mut UNet, adam: Option<&AdamState>) -> Result<()> {
    fs::write(path, checkpoint_bytes(net, adam)?)?;
    Ok(())
}

/// Reads a scalar stored as f32, recovering the shortest decimal it was written
/// from (so 0.2 comes back as 0.2 rather than 0.20000000298).
fn scalar(tensors: &[NamedTensor], name: &str, path: &Path) -> Result<f64> {
    let v = tensors
        .iter()
        .find(|t| t.name == name)
        .and_then(|t| t.data.first().copied())
        .ok_or_else(|| Error::format(path, format!("missing {name}")))?;
    Ok((v as f32).to_string().parse().unwrap_or(v))
}

/// Loads a network and, when present, its optimizer state.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNet, Option<AdamState>)> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not an LSUN checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let tensors = r.block()?;
    let opt = r.block()?;

    let config = UNetConfig {
        depth: scalar(&tensors, "meta.depth", path)? as usize,
        base_channels: scalar(&tensors, "meta.base_channels", path)? as usize,
        ls_skip: scalar(&tensors, "meta.ls_skip", path)? != 0.0,
        leaky_slope: scalar(&tensors, "meta.leaky_slope", path)?,
    };
    let mut net = UNet::new(config, 0)?;
    let find = |name: &str, len: usize| -> Result<&NamedTensor> {
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if t.data.len() != len {
            return Err(Error::format(path, format!("tensor {name} has {} values, expected {len}", t.data.len())));
        }
        Ok(t)
    };
    let mut names = Vec::new();
    for p in net.params_mut() {
        let len = p.data.len();
        p.data.copy_from_slice(&find(&p.name, len)?.data);
        names.push(p.name.clone());
    }
    for (name, buf) in net.buffers_mut() {
        let len = buf.len();
        buf.copy_from_slice(&find(&name, len)?.data);
    }

    let adam = if opt.is_empty() {
        None
    } else {
        let mut a = AdamState::new(scalar(&opt, "adam.lr", path)?);
        a.beta1 = scalar(&opt, "adam.beta1", path)?;
        a.beta2 = scalar(&opt, "adam.beta2", path)?;
        a.eps = scalar(&opt, "adam.eps", path)?;
        a.step = scalar(&opt, "adam.step", path)? as u64;
        for n in &names {
            let get = |prefix: &str| {
                opt.iter()
                    .find(|t| t.name == format!("{prefix}.{n}"))
                    .map(|t| t.data.clone())
                    .ok_or_else(|| Error::format(path, format!("missing {prefix}.{n}")))
            };
            a.m.push(get("adam.m")?);
            a.v.push(get("adam.v")?);
        }
        Some(a)
    };
    Ok((net, adam))
}
