//! Weight container.
//!
//! ```text
//! "CAEW" | version u32 | config length u32 | config (UTF-8 key=value lines)
//! | entry count u32 | entries
//! entry: name length u16 | name | ndim u8 | dims u32 × ndim | f64 × Π dims
//! ```
//!
//! All integers and floats are little-endian. The config carries the
//! architecture (one layer token per convolution, `;`-separated) and λ, so a
//! file fully describes its model.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayerSpec, Direction, Padding};
use crate::transforms::{ArchConfig, ModelWeights, Profile};

pub const MAGIC: &[u8; 4] = b"CAEW";
pub const VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn layer_token(s: &ConvLayerSpec) -> String {
    let dir = match s.direction {
        Direction::Down => "down",
        Direction::Up => "up",
    };
    let act = match s.activation {
        Activation::Gdn => "gdn",
        Activation::Igdn => "igdn",
        Activation::Relu => "relu",
        Activation::Exp => "exp",
        Activation::Linear => "linear",
    };
    let pad = match s.padding {
        Padding::Same => "same",
        Padding::Valid => "valid",
    };
    format!("{}x{}x{}/{}:{dir}:{act}:{pad}", s.filter_count, s.filter_h, s.filter_w, s.stride)
}

pub fn parse_layer_token(t: &str) -> Result<ConvLayerSpec> {
    let bad = || fmt_err(format!("bad layer token '{t}'"));
    let parts: Vec<&str> = t.trim().split(':').collect();
    let [shape, dir, act, pad] = parts[..] else {
        return Err(bad());
    };
    let (dims, stride) = shape.split_once('/').ok_or_else(bad)?;
    let dims: Vec<usize> = dims.split('x').map(|d| d.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let [filter_count, filter_h, filter_w] = dims[..] else {
        return Err(bad());
    };
    let spec = ConvLayerSpec {
        filter_count,
        filter_h,
        filter_w,
        stride: stride.parse().map_err(|_| bad())?,
        direction: match dir {
            "down" => Direction::Down,
            "up" => Direction::Up,
            _ => return Err(bad()),
        },
        activation: match act {
            "gdn" => Activation::Gdn,
            "igdn" => Activation::Igdn,
            "relu" => Activation::Relu,
            "exp" => Activation::Exp,
            "linear" => Activation::Linear,
            _ => return Err(bad()),
        },
        padding: match pad {
            "same" => Padding::Same,
            "valid" => Padding::Valid,
            _ => return Err(bad()),
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn layers(v: &[ConvLayerSpec]) -> String {
    v.iter().map(layer_token).collect::<Vec<_>>().join(";")
}

pub fn config_text(arch: &ArchConfig, lambda: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "profile={}", arch.profile.name());
    let _ = writeln!(s, "n={}", arch.n);
    let _ = writeln!(s, "m={}", arch.m);
    match arch.split {
        Some((a, b)) => {
            let _ = writeln!(s, "split={a},{b}");
        }
        None => {
            let _ = writeln!(s, "split=none");
        }
    }
    // `{}` on f64 prints the shortest string that parses back exactly.
    let _ = writeln!(s, "lambda={lambda}");
    for (k, v) in [("ga", &arch.ga), ("gs", &arch.gs), ("ha", &arch.ha), ("hs", &arch.hs), ("f", &arch.f)] {
        let _ = writeln!(s, "{k}={}", layers(v));
    }
    s
}

pub fn parse_config_text(text: &str) -> Result<(ArchConfig, f64)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| fmt_err(format!("config line without '=': {line}")))?;
        map.insert(k.trim(), v.trim());
    }
    let get = |k: &str| map.get(k).copied().ok_or_else(|| fmt_err(format!("config is missing '{k}'")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| fmt_err(format!("config '{k}' is not a count"))) };
    let profile = Profile::from_name(get("profile")?)?;
    let split = match get("split")? {
        "none" => None,
        s => {
            let (a, b) = s.split_once(',').ok_or_else(|| fmt_err("split must be 'none' or 'M1,M2'"))?;
            Some((
                a.parse().map_err(|_| fmt_err("bad split"))?,
                b.parse().map_err(|_| fmt_err("bad split"))?,
            ))
        }
    };
    let lambda: f64 = get("lambda")?.parse().map_err(|_| fmt_err("bad lambda"))?;
    let list = |k: &str| -> Result<Vec<ConvLayerSpec>> { get(k)?.split(';').map(parse_layer_token).collect() };
    let arch = ArchConfig {
        profile,
        n: num("n")?,
        m: num("m")?,
        split,
        ga: list("ga")?,
        gs: list("gs")?,
        ha: list("ha")?,
        hs: list("hs")?,
        f: list("f")?,
    };
    arch.validate()?;
    Ok((arch, lambda))
}

pub fn to_bytes(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_text(&w.arch, w.lambda);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let params = w.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| fmt_err(format!("weight file truncated at byte {}", self.at)))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(b: &[u8]) -> Result<ModelWeights> {
    let mut c = Cursor { b, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(fmt_err("not a weight file (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported weight file version {version}")));
    }
    let len = c.u32()? as usize;
    let cfg = std::str::from_utf8(c.take(len)?).map_err(|_| fmt_err("config is not UTF-8"))?;
    let (arch, lambda) = parse_config_text(cfg)?;
    let mut w = ModelWeights::init(arch, lambda, 0)?;
    let count = c.u32()? as usize;
    let mut params = w.params_mut();
    if count != params.len() {
        return Err(Error::ConfigMismatch(format!(
            "weight file has {count} entries, architecture needs {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|_| fmt_err("entry name is not UTF-8"))?;
        if name != p.name {
            return Err(Error::ConfigMismatch(format!("expected entry '{}', found '{name}'", p.name)));
        }
        let ndim = c.u8()? as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        if dims != p.shape {
            return Err(Error::ConfigMismatch(format!(
                "entry '{name}' has shape {dims:?}, architecture needs {:?}",
                p.shape
            )));
        }
        let raw = c.take(8 * p.data.len())?;
        for (v, chunk) in p.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if c.at != b.len() {
        return Err(fmt_err(format!("{} trailing bytes after last entry", b.len() - c.at)));
    }
    w.check_finite()?;
    Ok(w)
}

pub fn save(path: &Path, w: &ModelWeights) -> Result<()> {
    crate::image::write_atomic(path, &to_bytes(w))
}

pub fn load(path: &Path) -> Result<ModelWeights> {
    from_bytes(&std::fs::read(path)?)
}
