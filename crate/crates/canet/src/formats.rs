//! Binary exchange formats.
//!
//! `CTNSR1` raw tensors, `CANW1` weight files, and 8-bit PGM (P5) / PPM (P6)
//! images. Every integer is little-endian; every float is f32.

use std::fs;
use std::path::Path;

use canet_core::model::CanetConfig;
use canet_core::params::{running_mean_name, running_var_name};
use canet_core::{ParamStore, Tensor};

use crate::error::{Error, FormatError, Result};

const CTNSR_MAGIC: &[u8; 6] = b"CTNSR1";
const CANW_MAGIC: &[u8; 6] = b"CANW1\0";
const MAX_RANK: usize = 8;

fn bad(msg: impl Into<String>) -> FormatError {
    FormatError(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(bad(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn shape(&mut self) -> Result<Vec<usize>, FormatError> {
        let rank = self.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        (0..rank).map(|_| self.u32("extent").map(|v| v as usize)).collect()
    }

    fn floats(&mut self, shape: &[usize]) -> Result<Tensor<f32>, FormatError> {
        let n = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| bad("element count overflows"))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| bad("element count overflows"))?, "tensor data")?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(shape, data).map_err(|e| bad(e.to_string()))
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn put_floats(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_ctnsr(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * (t.shape().len() + t.numel()));
    out.extend_from_slice(CTNSR_MAGIC);
    put_shape(&mut out, t.shape());
    put_floats(&mut out, t.data());
    out
}

pub fn decode_ctnsr(buf: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let mut r = Reader::new(buf);
    if r.take(6, "magic")? != CTNSR_MAGIC {
        return Err(bad("not a CTNSR1 file (bad magic)"));
    }
    let shape = r.shape()?;
    let t = r.floats(&shape)?;
    r.finish()?;
    Ok(t)
}

/// Weight file of every tensor in the store, in name order.
pub fn encode_canw(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CANW_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, _, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_shape(&mut out, t.shape());
        put_floats(&mut out, t.data());
    }
    out
}

/// Named tensors of a weight file, in file order.
pub fn decode_canw(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, FormatError> {
    let mut r = Reader::new(buf);
    if r.take(6, "magic")? != CANW_MAGIC {
        return Err(bad("not a CANW1 file (bad magic)"));
    }
    let count = r.u32("tensor count")?;
    let mut out: Vec<(String, Tensor<f32>)> = Vec::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| bad(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(bad(format!("tensor `{name}` appears twice")));
        }
        let shape = r.shape()?;
        let t = r.floats(&shape).map_err(|e| bad(format!("tensor `{name}`: {}", e.0)))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

/// Parameters for `cfg` overwritten by a weight file.
///
/// Every learnable tensor must be present with its exact shape. Running
/// statistics are optional but must match their layer's width.
pub fn load_weights(cfg: &CanetConfig, buf: &[u8]) -> Result<ParamStore<f32>, FormatError> {
    let mut store: ParamStore<f32> = cfg.init_params(&mut canet_core::rng_from_seed(0)).map_err(|e| bad(e.to_string()))?;
    let bn: Vec<(String, usize)> = store.bn_layers().map(|(p, c)| (p.to_string(), c)).collect();
    let stat_width = |name: &str| {
        bn.iter()
            .find(|(p, _)| name == running_mean_name(p) || name == running_var_name(p))
            .map(|(_, c)| *c)
    };
    let mut missing: Vec<String> = store.learnable_names();
    for (name, t) in decode_canw(buf)? {
        let expected = match store.get(&name) {
            Some(old) => old.shape().to_vec(),
            None => match stat_width(&name) {
                Some(c) => vec![c],
                None => return Err(bad(format!("unknown tensor `{name}` for this model"))),
            },
        };
        if t.shape() != expected.as_slice() {
            return Err(bad(format!("tensor `{name}` has shape {:?} in the file, model expects {expected:?}", t.shape())));
        }
        missing.retain(|n| *n != name);
        store.set(&name, t).map_err(|e| bad(e.to_string()))?;
    }
    if let Some(n) = missing.first() {
        return Err(bad(format!("weight file lacks `{n}` ({} learnable tensors missing)", missing.len())));
    }
    Ok(store)
}

/// Whitespace-separated header tokens with `#` comments, then one
/// whitespace byte before the raster.
fn pnm_header<'a>(buf: &'a [u8], magic: &[u8; 2]) -> Result<(usize, usize, &'a [u8]), FormatError> {
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(bad(format!("not a binary {} file (bad magic)", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header"));
        }
        *f = std::str::from_utf8(&buf[start..pos]).unwrap().parse().map_err(|_| bad("header value out of range"))?;
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("malformed header"));
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(format!("only 8-bit maxval 255 is supported, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(bad(format!("empty {w}x{h} image")));
    }
    Ok((h, w, &buf[pos + 1..]))
}

fn raster<'a>(rest: &'a [u8], n: usize) -> Result<&'a [u8], FormatError> {
    match rest.len() {
        l if l < n => Err(bad(format!("truncated raster: {l} of {n} bytes"))),
        l if l > n => Err(bad(format!("{} trailing bytes after raster", l - n))),
        _ => Ok(rest),
    }
}

pub fn encode_pgm(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), h * w);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// `(h, w, pixels)` of a P5 label map.
pub fn decode_pgm(buf: &[u8]) -> Result<(usize, usize, Vec<u8>), FormatError> {
    let (h, w, rest) = pnm_header(buf, b"P5")?;
    Ok((h, w, raster(rest, h * w)?.to_vec()))
}

/// 3×H×W image with values in [0, 1], rounded to 8 bits.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>, FormatError> {
    let [3, h, w] = *image.shape() else {
        return Err(bad(format!("PPM needs a 3×H×W image, got {:?}", image.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// A P6 image as 3×H×W with values `byte / 255`.
pub fn decode_ppm(buf: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let (h, w, rest) = pnm_header(buf, b"P6")?;
    let px = raster(rest, 3 * h * w)?;
    let mut data = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = px[3 * p + c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).map_err(|e| bad(e.to_string()))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a file and decodes it, tagging failures with the path.
pub fn read_with<T>(path: &Path, decode: impl FnOnce(&[u8]) -> Result<T, FormatError>) -> Result<T> {
    decode(&read(path)?).map_err(|e| Error::format(path, e))
}

/// A 3×H×W input image from a `.ppm` or `.ctnsr` file.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_with(path, decode_ppm),
        Some("ctnsr") => {
            let t = read_with(path, decode_ctnsr)?;
            match t.shape() {
                [3, _, _] => Ok(t),
                [1, 3, _, _] => Ok(t.reshape(&t.shape()[1..]).expect("same size")),
                s => Err(Error::format(path, bad(format!("expected a 3×H×W image, got {s:?}")))),
            }
        }
        _ => Err(Error::format(path, bad("input image must be .ppm or .ctnsr"))),
    }
}
