//! Binary Netpbm IO: P5 (grayscale) and P6 (RGB), maxval 255.
//!
//! Values in `[-1, 1]` map to bytes by `q = round((v + 1) · 127.5)` with
//! halves rounded up, clamped to `[0, 255]`; loading maps back with
//! `v = q / 127.5 − 1`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn quantize(v: f64) -> u8 {
    let q = ((v + 1.0) * 127.5 + 0.5).floor();
    if q.is_nan() {
        0
    } else {
        q.clamp(0.0, 255.0) as u8
    }
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 127.5 - 1.0
}

/// Encodes a `[C, H, W]` image (C = 1 → P5, C = 3 → P6).
pub fn encode<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(Error::Format(format!("cannot encode image of shape {:?}", img.shape()))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for ch in 0..c {
            out.push(quantize(d[ch * h * w + i].to_f64()));
        }
    }
    Ok(out)
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.rest.first() {
                Some(b) if b.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&b| b == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let len = self.rest.iter().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 {
            return Err(Error::Format(format!("missing {what} in header")));
        }
        let text = std::str::from_utf8(&self.rest[..len]).expect("ascii digits");
        self.rest = &self.rest[len..];
        text.parse().map_err(|_| Error::Format(format!("{what} `{text}` out of range")))
    }
}

/// Decodes a P5/P6 file into a `[C, H, W]` tensor.
pub fn decode<T: Real>(buf: &[u8]) -> Result<Tensor<T>> {
    let channels = match buf.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("not a binary PGM/PPM file (expected P5 or P6)".into())),
    };
    let mut hdr = Header { rest: &buf[2..] };
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval} (only 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    match hdr.rest.first() {
        Some(b) if b.is_ascii_whitespace() => hdr.rest = &hdr.rest[1..],
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let need = channels * h * w;
    if hdr.rest.len() < need {
        return Err(Error::Format(format!("truncated payload: {} of {need} bytes", hdr.rest.len())));
    }
    if hdr.rest.len() > need {
        return Err(Error::Format(format!("{} trailing bytes after payload", hdr.rest.len() - need)));
    }
    let mut data = vec![T::ZERO; need];
    for i in 0..h * w {
        for ch in 0..channels {
            data[ch * h * w + i] = T::from_f64(dequantize(hdr.rest[i * channels + ch]));
        }
    }
    Tensor::new(&[channels, h, w], data)
}

pub fn save<T: Real>(img: &Tensor<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Lays `rows` of equally shaped `[C, H, W]` images out as one image grid
/// with a one-pixel separator of value −1.
pub fn grid<T: Real>(rows: &[Vec<Tensor<T>>]) -> Result<Tensor<T>> {
    let first = rows.iter().flatten().next().ok_or_else(|| Error::Format("empty image grid".into()))?;
    let (c, h, w) = match *first.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("image grid", first.shape(), &[0, 0, 0])),
    };
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + 1) - 1, cols * (w + 1) - 1);
    let mut out = vec![-T::ONE; c * gh * gw];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            if img.shape() != first.shape() {
                return Err(Error::shape("image grid", img.shape(), first.shape()));
            }
            for ch in 0..c {
                for y in 0..h {
                    let src = &img.data()[(ch * h + y) * w..][..w];
                    let dst = (ch * gh + ri * (h + 1) + y) * gw + ci * (w + 1);
                    out[dst..dst + w].copy_from_slice(src);
                }
            }
        }
    }
    Tensor::new(&[c, gh, gw], out)
}
