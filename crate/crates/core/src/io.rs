//! Field files, grayscale rasters, flat config files and number formatting.
//!
//! Field file layout (little-endian):
//!
//! | bytes        | content                            |
//! |--------------|------------------------------------|
//! | 4            | magic `JDF1`                       |
//! | 4            | version, `u32` = 1                 |
//! | 1            | dtype, 0 = real f64, 1 = complex   |
//! | 1            | rank                               |
//! | 8 · rank     | extents, `u64`                     |
//! | rest         | row-major payload                  |
//!
//! Complex values are stored as interleaved `(re, im)` pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Data, Tensor, C64};

pub const MAGIC: &[u8; 4] = b"JDF1";
pub const VERSION: u32 = 1;

pub fn encode_field(t: &Tensor) -> Vec<u8> {
    let (code, width) = match t.data() {
        Data::Real(_) => (0u8, 8),
        Data::Complex(_) => (1u8, 16),
    };
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(code);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match t.data() {
        Data::Real(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Data::Complex(v) => v.iter().for_each(|z| {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    out
}

fn f64_at(bytes: &[u8], k: usize) -> f64 {
    f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"))
}

/// Parses a field file. The header is validated against the actual byte
/// count before any payload buffer is allocated.
pub fn decode_field(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated(format!(
            "header needs 10 bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = match bytes[8] {
        0 => 8u64,
        1 => 16,
        d => return Err(Error::Malformed(format!("unknown dtype code {d}"))),
    };
    let rank = bytes[9] as usize;
    let header = 10 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Truncated(format!(
            "header needs {header} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: u64 = 1;
    for a in 0..rank {
        let e = u64::from_le_bytes(bytes[10 + 8 * a..18 + 8 * a].try_into().expect("8 bytes"));
        if e == 0 {
            return Err(Error::Malformed(format!("extent {a} is zero")));
        }
        count = count.saturating_mul(e);
        shape.push(e);
    }
    let payload = (bytes.len() - header) as u64;
    let need = count.saturating_mul(width);
    if payload < need {
        return Err(Error::Truncated(format!(
            "payload needs {need} bytes, file has {payload}"
        )));
    }
    if payload > need {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            payload - need
        )));
    }
    let shape: Vec<usize> = shape.into_iter().map(|e| e as usize).collect();
    let body = &bytes[header..];
    let n = count as usize;
    if width == 8 {
        Tensor::real(&shape, (0..n).map(|k| f64_at(body, k)).collect())
    } else {
        Tensor::complex(
            &shape,
            (0..n)
                .map(|k| C64::new(f64_at(body, 2 * k), f64_at(body, 2 * k + 1)))
                .collect(),
        )
    }
}

pub fn write_field(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_field(t))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_field(&fs::read(path)?)
}

/// Binary `P5` graymap of a `rows × cols` image, min-max normalized to
/// `0..=255`. A constant image renders black.
pub fn encode_pgm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::InvalidShape(format!(
            "{} values for a {rows}x{cols} image",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NaNEncountered("image values".into()));
    }
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Renders a tensor of shape `[rows, cols]` or `[rows, cols, 1]`; complex
/// values are shown by magnitude.
pub fn render_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    let ok = s.len() == 2 || (s.len() == 3 && s[2] == 1);
    if !ok {
        return Err(Error::InvalidShape(format!(
            "cannot render shape {s:?} as an image"
        )));
    }
    let values: Vec<f64> = match t.data() {
        Data::Real(v) => v.clone(),
        Data::Complex(v) => v.iter().map(|z| z.norm()).collect(),
    };
    encode_pgm(&values, s[0], s[1])
}

pub fn write_pgm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&render_pgm(t)?)?;
    Ok(())
}

/// Width, height, maxval and pixels of a binary graymap.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u8>)> {
    let bad = |m: &str| Error::Malformed(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("short header"));
        }
        fields
            .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ascii"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixels"))?;
    if pixels.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, max as u16, pixels.to_vec()))
}

/// Parses flat `key = value` text. `#` starts a comment; blank lines are
/// ignored; a key may appear once.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Config {
            line: i + 1,
            msg: msg.to_string(),
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(&format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

/// C-style `%.{digits}e`: the exponent carries a sign and at least two
/// digits.
pub fn format_sci(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.digits$e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}
