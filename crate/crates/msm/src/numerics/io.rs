//! Tensor file format and PGM image export.
//!
//! Binary layout: magic "MSMT", one ASCII header line
//! `dtype=f64;shape=a,b,c;complex=0|1\n`, then the little-endian f64 payload.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MSMT";

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let shape = t
        .shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let header = format!(
        "dtype=f64;shape={};complex={}\n",
        shape,
        if t.is_complex() { 1 } else { 0 }
    );
    let mut out = Vec::with_capacity(4 + header.len() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let err = |msg: &str| Error::file(origin, msg);
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(err("missing MSMT magic"));
    }
    let rest = &bytes[4..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| err("missing header newline"))?;
    let header = std::str::from_utf8(&rest[..nl]).map_err(|_| err("header not UTF-8"))?;
    let mut shape: Option<Vec<usize>> = None;
    let mut complex = false;
    for field in header.split(';') {
        match field.split_once('=') {
            Some(("dtype", "f64")) => {}
            Some(("dtype", other)) => {
                return Err(err(&format!("unsupported dtype {other}")));
            }
            Some(("shape", dims)) => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    dims.split(',').map(|d| d.parse::<usize>()).collect();
                shape = Some(parsed.map_err(|_| err("bad shape field"))?);
            }
            Some(("complex", flag)) => complex = flag == "1",
            _ => return Err(err(&format!("unrecognized header field {field}"))),
        }
    }
    let shape = shape.ok_or_else(|| err("header missing shape"))?;
    let payload = &rest[nl + 1..];
    let count: usize = shape.iter().product();
    if payload.len() != 8 * count {
        return Err(err(&format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            8 * count
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let t = Tensor::from_vec(&shape, data).map_err(|e| err(&e.to_string()))?;
    let t = if complex {
        t.into_complex().map_err(|e| err(&e.to_string()))?
    } else {
        t
    };
    t.assert_finite(&format!("tensor file {}", origin.display()))?;
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    t.assert_finite("tensor being written")?;
    let bytes = tensor_to_bytes(t);
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e.to_string()))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e.to_string()))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::file(path, e.to_string()))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::file(path, e.to_string()))?;
    tensor_from_bytes(&bytes, path)
}

/// Writes an 8-bit binary PGM preview. Real images of shape [h, w] are
/// exported directly; complex images [h, w, 2] are exported as magnitude.
/// Values are min-max scaled to 0..255.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w, values): (usize, usize, Vec<f64>) = match image.shape() {
        [h, w] => (*h, *w, image.data().to_vec()),
        [h, w, 2] => {
            let mags = image
                .data()
                .chunks_exact(2)
                .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
                .collect();
            (*h, *w, mags)
        }
        other => {
            return Err(Error::Shape(format!(
                "PGM export needs [h,w] or [h,w,2], got {other:?}"
            )))
        }
    };
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * (v - lo) / range).round() as u8));
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e.to_string()))?;
    f.write_all(&out).map_err(|e| Error::file(path, e.to_string()))
}

/// 64-bit FNV-1a, used for content digests in run ids and checkpoint headers.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn fnv64_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv64(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngState;

    #[test]
    fn tensor_bytes_round_trip() {
        let mut rng = RngState::new(1);
        let t = Tensor::from_vec(&[3, 4, 2], rng.gaussian_vec(24))
            .unwrap()
            .into_complex()
            .unwrap();
        let bytes = tensor_to_bytes(&t);
        let back = tensor_from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = Tensor::zeros(&[4]);
        let mut bytes = tensor_to_bytes(&t);
        bytes.truncate(bytes.len() - 3);
        assert!(tensor_from_bytes(&bytes, Path::new("mem")).is_err());
    }
}
