use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A decoded binary PGM (`P5`) or PPM (`P6`) image with 8-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples in file order.
    pub samples: Vec<u8>,
}

impl PnmImage {
    /// Planar `(3, h, w)` values scaled to `[0, 1]`; gray is replicated.
    pub fn to_chw3<T: Scalar>(&self) -> Vec<T> {
        let plane = self.width * self.height;
        let scale = 1.0 / f64::from(self.maxval);
        let mut out = vec![T::zero(); 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                let src = if self.channels == 1 { p } else { p * 3 + c };
                out[c * plane + p] = T::from_f64_lossy(f64::from(self.samples[src]) * scale);
            }
        }
        out
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("malformed header: expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format!("malformed header: {what} out of range"))
    }
}

/// Parses an in-memory PGM/PPM file; `path` only labels errors.
pub fn parse_pnm(bytes: &[u8], path: &Path) -> Result<PnmImage> {
    let err = |msg: String| Error::parse(path, msg);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(err("malformed header: expected magic P5 or P6".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width").map_err(err)?;
    let height = h.number("height").map_err(err)?;
    let maxval = h.number("maxval").map_err(err)?;
    if width == 0 || height == 0 {
        return Err(err(format!("malformed header: zero size {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(err(format!("unsupported maxval {maxval} (only 8-bit files are read)")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("malformed header: missing whitespace before payload".into()));
    }
    let start = h.pos + 1;
    let need = width * height * channels;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(err(format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples: payload[..need].to_vec(),
    })
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::parse(path, e.to_string()))?;
    parse_pnm(&bytes, path)
}

/// Writes planar `(c, h, w)` values in `[0, 1]` as an 8-bit PGM (`c == 1`)
/// or PPM (`c == 3`).
pub fn write_pnm<T: Scalar>(path: &Path, chw: &[T], c: usize, h: usize, w: usize) -> Result<()> {
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape(format!("cannot write {c}-channel image as PGM/PPM"))),
    };
    if chw.len() != c * h * w {
        return Err(Error::shape(format!("{} values for a {c}x{h}x{w} image", chw.len())));
    }
    let plane = h * w;
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(chw.len());
    for p in 0..plane {
        for ch in 0..c {
            let v = chw[ch * plane + p].to_f64_lossy().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(bytes: &[u8]) -> Result<PnmImage> {
        parse_pnm(bytes, Path::new("x.pnm"))
    }

    #[test]
    fn gray_scaling_and_broadcast() {
        let img = parse(b"P5\n2 2\n255\n\x00\xff\x00\xff").unwrap();
        let v: Vec<f64> = img.to_chw3();
        assert_eq!(v, [0.0, 1.0, 0.0, 1.0].repeat(3));
    }

    #[test]
    fn color_is_planar() {
        let img = parse(b"P6 1 2 # comment\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
        let v: Vec<f64> = img.to_chw3();
        let expect: Vec<f64> = [1, 4, 2, 5, 3, 6].iter().map(|&b| f64::from(b) / 255.0).collect();
        assert_eq!(v, expect);
    }

    #[test]
    fn errors_name_the_file() {
        for bad in [&b"P3\n1 1\n255\n0"[..], b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5\n1\n"] {
            let e = parse(bad).unwrap_err();
            assert!(matches!(e, Error::Parse { .. }), "{e}");
            assert!(e.to_string().contains("x.pnm"));
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let chw: Vec<f64> = (0..12).map(|i| f64::from(i) * 17.0 / 255.0).collect();
        write_pnm(&path, &chw, 3, 2, 2).unwrap();
        let back: Vec<f64> = read_pnm(&path).unwrap().to_chw3();
        for (a, b) in chw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
