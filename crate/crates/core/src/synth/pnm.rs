//! Binary portable pixmaps (P6) for frames and graymaps (P5) for masks,
//! both with maxval 255.

use std::fs;
use std::path::Path;

use crate::encoder::Frame;
use crate::error::{Error, Result};
use crate::head::Mask;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = header("P6", frame.width(), frame.height());
    out.extend(frame.tensor().data().iter().map(|&v| quantize(v)));
    out
}

/// Masks are written binarised at 0.5: foreground 255, background 0.
pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = header("P5", mask.width(), mask.height());
    out.extend(mask.values().iter().map(|&v| if v >= 0.5 { 255u8 } else { 0 }));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            position: self.pos,
            detail: detail.into(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.fail("number out of range"))
    }

    /// Parses the header and returns `(width, height)` with the cursor on the
    /// first payload byte.
    fn header(&mut self, magic: &[u8; 2]) -> Result<(usize, usize)> {
        if self.bytes.get(..2) != Some(&magic[..]) {
            return Err(self.fail(format!("expected magic {}", String::from_utf8_lossy(magic))));
        }
        self.pos = 2;
        let width = self.number()?;
        let height = self.number()?;
        let maxval = self.number()?;
        if width == 0 || height == 0 {
            return Err(self.fail("zero image dimension"));
        }
        if maxval != 255 {
            return Err(self.fail(format!("maxval must be 255, got {maxval}")));
        }
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => self.pos += 1,
            _ => return Err(self.fail("expected one whitespace byte before the payload")),
        }
        Ok((width, height))
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            self.pos = self.bytes.len();
            return Err(self.fail(format!("truncated payload: {} of {len} bytes", rest.len())));
        }
        if rest.len() > len {
            self.pos += len;
            return Err(self.fail("trailing bytes after payload"));
        }
        Ok(rest)
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut c = Cursor { bytes, pos: 0, kind: "ppm" };
    let (w, h) = c.header(b"P6")?;
    let data = c.payload(w * h * 3)?;
    Frame::new(h, w, data.iter().map(|&b| f64::from(b) / 255.0).collect())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Mask> {
    let mut c = Cursor { bytes, pos: 0, kind: "pgm" };
    let (w, h) = c.header(b"P5")?;
    let start = c.pos;
    let data = c.payload(w * h)?;
    let mut values = Vec::with_capacity(data.len());
    for (i, &b) in data.iter().enumerate() {
        values.push(match b {
            0 => 0.0,
            255 => 1.0,
            _ => {
                c.pos = start + i;
                return Err(c.fail(format!("mask byte {b} is neither 0 nor 255")));
            }
        });
    }
    Mask::binary(h, w, values)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    decode_ppm(&read(path)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_pgm(&read(path)?)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_foreground_two_by_two_bytes() {
        let m = Mask::binary(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_pgm(&m);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"P5");
        expected.push(b'\n');
        expected.extend_from_slice(b"2 2");
        expected.push(b'\n');
        expected.extend_from_slice(b"255");
        expected.push(b'\n');
        let header_len = expected.len();
        expected.extend([0xFF; 4]);
        assert_eq!(header_len, 11);
        assert_eq!(bytes, expected);
        assert_eq!(decode_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn ppm_round_trip_and_comments() {
        let f = Frame::new(1, 2, vec![0.0, 1.0, 51.0 / 255.0, 1.0, 0.0, 0.2]).unwrap();
        let bytes = encode_ppm(&f);
        assert_eq!(decode_ppm(&bytes).unwrap(), f);
        let mut commented = b"P6 # note\n1 2\n255\n".to_vec();
        commented.extend([0u8; 6]);
        assert_eq!(decode_ppm(&commented).unwrap().width(), 1);
    }

    #[test]
    fn malformed_inputs_report_position() {
        let err = decode_pgm(b"P5\n2 2\n15\n\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { kind: "pgm", .. }), "{err}");
        match decode_pgm(b"P5\n2 2\n255\n\xff\xff").unwrap_err() {
            Error::Format { position, .. } => assert_eq!(position, 13),
            e => panic!("{e}"),
        }
        match decode_pgm(b"P5\n2 1\n255\n\xff\x07").unwrap_err() {
            Error::Format { position, .. } => assert_eq!(position, 12),
            e => panic!("{e}"),
        }
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n1 x\n255\n").is_err());
    }
}
