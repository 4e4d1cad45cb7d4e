//! Binary PNM (P5 gray, P6 RGB) with maxval 255.

use super::{Bands, RasterError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub bands: Bands,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RasterError::Pnm(format!("missing {what} in header")));
        }
        // at most 9 digits keeps the value well inside usize
        if self.pos - start > 9 {
            return Err(RasterError::Pnm(format!("{what} too large")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("0");
        text.parse()
            .map_err(|_| RasterError::Pnm(format!("bad {what} '{text}'")))
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let bands = match bytes.get(..2) {
        Some(b"P5") => Bands::Gray,
        Some(b"P6") => Bands::Rgb,
        _ => return Err(RasterError::Pnm("expected magic P5 or P6".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(RasterError::Pnm("malformed magic".into()));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(RasterError::Pnm("zero image dimension".into()));
    }
    if maxval != 255 {
        return Err(RasterError::Pnm(format!("maxval must be 255, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(RasterError::Pnm("missing whitespace after maxval".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands.count()))
        .ok_or_else(|| RasterError::Pnm("image dimensions overflow".into()))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < len {
        return Err(RasterError::Pnm(format!(
            "truncated payload: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    Ok(PnmImage {
        width,
        height,
        bands,
        pixels: payload[..len].to_vec(),
    })
}

pub fn write_pnm(img: &PnmImage) -> Vec<u8> {
    let magic = match img.bands {
        Bands::Gray => "P5",
        Bands::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_with_comments() {
        let mut data = b"P5\n# scanned sheet\n3 2\n# depth\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = parse_pnm(&data).unwrap();
        assert_eq!((img.width, img.height, img.bands), (3, 2, Bands::Gray));
        assert_eq!(img.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(parse_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pnm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(parse_pnm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(parse_pnm(b"P5\n1\n").is_err());
        assert!(parse_pnm(b"P5\n99999999999 1\n255\n").is_err());
        assert!(parse_pnm(b"P5 1 1 255").is_err());
        assert!(parse_pnm(b"").is_err());
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(
            w in 1usize..16, h in 1usize..16, rgb in any::<bool>(), seed in any::<u64>()
        ) {
            let bands = if rgb { Bands::Rgb } else { Bands::Gray };
            let n = w * h * bands.count();
            let pixels: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let img = PnmImage { width: w, height: h, bands, pixels };
            let bytes = write_pnm(&img);
            let back = parse_pnm(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(write_pnm(&back), bytes);
        }
    }
}
