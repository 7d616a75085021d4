//! Binary PGM (`P5`, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let malformed = |msg: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "P5",
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and `#` comments up to the next token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(Error::Truncated {
                        path: path.to_path_buf(),
                        what: "header".into(),
                    })
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed("number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval {
            path: path.to_path_buf(),
            maxval,
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(malformed("missing whitespace after maxval")),
        None => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                what: "header".into(),
            })
        }
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero extent"));
    }
    let n = width as usize * height as usize;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            what: format!("raster has {} of {n} bytes", payload.len()),
        });
    }
    GrayImage::new(height as usize, width as usize, payload[..n].to_vec())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.pgm")
    }

    #[test]
    fn two_by_two_layout() {
        let img = GrayImage::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(bytes, b"P5\n2 2\n255\n\x01\x02\x03\x04");
    }

    #[test]
    fn width_comes_first() {
        let img = GrayImage::new(1, 3, vec![9, 8, 7]).unwrap();
        assert!(encode_pgm(&img).starts_with(b"P5\n3 1\n"));
    }

    #[test]
    fn comments_and_extra_whitespace() {
        let bytes = b"P5 # made by hand\n 2\t1 \n# max\n255\n\xff\x00";
        let img = decode_pgm(bytes, p()).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.pixels(), &[255, 0]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0\0\0", p()), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n65535\n\0\0", p()),
            Err(Error::UnsupportedMaxval { maxval: 65535, .. })
        ));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0\0\0", p()), Err(Error::Truncated { .. })));
        assert!(matches!(decode_pgm(b"P5\n2 2", p()), Err(Error::Truncated { .. })));
        assert!(matches!(decode_pgm(b"P5\nx 2\n255\n", p()), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::from_fn(5, 7, |r, c| (r * 31 + c * 7) as u8);
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
        assert!(matches!(read_pgm(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let mut rng = crate::rng::SeededRng::new(seed);
            let img = GrayImage::from_fn(h, w, |_, _| 0);
            let img = GrayImage::new(h, w, img.pixels().iter().map(|_| rng.below(256) as u8).collect()).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&img), p()).unwrap(), img);
        }
    }
}
