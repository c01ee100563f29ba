//! On-disk formats.
//!
//! DTEN (little-endian):
//!
//! | bytes            | field                          |
//! |------------------|--------------------------------|
//! | 4                | magic `"DTEN"`                 |
//! | 1                | version, must be 1             |
//! | 1                | dtype, must be 1 (f32)         |
//! | 1                | ndim                           |
//! | 4 * ndim         | dims, u32 each                 |
//! | 4 * prod(dims)   | payload, f32 each              |
//!
//! Label maps are binary PGM (`P5`) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, LabelMap};

const DTEN_MAGIC: &[u8; 4] = b"DTEN";
const DTEN_VERSION: u8 = 1;
const DTEN_F32: u8 = 1;

pub fn encode_dten(t: &DenseTensor) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.dims().len())
        .map_err(|_| Error::Argument(format!("{} dims exceed the DTEN limit of 255", t.dims().len())))?;
    let mut out = Vec::with_capacity(7 + 4 * t.dims().len() + 4 * t.len());
    out.extend_from_slice(DTEN_MAGIC);
    out.push(DTEN_VERSION);
    out.push(DTEN_F32);
    out.push(ndim);
    for &d in t.dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Argument(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dten(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 7 {
        return Err(Error::format(bytes.len(), "truncated DTEN header"));
    }
    if &bytes[..4] != DTEN_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"DTEN\""));
    }
    if bytes[4] != DTEN_VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTEN_F32 {
        return Err(Error::format(5, format!("unsupported dtype {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if ndim == 0 {
        return Err(Error::format(6, "ndim is zero"));
    }
    let mut off = 7;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let chunk = bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::format(bytes.len(), "truncated dims"))?;
        let d = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::format(off, "zero-sized dimension"));
        }
        dims.push(d);
        off += 4;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(7, "dims overflow"))?;
    let need = count
        .checked_mul(4)
        .and_then(|b| b.checked_add(off))
        .ok_or_else(|| Error::format(7, "dims overflow"))?;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload, expected {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(need, "trailing bytes after payload"));
    }
    let data: Vec<f32> = bytes[off..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(dims, data)
}

pub fn tensor_write(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dten(t)?).map_err(|e| Error::io(path, e))
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dten(&bytes)
}

pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.labels());
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
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
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => return Err(Error::format(0, "ASCII PGM (P2) is not supported, expected P5")),
        _ => return Err(Error::format(0, "bad magic, expected \"P5\"")),
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval}, expected 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "missing whitespace before raster")),
    }
    if width == 0 || height == 0 {
        return Err(Error::format(2, format!("empty image {width}x{height}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(2, "image size overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < n {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster, expected {n} bytes"),
        ));
    }
    LabelMap::new(height, width, raster[..n].to_vec())
}

pub fn labelmap_write_pgm(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}

pub fn labelmap_read_pgm(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng) -> DenseTensor {
        let ndim = 1 + rng.below(4) as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| 1 + rng.below(5) as usize).collect();
        let n = dims.iter().product();
        // Random bit patterns, rejecting non-finite ones, so the payload covers
        // subnormals, signed zeros and extreme exponents.
        let data = (0..n)
            .map(|_| loop {
                let v = f32::from_bits(rng.next_u64() as u32);
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        DenseTensor::new(dims, data).unwrap()
    }

    #[test]
    fn dten_known_layout() {
        let t = DenseTensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_dten(&t).unwrap();
        assert_eq!(&bytes[..7], b"DTEN\x01\x01\x03");
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[19..23], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 7 + 12 + 16);
        assert_eq!(decode_dten(&bytes).unwrap(), t);
    }

    #[test]
    fn dten_round_trip_is_bit_exact() {
        let mut rng = Rng::new(2024);
        for _ in 0..1000 {
            let t = random_tensor(&mut rng);
            let bytes = encode_dten(&t).unwrap();
            let back = decode_dten(&bytes).unwrap();
            assert_eq!(back.dims(), t.dims());
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dten_errors_name_offsets() {
        let t = DenseTensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_dten(&t).unwrap();

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_dten(truncated), Err(Error::Format { .. })));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_dten(&bad_magic), Err(Error::Format { offset: 0, .. })));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_dten(&bad_version), Err(Error::Format { offset: 4, .. })));

        let mut zero_dim = bytes.clone();
        zero_dim[7..11].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_dten(&zero_dim), Err(Error::Format { offset: 7, .. })));

        let mut nan = bytes.clone();
        nan[19..23].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dten(&nan), Err(Error::Validation(_))));
    }

    #[test]
    fn pgm_decodes_known_bytes() {
        let bytes = b"P5\n2 2\n255\n\x00\x01\x01\xff";
        let m = decode_pgm(bytes).unwrap();
        assert_eq!(m.labels(), &[0, 1, 1, 255]);
        assert_eq!(m.get(1, 1), 255);
        assert_eq!(encode_pgm(&m), bytes.to_vec());
    }

    #[test]
    fn pgm_accepts_comments() {
        let bytes = b"P5\n# label map\n3 1\n# max\n255\n\x00\x02\x01";
        let m = decode_pgm(bytes).unwrap();
        assert_eq!((m.height(), m.width()), (1, 3));
    }

    #[test]
    fn pgm_rejects_ascii_and_wrong_maxval() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0\n"), Err(Error::Format { .. })));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00"), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_round_trip_random() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            let h = 1 + rng.below(9) as usize;
            let w = 1 + rng.below(9) as usize;
            let labels = (0..h * w).map(|_| rng.below(256) as u8).collect();
            let m = LabelMap::new(h, w, labels).unwrap();
            assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
        }
    }

    #[test]
    fn files_round_trip_and_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 3.5, 0.0, 1e-30]).unwrap();
        let a = dir.path().join("a.dten");
        let b = dir.path().join("b.dten");
        tensor_write(&t, &a).unwrap();
        tensor_write(&t, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(tensor_read(&a).unwrap(), t);

        let m = LabelMap::new(2, 3, vec![0, 1, 2, 255, 0, 1]).unwrap();
        let p = dir.path().join("m.pgm");
        labelmap_write_pgm(&m, &p).unwrap();
        assert_eq!(labelmap_read_pgm(&p).unwrap(), m);

        assert!(matches!(tensor_read(dir.path().join("missing.dten")), Err(Error::Io { .. })));
    }
}
