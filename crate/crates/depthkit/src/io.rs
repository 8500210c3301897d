//! Bit-exact file I/O for depth maps and normal fields.
//!
//! Two interchange formats:
//!
//! * **PFM** (portable float map) for float depth and normals. One-channel
//!   `Pf` files become [`DepthMap`]s, three-channel `PF` files become
//!   [`NormalField`]s. Rows are stored bottom-to-top per the PFM convention
//!   and flipped to the internal top-to-bottom order on read. The sign of
//!   the scale field encodes payload endianness (negative = little-endian).
//!   Written files are always little-endian with scale -1.0 so output bytes
//!   are canonical.
//! * **PGM-16** (binary `P5`, maxval 65535, big-endian samples) for
//!   sensor-style integer depth. Raw 0 marks a sensor hole and becomes an
//!   invalid pixel; other values are multiplied by a meters-per-unit scale.
//!
//! Samples are stored as 32-bit floats on disk, so round-trips are exact
//! precisely for values representable in f32. All parse errors carry the
//! byte offset at which the problem was detected.

use crate::depth::{DepthMap, NormalField};
use crate::{Error, Result};

/// Parsed PFM file: header fields plus samples flipped to top-to-bottom row
/// order, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub scale: f64,
    pub samples: Vec<f32>,
}

/// What a PFM file decodes to, by channel count.
#[derive(Debug, Clone, PartialEq)]
pub enum PfmContent {
    Depth(DepthMap),
    Normals(NormalField),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_whitespace(&mut self, allow_comments: bool) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if allow_comments && b == b'#' {
                while let Some(b) = self.peek() {
                    self.pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str, allow_comments: bool) -> Result<(usize, &'a str)> {
        self.skip_whitespace(allow_comments);
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::parse(start, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("non-ASCII {what}")))?;
        Ok((start, text))
    }

    fn usize_token(&mut self, what: &str, allow_comments: bool) -> Result<usize> {
        let (offset, text) = self.token(what, allow_comments)?;
        text.parse::<usize>()
            .map_err(|_| Error::parse(offset, format!("invalid {what} {text:?}")))
    }

    /// Consume the single whitespace byte that separates the header from the
    /// binary payload.
    fn end_header(&mut self) -> Result<()> {
        match self.peek() {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::parse(self.pos, "expected whitespace before payload")),
        }
    }

    fn payload(&mut self, expected: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < expected {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated payload: expected {expected} bytes, found {available}"),
            ));
        }
        if available > expected {
            return Err(Error::parse(
                self.pos + expected,
                format!("trailing data: {} bytes past payload", available - expected),
            ));
        }
        let data = &self.bytes[self.pos..self.pos + expected];
        self.pos += expected;
        Ok(data)
    }
}

impl PfmImage {
    /// Parse a PFM byte stream. Rows come back in top-to-bottom order.
    pub fn parse(bytes: &[u8]) -> Result<PfmImage> {
        if bytes.len() < 2 || (&bytes[..2] != b"Pf" && &bytes[..2] != b"PF") {
            return Err(Error::parse(0, "bad magic: expected \"Pf\" or \"PF\""));
        }
        let channels = if &bytes[..2] == b"PF" { 3 } else { 1 };
        let mut r = Reader::new(bytes);
        r.pos = 2;

        let width = r.usize_token("width", false)?;
        let height = r.usize_token("height", false)?;
        let (scale_offset, scale_text) = r.token("scale", false)?;
        let scale = scale_text
            .parse::<f64>()
            .map_err(|_| Error::parse(scale_offset, format!("invalid scale {scale_text:?}")))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::parse(scale_offset, "scale must be finite and nonzero"));
        }
        if width == 0 || height == 0 {
            return Err(Error::parse(scale_offset, "zero image dimension"));
        }
        r.end_header()?;

        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::parse(scale_offset, "image dimensions overflow"))?;
        let data = r.payload(count)?;

        let little_endian = scale < 0.0;
        let row_len = width * channels * 4;
        let mut samples = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            // The file stores the bottom image row first.
            let file_row = height - 1 - row;
            let base = file_row * row_len;
            for px in 0..width * channels {
                let raw: [u8; 4] = data[base + px * 4..base + px * 4 + 4].try_into().unwrap();
                samples.push(if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                });
            }
        }
        Ok(PfmImage {
            width,
            height,
            channels,
            scale,
            samples,
        })
    }
}

/// Decode a PFM file into a depth map (1 channel) or normal field
/// (3 channels).
///
/// Depth validity follows the core rule: finite and positive. A normal
/// sample is kept when all three components are finite and the z component
/// is exactly 1.0, matching the unnormalized surface normals produced from
/// depth gradients; anything else marks the pixel invalid.
pub fn read_pfm(bytes: &[u8]) -> Result<PfmContent> {
    let image = PfmImage::parse(bytes)?;
    if image.channels == 1 {
        let values: Vec<f64> = image.samples.iter().map(|&s| s as f64).collect();
        Ok(PfmContent::Depth(DepthMap::from_values(
            image.width,
            image.height,
            values,
        )?))
    } else {
        let mut vectors = Vec::with_capacity(image.width * image.height);
        let mut valid = Vec::with_capacity(image.width * image.height);
        for px in image.samples.chunks_exact(3) {
            let v = [px[0] as f64, px[1] as f64, px[2] as f64];
            let ok = v.iter().all(|c| c.is_finite()) && v[2] == 1.0;
            vectors.push(if ok { v } else { [0.0, 0.0, 0.0] });
            valid.push(ok);
        }
        Ok(PfmContent::Normals(NormalField::from_raw(
            image.width,
            image.height,
            vectors,
            valid,
        )?))
    }
}

fn pfm_header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n-1.0\n").into_bytes()
}

/// Encode a depth map as a canonical little-endian PFM (scale -1.0).
/// Invalid pixels are written as 0.0.
pub fn write_pfm(map: &DepthMap) -> Vec<u8> {
    let mut out = pfm_header("Pf", map.width(), map.height());
    for row in (0..map.height()).rev() {
        for col in 0..map.width() {
            let v = if map.is_valid(row, col) {
                map.get(row, col) as f32
            } else {
                0.0
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Encode a normal field as a canonical little-endian 3-channel PFM.
/// Invalid pixels are written as (0, 0, 0).
pub fn write_pfm_normals(field: &NormalField) -> Vec<u8> {
    let mut out = pfm_header("PF", field.width(), field.height());
    for row in (0..field.height()).rev() {
        for col in 0..field.width() {
            let v = if field.is_valid(row, col) {
                field.get(row, col)
            } else {
                [0.0, 0.0, 0.0]
            };
            for c in v {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Decode a binary 16-bit PGM (`P5`, maxval 65535, big-endian samples) into
/// a depth map, multiplying raw values by `depth_scale` meters per unit.
/// Raw 0 is the sensor-hole convention and becomes an invalid pixel.
pub fn read_pgm16(bytes: &[u8], depth_scale: f64) -> Result<DepthMap> {
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "depth scale must be positive and finite, got {depth_scale}"
        )));
    }
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(0, "bad magic: expected \"P5\""));
    }
    let mut r = Reader::new(bytes);
    r.pos = 2;
    let width = r.usize_token("width", true)?;
    let height = r.usize_token("height", true)?;
    let (maxval_offset, maxval_text) = r.token("maxval", true)?;
    let maxval = maxval_text
        .parse::<u32>()
        .map_err(|_| Error::parse(maxval_offset, format!("invalid maxval {maxval_text:?}")))?;
    if maxval != 65535 {
        return Err(Error::parse(
            maxval_offset,
            format!("unsupported maxval {maxval}, expected 65535"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_offset, "zero image dimension"));
    }
    r.end_header()?;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::parse(maxval_offset, "image dimensions overflow"))?;
    let data = r.payload(count)?;

    let values: Vec<f64> = data
        .chunks_exact(2)
        .map(|px| u16::from_be_bytes([px[0], px[1]]) as f64 * depth_scale)
        .collect();
    DepthMap::from_values(width, height, values)
}

/// Encode an 8-bit binary PGM from raw bytes in top-to-bottom row order.
pub fn write_pgm8(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyDimensions { width, height });
    }
    if data.len() != width * height {
        return Err(Error::LengthMismatch {
            len: data.len(),
            width,
            height,
            expected: width * height,
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn le_payload(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn canonical_single_pixel_file() {
        let map = DepthMap::from_values(1, 1, vec![2.0]).unwrap();
        let bytes = write_pfm(&map);
        let mut expected = b"Pf\n1 1\n-1.0\n".to_vec();
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        match read_pfm(&bytes).unwrap() {
            PfmContent::Depth(decoded) => assert_eq!(decoded, map),
            PfmContent::Normals(_) => panic!("expected depth"),
        }
    }

    #[test]
    fn rows_are_flipped_on_read() {
        // Bottom file row first: payload rows [3, 4] then [1, 2] decode to
        // an image whose top row is [1, 2].
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend(le_payload(&[3.0, 4.0, 1.0, 2.0]));
        let PfmContent::Depth(map) = read_pfm(&bytes).unwrap() else {
            panic!("expected depth");
        };
        assert_eq!(map.get(0, 0), 1.0);
        assert_eq!(map.get(0, 1), 2.0);
        assert_eq!(map.get(1, 0), 3.0);
        assert_eq!(map.get(1, 1), 4.0);
    }

    #[test]
    fn positive_scale_means_big_endian() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.0f32.to_be_bytes());
        let PfmContent::Depth(map) = read_pfm(&bytes).unwrap() else {
            panic!("expected depth");
        };
        assert_eq!(map.get(0, 0), 2.0);
    }

    #[test]
    fn zero_and_nan_samples_are_invalid() {
        let mut bytes = b"Pf\n3 1\n-1.0\n".to_vec();
        bytes.extend(le_payload(&[0.0, f32::NAN, 1.5]));
        let PfmContent::Depth(map) = read_pfm(&bytes).unwrap() else {
            panic!("expected depth");
        };
        assert!(!map.is_valid(0, 0));
        assert!(!map.is_valid(0, 1));
        assert!(map.is_valid(0, 2));
    }

    #[test]
    fn bad_magic_is_rejected_at_offset_zero() {
        let err = read_pfm(b"P5\n1 1\n-1.0\nxxxx").unwrap_err();
        match err {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("bad magic"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = b"Pf\n2 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let err = read_pfm(&bytes).unwrap_err();
        match err {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, bytes.len());
                assert!(reason.contains("truncated"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trailing_data_is_rejected() {
        let map = DepthMap::from_values(1, 1, vec![2.0]).unwrap();
        let mut bytes = write_pfm(&map);
        bytes.push(0);
        let err = read_pfm(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { reason, .. } if reason.contains("trailing")));
    }

    #[test]
    fn zero_scale_is_rejected() {
        let mut bytes = b"Pf\n1 1\n0.0\n".to_vec();
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        let err = read_pfm(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { reason, .. } if reason.contains("scale")));
    }

    #[test]
    fn depth_round_trip_preserves_values_and_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let w = rng.random_range(1..12);
            let h = rng.random_range(1..12);
            let values: Vec<f64> = (0..w * h)
                .map(|_| rng.random_range(0.1f32..80.0) as f64)
                .collect();
            let mut map = DepthMap::from_values(w, h, values).unwrap();
            for _ in 0..w * h / 4 {
                map.invalidate(rng.random_range(0..h), rng.random_range(0..w));
            }
            match read_pfm(&write_pfm(&map)).unwrap() {
                PfmContent::Depth(decoded) => assert_eq!(decoded, map),
                PfmContent::Normals(_) => panic!("expected depth"),
            }
        }
    }

    #[test]
    fn normals_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (w, h) = (6, 4);
        let mut vectors = Vec::new();
        let mut valid = Vec::new();
        for i in 0..w * h {
            if i % 5 == 4 {
                vectors.push([0.0, 0.0, 0.0]);
                valid.push(false);
            } else {
                vectors.push([
                    rng.random_range(-2.0f32..2.0) as f64,
                    rng.random_range(-2.0f32..2.0) as f64,
                    1.0,
                ]);
                valid.push(true);
            }
        }
        let field = NormalField::from_raw(w, h, vectors, valid).unwrap();
        match read_pfm(&write_pfm_normals(&field)).unwrap() {
            PfmContent::Normals(decoded) => assert_eq!(decoded, field),
            PfmContent::Depth(_) => panic!("expected normals"),
        }
    }

    #[test]
    fn pgm16_decodes_scaled_values_and_holes() {
        let mut bytes = b"P5\n# a comment\n3 2\n65535\n".to_vec();
        for raw in [1000u16, 0, 65535, 1, 2, 3] {
            bytes.extend_from_slice(&raw.to_be_bytes());
        }
        let map = read_pgm16(&bytes, 0.001).unwrap();
        assert_eq!(map.get(0, 0), 1.0);
        assert!(!map.is_valid(0, 1));
        assert_eq!(map.get(0, 2), 65.535);
        assert_eq!(map.get(1, 2), 0.003);
    }

    #[test]
    fn pgm16_rejects_wrong_maxval() {
        let mut bytes = b"P5\n1 1\n255\n".to_vec();
        bytes.push(7);
        let err = read_pgm16(&bytes, 0.001).unwrap_err();
        assert!(matches!(err, Error::Parse { reason, .. } if reason.contains("maxval")));
    }

    #[test]
    fn pgm16_rejects_truncation_and_bad_scale() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        assert!(matches!(
            read_pgm16(&bytes, 0.001),
            Err(Error::Parse { reason, .. }) if reason.contains("truncated")
        ));
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        assert!(read_pgm16(&bytes, 0.001).is_ok());
        assert!(read_pgm16(&bytes, 0.0).is_err());
        assert!(read_pgm16(&bytes, -1.0).is_err());
    }

    #[test]
    fn pgm8_writes_header_and_raw_bytes() {
        let bytes = write_pgm8(2, 2, &[255, 0, 0, 255]).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\xff\x00\x00\xff");
        assert!(write_pgm8(2, 2, &[1, 2, 3]).is_err());
    }

    /// Random byte streams either fail to parse or yield maps that satisfy
    /// the core invariants; the readers never panic.
    #[test]
    fn fuzzed_inputs_never_break_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..300 {
            let len = rng.random_range(0..64);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if let Ok(PfmContent::Depth(map)) = read_pfm(&bytes) {
                assert!(map.validate().is_empty());
            }
            if let Ok(map) = read_pgm16(&bytes, 0.001) {
                assert!(map.validate().is_empty());
            }
        }

        // Corrupting single bytes of a well-formed file exercises the deeper
        // parse paths.
        let map = DepthMap::from_values(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let good = write_pfm(&map);
        for i in 0..good.len() {
            let mut bad = good.clone();
            bad[i] = bad[i].wrapping_add(0x41);
            if let Ok(PfmContent::Depth(decoded)) = read_pfm(&bad) {
                assert!(decoded.validate().is_empty());
            }
        }
    }
}
