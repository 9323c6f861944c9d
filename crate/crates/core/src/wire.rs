//! Bit-exact wire format for transmitted sparse feature tokens.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CSTT" (4) | version u8 | sender_id u16 | frame u32 | pose 6 x f32 |
//! channels u16 | entry_count u32 | entries [(h u16, w u16, values C x f16)] |
//! CRC32 of all prior bytes (u32)
//! ```
//!
//! Values are IEEE half-precision, round-to-nearest-even; quantization
//! happens when a token set is built, so `decode(encode(x)) == x` holds
//! bit-for-bit on the token-set domain. The header deliberately carries no
//! grid dimensions: sender and receiver agree on grid geometry out of band
//! (it is part of the scenario), and [`SparseTokenSet::validate_bounds`]
//! checks entries against the receiver's grid.

use half::f16;
use thiserror::Error;

use crate::grid::{FeatureGrid, Pose};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"CSTT";
pub const VERSION: u8 = 1;

/// Fixed byte cost of a message before any entries.
pub const HEADER_LEN: usize = 4 + 1 + 2 + 4 + 24 + 2 + 4;
/// Trailing checksum.
pub const CRC_LEN: usize = 4;

/// Serialized size of one entry for a given channel count.
pub const fn entry_len(channels: usize) -> usize {
    4 + 2 * channels
}

/// Serialized size of a whole message with `entries` entries.
pub const fn message_len(entries: usize, channels: usize) -> usize {
    HEADER_LEN + entries * entry_len(channels) + CRC_LEN
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unexpected end of buffer at offset {0}")]
    Truncated(usize),
    #[error("{extra} trailing bytes after message at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("entries not sorted by (h, w) or duplicated at entry {index} (offset {offset})")]
    UnsortedEntries { index: usize, offset: usize },
    #[error(
        "entry {index} at offset {offset}: cell ({h}, {w}) outside grid {height}x{width}"
    )]
    OutOfBounds {
        index: usize,
        offset: usize,
        h: u16,
        w: u16,
        height: u16,
        width: u16,
    },
    #[error("channel count {got} does not match expected {expected}")]
    ChannelMismatch { got: u16, expected: u16 },
}

/// One transmitted cell: its grid coordinates and the half-precision
/// channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEntry {
    pub h: u16,
    pub w: u16,
    pub values: Vec<f16>,
}

/// The transmitted message: sparse feature tokens plus the sender metadata
/// the receiver needs to place and warp them.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTokenSet {
    pub sender_id: u16,
    pub frame: u32,
    /// (x, y, z, roll, pitch, yaw) of the sender, as transmitted.
    pub sender_pose: [f32; 6],
    pub channels: u16,
    /// Sorted by (h, w), no duplicates.
    pub entries: Vec<TokenEntry>,
}

impl SparseTokenSet {
    pub fn new<T: Real>(
        sender_id: u16,
        frame: u32,
        pose: &Pose<T>,
        channels: u16,
        mut entries: Vec<TokenEntry>,
    ) -> Self {
        entries.sort_by_key(|e| (e.h, e.w));
        entries.dedup_by_key(|e| (e.h, e.w));
        SparseTokenSet {
            sender_id,
            frame,
            sender_pose: pose_to_wire(pose),
            channels,
            entries,
        }
    }

    /// Dense message carrying every cell of a grid (the dense-transmission
    /// baseline goes through the same wire as sparse tokens).
    pub fn dense_from_grid<T: Real>(
        grid: &FeatureGrid<T>,
        sender_id: u16,
        frame: u32,
        pose: &Pose<T>,
    ) -> Self {
        let mut entries = Vec::with_capacity(grid.cells());
        for h in 0..grid.height() {
            for w in 0..grid.width() {
                entries.push(TokenEntry {
                    h: h as u16,
                    w: w as u16,
                    values: grid
                        .cell(h, w)
                        .iter()
                        .map(|v| f16::from_f64(v.as_f64()))
                        .collect(),
                });
            }
        }
        SparseTokenSet {
            sender_id,
            frame,
            sender_pose: pose_to_wire(pose),
            channels: grid.channels() as u16,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        message_len(self.entries.len(), self.channels as usize)
    }

    /// Sender pose widened back to the scalar domain.
    pub fn pose<T: Real>(&self) -> Pose<T> {
        let p = &self.sender_pose;
        Pose::new(
            T::c(p[0] as f64),
            T::c(p[1] as f64),
            T::c(p[2] as f64),
            T::c(p[3] as f64),
            T::c(p[4] as f64),
            T::c(p[5] as f64),
            self.frame,
        )
    }

    /// Check every entry lies inside an H x W grid, reporting the byte offset
    /// of the first violation as it would appear in the encoded message.
    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<(), WireError> {
        for (index, e) in self.entries.iter().enumerate() {
            if e.h as usize >= height || e.w as usize >= width {
                return Err(WireError::OutOfBounds {
                    index,
                    offset: HEADER_LEN + index * entry_len(self.channels as usize),
                    h: e.h,
                    w: e.w,
                    height: height as u16,
                    width: width as u16,
                });
            }
        }
        Ok(())
    }
}

fn pose_to_wire<T: Real>(pose: &Pose<T>) -> [f32; 6] {
    [
        pose.x.as_f64() as f32,
        pose.y.as_f64() as f32,
        pose.z.as_f64() as f32,
        pose.roll.as_f64() as f32,
        pose.pitch.as_f64() as f32,
        pose.yaw.as_f64() as f32,
    ]
}

/// Encode a token set into its wire bytes.
pub fn encode_tokens(set: &SparseTokenSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(set.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&set.sender_id.to_le_bytes());
    out.extend_from_slice(&set.frame.to_le_bytes());
    for v in set.sender_pose {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&set.channels.to_le_bytes());
    out.extend_from_slice(&(set.entries.len() as u32).to_le_bytes());
    for e in &set.entries {
        out.extend_from_slice(&e.h.to_le_bytes());
        out.extend_from_slice(&e.w.to_le_bytes());
        for v in &e.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decode a wire message. Verifies magic, version, length, checksum, and
/// that entries are strictly sorted by (h, w) with no duplicates.
pub fn decode_tokens(bytes: &[u8]) -> Result<SparseTokenSet, WireError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(WireError::Truncated(bytes.len()));
    }
    let body_len = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(WireError::Checksum { stored, computed });
    }

    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    let sender_id = r.u16()?;
    let frame = r.u32()?;
    let mut sender_pose = [0f32; 6];
    for v in sender_pose.iter_mut() {
        *v = r.f32()?;
    }
    let channels = r.u16()?;
    let entry_count = r.u32()? as usize;

    let need = entry_count
        .checked_mul(entry_len(channels as usize))
        .ok_or(WireError::Truncated(bytes.len()))?;
    if r.pos + need != body_len {
        if r.pos + need > body_len {
            return Err(WireError::Truncated(bytes.len()));
        }
        return Err(WireError::TrailingBytes {
            offset: r.pos + need,
            extra: body_len - r.pos - need,
        });
    }

    let mut entries = Vec::with_capacity(entry_count);
    let mut last: Option<(u16, u16)> = None;
    for index in 0..entry_count {
        let offset = r.pos;
        let h = r.u16()?;
        let w = r.u16()?;
        if let Some(prev) = last {
            if (h, w) <= prev {
                return Err(WireError::UnsortedEntries { index, offset });
            }
        }
        last = Some((h, w));
        let mut values = Vec::with_capacity(channels as usize);
        for _ in 0..channels {
            values.push(f16::from_bits(r.u16()?));
        }
        entries.push(TokenEntry { h, w, values });
    }

    Ok(SparseTokenSet {
        sender_id,
        frame,
        sender_pose,
        channels,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> SparseTokenSet {
        let pose = Pose::planar(1.5f64, -2.25, 0.5, 9);
        SparseTokenSet::new(
            3,
            9,
            &pose,
            2,
            vec![
                TokenEntry { h: 0, w: 1, values: vec![f16::from_f64(0.5), f16::from_f64(-1.0)] },
                TokenEntry { h: 2, w: 0, values: vec![f16::from_f64(3.25), f16::from_f64(0.0)] },
                TokenEntry { h: 2, w: 7, values: vec![f16::from_f64(-0.125), f16::from_f64(8.0)] },
            ],
        )
    }

    #[test]
    fn empty_set_roundtrips_as_header_only() {
        let pose = Pose::<f64>::identity(0);
        let set = SparseTokenSet::new(1, 0, &pose, 4, vec![]);
        let bytes = encode_tokens(&set);
        assert_eq!(bytes.len(), HEADER_LEN + CRC_LEN);
        assert_eq!(decode_tokens(&bytes).unwrap(), set);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let set = sample_set();
        let bytes = encode_tokens(&set);
        assert_eq!(bytes.len(), set.encoded_len());
        let back = decode_tokens(&bytes).unwrap();
        assert_eq!(back, set);
        // and the re-encoding is byte-identical
        assert_eq!(encode_tokens(&back), bytes);
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let set = sample_set();
        let bytes = encode_tokens(&set);
        for pos in 0..bytes.len() {
            for bit in [0x01u8, 0x80u8] {
                let mut corrupt = bytes.clone();
                corrupt[pos] ^= bit;
                assert!(
                    decode_tokens(&corrupt).is_err(),
                    "flip at byte {pos} went undetected"
                );
            }
        }
    }

    #[test]
    fn truncation_and_magic_errors() {
        let set = sample_set();
        let bytes = encode_tokens(&set);
        assert!(matches!(
            decode_tokens(&bytes[..10]),
            Err(WireError::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        // checksum covers the magic, so either error is acceptable; rebuild
        // a message with valid crc but bad magic to hit the magic check.
        let body_len = bad.len() - CRC_LEN;
        let crc = crc32fast::hash(&bad[..body_len]);
        bad[body_len..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_tokens(&bad), Err(WireError::BadMagic));
    }

    #[test]
    fn unsorted_entries_rejected() {
        let set = sample_set();
        let mut bytes = encode_tokens(&set);
        // swap the (h, w) of the first two entries in the raw bytes
        let e0 = HEADER_LEN;
        let e1 = HEADER_LEN + entry_len(2);
        let (a, b) = (e0, e1);
        for i in 0..4 {
            bytes.swap(a + i, b + i);
        }
        let body_len = bytes.len() - CRC_LEN;
        let crc = crc32fast::hash(&bytes[..body_len]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_tokens(&bytes),
            Err(WireError::UnsortedEntries { index: 1, .. })
        ));
    }

    #[test]
    fn constructor_sorts_and_dedups() {
        let pose = Pose::<f64>::identity(0);
        let set = SparseTokenSet::new(
            0,
            0,
            &pose,
            1,
            vec![
                TokenEntry { h: 5, w: 5, values: vec![f16::from_f64(1.0)] },
                TokenEntry { h: 0, w: 3, values: vec![f16::from_f64(2.0)] },
                TokenEntry { h: 5, w: 5, values: vec![f16::from_f64(9.0)] },
            ],
        );
        assert_eq!(set.entries.len(), 2);
        assert_eq!((set.entries[0].h, set.entries[0].w), (0, 3));
        assert_eq!((set.entries[1].h, set.entries[1].w), (5, 5));
    }

    #[test]
    fn bounds_validation_reports_offset() {
        let set = sample_set();
        set.validate_bounds(8, 8).unwrap();
        let err = set.validate_bounds(3, 4).unwrap_err();
        match err {
            WireError::OutOfBounds { index, offset, h, w, .. } => {
                assert_eq!(index, 2);
                assert_eq!(offset, HEADER_LEN + 2 * entry_len(2));
                assert_eq!((h, w), (2, 7));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
