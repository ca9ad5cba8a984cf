//! Packed one-bit-per-element planes, LSB-first within each byte.

/// A fixed-length bit vector whose unused high bits in the last byte are
/// always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitplane {
    len: usize,
    bytes: Vec<u8>,
}

impl Bitplane {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut bytes = Vec::new();
        let mut len = 0usize;
        for b in bits {
            if len % 8 == 0 {
                bytes.push(0);
            }
            if b {
                *bytes.last_mut().unwrap() |= 1 << (len % 8);
            }
            len += 1;
        }
        Self { len, bytes }
    }

    /// Wraps raw bytes, returning `None` unless the length is exactly
    /// `ceil(len / 8)` and every padding bit is zero.
    pub fn from_bytes(len: usize, bytes: Vec<u8>) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        if len % 8 != 0 {
            let pad_mask = !((1u8 << (len % 8)) - 1);
            if bytes.last().copied().unwrap_or(0) & pad_mask != 0 {
                return None;
            }
        }
        Some(Self { len, bytes })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let bit = 1u8 << (i % 8);
        if value {
            self.bytes[i / 8] |= bit;
        } else {
            self.bytes[i / 8] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Reads up to 64 bits starting at `offset`; bit `k` of the result is
    /// element `offset + k`. Bits past `len` read as zero.
    #[inline]
    pub fn word(&self, offset: usize, nbits: usize) -> u64 {
        debug_assert!(nbits <= 64);
        if nbits == 0 {
            return 0;
        }
        let first = offset / 8;
        let shift = offset % 8;
        let mut raw = 0u128;
        let span = (shift + nbits).div_ceil(8);
        for (k, &b) in self.bytes[first..].iter().take(span).enumerate() {
            raw |= (b as u128) << (8 * k);
        }
        let w = (raw >> shift) as u64;
        if nbits == 64 {
            w
        } else {
            w & ((1u64 << nbits) - 1)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}
