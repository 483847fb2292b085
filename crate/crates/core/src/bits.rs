//! Bit-exact state encodings.
//!
//! Persistent policy state is accounted in bits, so encodings must be
//! canonical: a fixed field order with fixed widths determined by the public
//! parameters (horizon, arm count, block size), never by the state contents.
//! Fields are written MSB-first (big-endian within each field).
//!
//! Two sinks share the same field-writing code: [`BitWriter`] materializes
//! the encoding, [`BitCounter`] only measures it. The runtime counts bits
//! after every round and materializes only at batch boundaries.

/// A packed bit string with an exact bit length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len_bits: u64,
}

impl BitString {
    /// Length in bits.
    pub fn len(&self) -> u64 {
        self.len_bits
    }

    pub fn is_empty(&self) -> bool {
        self.len_bits == 0
    }

    /// Packed bytes, MSB-first; trailing bits of the last byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn from_parts(bytes: Vec<u8>, len_bits: u64) -> Self {
        debug_assert!(bytes.len() as u64 * 8 >= len_bits);
        Self { bytes, len_bits }
    }
}

/// Destination for fixed-width big-endian fields.
pub trait BitSink {
    /// Append the low `width` bits of `value`. `width` may be 0 (no-op) and
    /// must be at most 64; `value` must fit in `width` bits.
    fn put(&mut self, value: u64, width: u32);
}

/// Collects fields into a [`BitString`].
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len_bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> BitString {
        BitString {
            bytes: self.bytes,
            len_bits: self.len_bits,
        }
    }
}

impl BitSink for BitWriter {
    fn put(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(
            width == 64 || value < (1u64 << width),
            "value overflows field"
        );
        for shift in (0..width).rev() {
            let bit = (value >> shift) & 1;
            let bit_pos = (self.len_bits % 8) as u8;
            if bit_pos == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (7 - bit_pos);
            }
            self.len_bits += 1;
        }
    }
}

/// Measures an encoding without materializing it.
#[derive(Debug, Default)]
pub struct BitCounter {
    pub bits: u64,
}

impl BitSink for BitCounter {
    fn put(&mut self, _value: u64, width: u32) {
        self.bits += width as u64;
    }
}

/// Reads fields back in the order they were written.
#[derive(Debug)]
pub struct BitReader<'a> {
    data: &'a BitString,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a BitString) -> Self {
        Self { data, pos: 0 }
    }

    /// Read a `width`-bit field; `None` if the string is exhausted.
    pub fn take(&mut self, width: u32) -> Option<u64> {
        debug_assert!(width <= 64);
        if self.pos + width as u64 > self.data.len_bits {
            return None;
        }
        let mut value = 0u64;
        for _ in 0..width {
            let byte = self.data.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8) as u8)) & 1;
            value = (value << 1) | bit as u64;
            self.pos += 1;
        }
        Some(value)
    }

    /// True once every written bit has been consumed.
    pub fn exhausted(&self) -> bool {
        self.pos == self.data.len_bits
    }
}

/// Width in bits of a field that must represent every integer in `0..=max`.
///
/// `width_for_max(T)` is the counter width `ceil(log2(T+1))`; arm identities
/// over `K` arms use `width_for_max(K-1)`.
pub fn width_for_max(max: u64) -> u32 {
    64 - max.leading_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counter_widths() {
        assert_eq!(width_for_max(0), 0);
        assert_eq!(width_for_max(1), 1);
        assert_eq!(width_for_max(1_000_000), 20); // ceil(log2(10^6 + 1))
        assert_eq!(width_for_max(u64::MAX), 64);
    }

    #[test]
    fn empty_encoding_is_zero_bits() {
        let bits = BitWriter::new().finish();
        assert_eq!(bits.len(), 0);
        assert!(bits.is_empty());
    }

    #[test]
    fn counter_matches_writer() {
        let fields = [(5u64, 3u32), (0, 0), (1023, 10), (1, 1), (u64::MAX, 64)];
        let mut w = BitWriter::new();
        let mut c = BitCounter::default();
        for &(v, k) in &fields {
            w.put(v, k);
            c.put(v, k);
        }
        assert_eq!(w.finish().len(), c.bits);
    }

    proptest! {
        #[test]
        fn roundtrip(fields in proptest::collection::vec((any::<u64>(), 0u32..=64), 0..32)) {
            let mut w = BitWriter::new();
            let masked: Vec<(u64, u32)> = fields
                .iter()
                .map(|&(v, k)| (if k == 64 { v } else { v & ((1u64 << k) - 1) }, k))
                .collect();
            for &(v, k) in &masked {
                w.put(v, k);
            }
            let bits = w.finish();
            let mut r = BitReader::new(&bits);
            for &(v, k) in &masked {
                prop_assert_eq!(r.take(k), Some(v));
            }
            prop_assert!(r.exhausted());
        }
    }
}
