//! Fixed-width signed integers packed into 64-bit words.
//!
//! A `k`-bit tensor stores `64 / k` elements per word. Element `i` lives in
//! slot `i % capacity` of word `i / capacity`, slot 0 being the least
//! significant `k` bits. Values are kept as `k`-bit two's complement and the
//! unused high bits of every word are zero.

use crate::error::{Error, Result};

pub const MAX_BITS: u8 = 8;

/// Number of `k`-bit elements that fit in one 64-bit word.
pub fn capacity(bits: u8) -> Result<usize> {
    check_bits(bits)?;
    Ok(64 / bits as usize)
}

/// Words needed for `len` elements of width `bits`.
pub fn word_count(len: usize, bits: u8) -> Result<usize> {
    Ok(len.div_ceil(capacity(bits)?))
}

/// Bytes taken by `param_count` packed `bits`-wide elements.
pub fn packed_byte_size(param_count: u64, bits: u8) -> Result<u64> {
    let cap = capacity(bits)? as u64;
    Ok(8 * param_count.div_ceil(cap))
}

/// Inclusive signed range representable in `bits` bits.
pub fn signed_range(bits: u8) -> (i64, i64) {
    let half = 1i64 << (bits - 1);
    (-half, half - 1)
}

fn check_bits(bits: u8) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBitwidth(bits))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    bits: u8,
    len: usize,
    shape: Vec<usize>,
    words: Vec<u64>,
}

impl PackedTensor {
    pub fn pack(values: &[i32], bits: u8, shape: &[usize]) -> Result<Self> {
        check_bits(bits)?;
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                actual: values.len(),
            });
        }
        let (lo, hi) = signed_range(bits);
        let cap = 64 / bits as usize;
        let mask = slot_mask(bits);
        let mut words = vec![0u64; values.len().div_ceil(cap)];
        for (i, &v) in values.iter().enumerate() {
            let v = v as i64;
            if v < lo || v > hi {
                return Err(Error::OutOfRange {
                    index: i,
                    value: v,
                    bits,
                });
            }
            let slot = (i % cap) as u32 * bits as u32;
            words[i / cap] |= ((v as u64) & mask) << slot;
        }
        Ok(Self {
            bits,
            len: values.len(),
            shape: shape.to_vec(),
            words,
        })
    }

    /// Rebuilds a tensor from raw words, checking word count and padding.
    pub fn from_words(words: Vec<u64>, bits: u8, shape: &[usize]) -> Result<Self> {
        check_bits(bits)?;
        let len: usize = shape.iter().product();
        let cap = 64 / bits as usize;
        let expected = len.div_ceil(cap);
        if words.len() != expected {
            return Err(Error::PackedFormat(format!(
                "{} words for {} {}-bit elements, expected {}",
                words.len(),
                len,
                bits,
                expected
            )));
        }
        let used_last = len - (expected.saturating_sub(1)) * cap;
        let full_used = cap * bits as usize;
        for (w, &word) in words.iter().enumerate() {
            let used_bits = if w + 1 == expected {
                used_last * bits as usize
            } else {
                full_used
            };
            if used_bits < 64 && word >> used_bits != 0 {
                return Err(Error::PackedFormat(format!(
                    "non-zero padding bits in word {w}"
                )));
            }
        }
        Ok(Self {
            bits,
            len,
            shape: shape.to_vec(),
            words,
        })
    }

    pub fn unpack(&self) -> Result<Vec<i32>> {
        let cap = 64 / self.bits as usize;
        if self.words.len() != self.len.div_ceil(cap) {
            return Err(Error::PackedFormat(format!(
                "{} words cannot hold exactly {} elements",
                self.words.len(),
                self.len
            )));
        }
        let mask = slot_mask(self.bits);
        let shift = 64 - self.bits as u32;
        let mut out = Vec::with_capacity(self.len);
        for i in 0..self.len {
            let slot = (i % cap) as u32 * self.bits as u32;
            let raw = (self.words[i / cap] >> slot) & mask;
            // sign-extend from `bits`
            out.push((((raw << shift) as i64) >> shift) as i32);
        }
        Ok(out)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn byte_size(&self) -> u64 {
        8 * self.words.len() as u64
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

fn slot_mask(bits: u8) -> u64 {
    (1u64 << bits) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn capacity_per_word() {
        assert_eq!(capacity(3).unwrap(), 21);
        assert_eq!(capacity(5).unwrap(), 12);
        assert_eq!(capacity(8).unwrap(), 8);
        assert_eq!(capacity(1).unwrap(), 64);
        assert!(matches!(capacity(0), Err(Error::InvalidBitwidth(0))));
        assert!(matches!(capacity(9), Err(Error::InvalidBitwidth(9))));
    }

    #[test]
    fn minus_one_fills_low_nibble() {
        let p = PackedTensor::pack(&[-1], 4, &[1]).unwrap();
        assert_eq!(p.words(), &[0b1111]);
    }

    #[test]
    fn empty_tensor_has_no_words() {
        for k in 1..=8 {
            let p = PackedTensor::pack(&[], k, &[0]).unwrap();
            assert_eq!(p.words().len(), 0);
            assert_eq!(p.len(), 0);
            assert!(p.unpack().unwrap().is_empty());
        }
    }

    #[test]
    fn boundary_values_round_trip() {
        let p = PackedTensor::pack(&[-8, 7, 0], 4, &[3]).unwrap();
        assert_eq!(p.unpack().unwrap(), vec![-8, 7, 0]);
    }

    #[test]
    fn sign_extension_from_raw_word() {
        let p = PackedTensor::from_words(vec![0xF], 4, &[1]).unwrap();
        assert_eq!(p.unpack().unwrap(), vec![-1]);
    }

    #[test]
    fn out_of_range_names_index() {
        let err = PackedTensor::pack(&[0, 1, 8], 4, &[3]).unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfRange {
                index: 2,
                value: 8,
                bits: 4
            }
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = PackedTensor::pack(&[0, 1, 2], 4, &[2, 2]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn wrong_word_count_is_format_error() {
        let err = PackedTensor::from_words(vec![0, 0], 4, &[3]).unwrap_err();
        assert!(matches!(err, Error::PackedFormat(_)));
    }

    #[test]
    fn dirty_padding_is_format_error() {
        // three 4-bit elements use the low 12 bits only
        let err = PackedTensor::from_words(vec![1 << 20], 4, &[3]).unwrap_err();
        assert!(matches!(err, Error::PackedFormat(_)));
    }

    #[test]
    fn byte_size_law() {
        assert_eq!(packed_byte_size(21, 3).unwrap(), 8);
        assert_eq!(packed_byte_size(22, 3).unwrap(), 16);
        assert_eq!(packed_byte_size(0, 5).unwrap(), 0);
        assert_eq!(packed_byte_size(11_157_504, 8).unwrap(), 11_157_504);
    }

    #[test]
    fn twenty_one_three_bit_values_fill_one_word() {
        let vals: Vec<i32> = (0..21).map(|i| (i % 8) - 4).collect();
        let p = PackedTensor::pack(&vals, 3, &[21]).unwrap();
        assert_eq!(p.words().len(), 1);
        assert_eq!(p.words()[0] >> 63, 0);
        assert_eq!(p.unpack().unwrap(), vals);
    }

    fn values_for(bits: u8) -> impl Strategy<Value = Vec<i32>> {
        let (lo, hi) = signed_range(bits);
        prop::collection::vec(lo as i32..=hi as i32, 0..300)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip(bits in 1u8..=8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = signed_range(bits);
            let n = rng.random_range(0..200usize);
            let vals: Vec<i32> = (0..n).map(|_| rng.random_range(lo..=hi) as i32).collect();
            let p = PackedTensor::pack(&vals, bits, &[n]).unwrap();
            prop_assert_eq!(p.unpack().unwrap(), vals.clone());
            // deterministic and reloadable from its words
            let again = PackedTensor::from_words(p.words().to_vec(), bits, &[n]).unwrap();
            prop_assert_eq!(again, p);
        }

        #[test]
        fn size_is_monotone(count in 0u64..100_000, bits in 1u8..8) {
            let a = packed_byte_size(count, bits).unwrap();
            prop_assert!(packed_byte_size(count + 1, bits).unwrap() >= a);
            prop_assert!(packed_byte_size(count, bits + 1).unwrap() >= a);
        }

        #[test]
        fn round_trip_mid_widths(v in (3u8..=7).prop_flat_map(|b| (Just(b), values_for(b)))) {
            let (bits, vals) = v;
            let p = PackedTensor::pack(&vals, bits, &[vals.len()]).unwrap();
            prop_assert_eq!(p.unpack().unwrap(), vals);
        }
    }
}
