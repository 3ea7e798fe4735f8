//! Packed bit vectors for XOR-shared boolean values.
//!
//! Bits are packed 64 to a word, lsb first. Dead bits past `len` are kept
//! zero as an invariant so wire images and parity folds are canonical.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bits {
    len: usize,
    words: Vec<u64>,
}

fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl Bits {
    pub fn zeros(len: usize) -> Bits {
        Bits { len, words: vec![0; word_count(len)] }
    }

    /// All `len` bits set.
    pub fn ones(len: usize) -> Bits {
        let mut b = Bits { len, words: vec![u64::MAX; word_count(len)] };
        b.mask_tail();
        b
    }

    pub fn from_bools(bools: &[bool]) -> Bits {
        let mut b = Bits::zeros(bools.len());
        for (i, &v) in bools.iter().enumerate() {
            if v {
                b.set(i, 1);
            }
        }
        b
    }

    pub fn from_words(len: usize, words: Vec<u64>) -> Bits {
        assert_eq!(words.len(), word_count(len));
        let mut b = Bits { len, words };
        b.mask_tail();
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    fn mask_tail(&mut self) {
        let tail = self.len % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> u64 {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: u64) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / 64];
        *w = (*w & !(1u64 << (i % 64))) | ((v & 1) << (i % 64));
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len);
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Bits { len: self.len, words }
    }

    pub fn xor_assign(&mut self, other: &Bits) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    /// Flip every live bit (one party applies this to negate a shared bit).
    pub fn flip_all(&mut self) {
        for w in self.words.iter_mut() {
            *w = !*w;
        }
        self.mask_tail();
    }

    /// `len` copies of one bit value (or one party's share of it).
    pub fn broadcast(bit: u64, len: usize) -> Bits {
        if bit & 1 == 1 {
            Bits::ones(len)
        } else {
            Bits::zeros(len)
        }
    }

    /// Concatenate several bit vectors.
    pub fn concat(parts: &[&Bits]) -> Bits {
        let len = parts.iter().map(|p| p.len).sum();
        let mut out = Bits::zeros(len);
        let mut at = 0;
        for p in parts {
            for i in 0..p.len {
                out.set(at + i, p.get(i));
            }
            at += p.len;
        }
        out
    }

    pub fn slice(&self, start: usize, len: usize) -> Bits {
        assert!(start + len <= self.len);
        let mut out = Bits::zeros(len);
        for i in 0..len {
            out.set(i, self.get(start + i));
        }
        out
    }

    /// Canonical wire image: ceil(len/8) bytes, little-endian within words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        let mut out = vec![0u8; n_bytes];
        for (i, byte) in out.iter_mut().enumerate() {
            let w = self.words[i / 8];
            *byte = (w >> ((i % 8) * 8)) as u8;
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Option<Bits> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut words = vec![0u64; word_count(len)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        let b = Bits { len, words };
        // Reject nonzero dead bits so wire images stay canonical.
        let mut masked = b.clone();
        masked.mask_tail();
        if masked != b {
            return None;
        }
        Some(b)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i) == 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_roundtrip() {
        let pattern: Vec<bool> = (0..131).map(|i| i % 3 == 0 || i % 7 == 1).collect();
        let b = Bits::from_bools(&pattern);
        assert_eq!(b.len(), 131);
        assert_eq!(b.to_bools(), pattern);
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), 17);
        assert_eq!(Bits::from_bytes(131, &bytes).unwrap(), b);
    }

    #[test]
    fn dead_bits_stay_zero() {
        let mut b = Bits::ones(70);
        assert_eq!(b.words()[1], (1u64 << 6) - 1);
        b.flip_all();
        assert_eq!(b.words(), &[0, 0]);
        let mut c = Bits::zeros(3);
        c.set(1, 1);
        c.flip_all();
        assert_eq!(c.words()[0], 0b101);
    }

    #[test]
    fn concat_and_slice() {
        let a = Bits::from_bools(&[true, false, true]);
        let b = Bits::from_bools(&[false, true]);
        let c = Bits::concat(&[&a, &b]);
        assert_eq!(c.to_bools(), vec![true, false, true, false, true]);
        assert_eq!(c.slice(2, 3).to_bools(), vec![true, false, true]);
    }

    #[test]
    fn xor_and_broadcast() {
        let a = Bits::from_bools(&[true, true, false]);
        let b = Bits::from_bools(&[true, false, false]);
        assert_eq!(a.xor(&b).to_bools(), vec![false, true, false]);
        assert_eq!(Bits::broadcast(1, 4).to_bools(), vec![true; 4]);
        assert_eq!(Bits::broadcast(0, 2).to_bools(), vec![false; 2]);
    }

    #[test]
    fn non_canonical_bytes_rejected() {
        // 3 bits need 1 byte; a set bit above position 2 must be rejected.
        assert!(Bits::from_bytes(3, &[0b1000]).is_none());
        assert!(Bits::from_bytes(3, &[0b0101]).is_some());
        assert!(Bits::from_bytes(9, &[0xff]).is_none());
    }
}
