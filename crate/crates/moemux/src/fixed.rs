//! Fixed-point arithmetic over the ring Z_{2^ell}.
//!
//! Reals are encoded as round(x * 2^frac) reduced mod 2^ell; negatives live in
//! the upper half of the ring (two's complement). All protocol values are plain
//! `u64` ring elements; this module owns the encode/decode boundary and the
//! plaintext truncation oracle that the secure truncation protocol must match
//! bit for bit.

/// Ring width and fixed-point scale for one run.
///
/// `ell` is the ring bit width (1..=64); `frac` is the number of fractional
/// bits. Small widths exist so tests can sweep rings exhaustively.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedConfig {
    pub ell: u32,
    pub frac: u32,
}

impl FixedConfig {
    /// Production parameters: 64-bit ring, 18 fractional bits.
    pub const DEFAULT: FixedConfig = FixedConfig { ell: 64, frac: 18 };

    pub fn new(ell: u32, frac: u32) -> FixedConfig {
        assert!(ell >= 2 && ell <= 64, "ring width {ell} out of range");
        assert!(frac < ell, "fractional bits {frac} must be < ring width {ell}");
        FixedConfig { ell, frac }
    }

    /// All-ones mask for the ring; reduction mod 2^ell is `v & mask`.
    #[inline]
    pub fn mask(self) -> u64 {
        if self.ell == 64 { u64::MAX } else { (1u64 << self.ell) - 1 }
    }

    /// 2^(ell-1), the sign threshold.
    #[inline]
    pub fn half(self) -> u64 {
        1u64 << (self.ell - 1)
    }

    /// The encoding of 1.0.
    #[inline]
    pub fn one(self) -> u64 {
        1u64 << self.frac
    }

    /// Encode a real; result is the two's-complement representative mod 2^ell.
    pub fn encode(self, x: f64) -> u64 {
        let scaled = (x * (1u64 << self.frac) as f64).round();
        (scaled as i64 as u64) & self.mask()
    }

    /// Signed representative in [-2^(ell-1), 2^(ell-1)).
    #[inline]
    pub fn to_signed(self, v: u64) -> i64 {
        let v = v & self.mask();
        if self.ell == 64 {
            v as i64
        } else if v >= self.half() {
            (v as i64) - (1i64 << self.ell)
        } else {
            v as i64
        }
    }

    #[inline]
    pub fn from_signed(self, x: i64) -> u64 {
        (x as u64) & self.mask()
    }

    /// Decode back to a real.
    pub fn decode(self, v: u64) -> f64 {
        self.to_signed(v) as f64 / (1u64 << self.frac) as f64
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        a.wrapping_mul(b) & self.mask()
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        a.wrapping_neg() & self.mask()
    }

    /// Plaintext truncation oracle: arithmetic right shift of the signed
    /// representative, reduced back into the ring. The secure protocol must
    /// reproduce this exactly on every ring element.
    pub fn truncate_plain(self, v: u64, shift: u32) -> u64 {
        debug_assert!(shift < self.ell);
        self.from_signed(self.to_signed(v) >> shift)
    }

    /// Fixed-point multiply in the clear: full ring product, then truncate by
    /// `frac`. Mirrors the secure pi_Mul + pi_trunc pair.
    pub fn mul_fixed(self, a: u64, b: u64) -> u64 {
        self.truncate_plain(self.mul(a, b), self.frac)
    }

    /// Ring element wire size in bytes.
    #[inline]
    pub fn elem_bytes(self) -> usize {
        self.ell.div_ceil(8) as usize
    }
}

/// Dense row-major matrix of ring elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u64>,
}

impl FixedTensor {
    pub fn zeros(rows: usize, cols: usize) -> FixedTensor {
        FixedTensor { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<u64>) -> FixedTensor {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        FixedTensor { rows, cols, data }
    }

    /// Encode a real matrix given row-major.
    pub fn encode(cfg: FixedConfig, rows: usize, cols: usize, vals: &[f64]) -> FixedTensor {
        assert_eq!(vals.len(), rows * cols);
        FixedTensor { rows, cols, data: vals.iter().map(|&x| cfg.encode(x)).collect() }
    }

    pub fn decode(&self, cfg: FixedConfig) -> Vec<f64> {
        self.data.iter().map(|&v| cfg.decode(v)).collect()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> FixedTensor {
        let mut out = FixedTensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    /// Copy of the given row/column window.
    pub fn submatrix(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> FixedTensor {
        assert!(rows.end <= self.rows && cols.end <= self.cols, "submatrix out of range");
        let mut out = FixedTensor::zeros(rows.len(), cols.len());
        for (ri, r) in rows.clone().enumerate() {
            for (ci, c) in cols.clone().enumerate() {
                out.set(ri, ci, self.at(r, c));
            }
        }
        out
    }

    /// Plaintext matmul at doubled scale: out = self * rhs over the ring
    /// (no truncation; caller truncates by frac once).
    pub fn matmul(&self, cfg: FixedConfig, rhs: &FixedTensor) -> FixedTensor {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension mismatch");
        let mut out = FixedTensor::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for t in 0..self.cols {
                let a = self.at(i, t);
                if a == 0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let cur = out.at(i, j);
                    out.set(i, j, cfg.add(cur, cfg.mul(a, rhs.at(t, j))));
                }
            }
        }
        out
    }
}
