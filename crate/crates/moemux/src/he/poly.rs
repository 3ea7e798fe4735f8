//! Negacyclic polynomial arithmetic over Z_{2^64}[X]/(X^N + 1) and the
//! coefficient packings that turn one ring product into a matrix product.
//!
//! A k×m matrix packed with [`encode_left`] times an m×n matrix packed with
//! [`encode_right`] places (x·W)_{i,j} at coefficient i·m·n + j·m + (m−1):
//! the two placement formulas make every index sum along one inner product
//! collapse to the same spot, and the capacity bound k·m·n ≤ N keeps all
//! live terms below the wrap-around degree. Larger matrices are cut into
//! row/column tiles by [`plan_matmul`].

use crate::error::{Error, Result};
use crate::fixed::FixedTensor;

/// Multiplications at or below this length fall back to schoolbook.
const KARATSUBA_BASE: usize = 64;

/// Schoolbook product in Z_{2^64}[X]/(X^N + 1). Reference oracle; use
/// [`negacyclic_mul`] for anything hot.
pub fn negacyclic_mul_schoolbook(a: &[u64], b: &[u64]) -> Vec<u64> {
    let n = a.len();
    assert_eq!(n, b.len(), "operand lengths must match");
    let mut out = vec![0u64; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let p = ai.wrapping_mul(bj);
            let idx = i + j;
            if idx < n {
                out[idx] = out[idx].wrapping_add(p);
            } else {
                out[idx - n] = out[idx - n].wrapping_sub(p);
            }
        }
    }
    out
}

/// Karatsuba product in Z_{2^64}[X]/(X^N + 1), N a power of two.
pub fn negacyclic_mul(a: &[u64], b: &[u64]) -> Vec<u64> {
    let n = a.len();
    assert_eq!(n, b.len(), "operand lengths must match");
    assert!(n.is_power_of_two(), "ring degree must be a power of two");
    if n <= KARATSUBA_BASE {
        return negacyclic_mul_schoolbook(a, b);
    }
    // Full linear convolution, then fold X^N ≡ −1.
    let mut conv = vec![0u64; 2 * n - 1];
    conv_acc(a, b, &mut conv);
    let mut out = conv[..n].to_vec();
    for i in n..2 * n - 1 {
        out[i - n] = out[i - n].wrapping_sub(conv[i]);
    }
    out
}

/// Adds the linear convolution a*b into `out` (length ≥ a.len()+b.len()−1).
fn conv_acc(a: &[u64], b: &[u64], out: &mut [u64]) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n <= KARATSUBA_BASE {
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                out[i + j] = out[i + j].wrapping_add(ai.wrapping_mul(bj));
            }
        }
        return;
    }
    let h = n / 2;
    let (a0, a1) = a.split_at(h);
    let (b0, b1) = b.split_at(h);
    let mut t0 = vec![0u64; 2 * h - 1];
    let mut t2 = vec![0u64; 2 * h - 1];
    conv_acc(a0, b0, &mut t0);
    conv_acc(a1, b1, &mut t2);
    let asum: Vec<u64> = a0.iter().zip(a1).map(|(&x, &y)| x.wrapping_add(y)).collect();
    let bsum: Vec<u64> = b0.iter().zip(b1).map(|(&x, &y)| x.wrapping_add(y)).collect();
    let mut t1 = vec![0u64; 2 * h - 1];
    conv_acc(&asum, &bsum, &mut t1);
    for i in 0..2 * h - 1 {
        t1[i] = t1[i].wrapping_sub(t0[i]).wrapping_sub(t2[i]);
    }
    for i in 0..2 * h - 1 {
        out[i] = out[i].wrapping_add(t0[i]);
        out[i + h] = out[i + h].wrapping_add(t1[i]);
        out[i + 2 * h] = out[i + 2 * h].wrapping_add(t2[i]);
    }
}

/// Packs the left (k×m) matmul operand: x̂[i·m·n + (m−1) − j] = x_{i,j}.
/// `n` is the column count of the companion right operand.
pub fn encode_left(x: &FixedTensor, n: usize, ring_n: usize) -> Result<Vec<u64>> {
    let (k, m) = (x.rows, x.cols);
    check_capacity(k, m, n, ring_n)?;
    let mut coeffs = vec![0u64; ring_n];
    for i in 0..k {
        for j in 0..m {
            coeffs[i * m * n + (m - 1) - j] = x.at(i, j);
        }
    }
    Ok(coeffs)
}

/// Packs the right (m×n) matmul operand: ŵ[j·m + i] = W_{i,j}.
/// `k` is the row count of the companion left operand.
pub fn encode_right(w: &FixedTensor, k: usize, ring_n: usize) -> Result<Vec<u64>> {
    let (m, n) = (w.rows, w.cols);
    check_capacity(k, m, n, ring_n)?;
    let mut coeffs = vec![0u64; ring_n];
    for i in 0..m {
        for j in 0..n {
            coeffs[j * m + i] = w.at(i, j);
        }
    }
    Ok(coeffs)
}

/// Reads the k×n product out of encode_left(x)·encode_right(W):
/// entry (i,j) sits at coefficient i·m·n + j·m + (m−1).
pub fn matmul_extract(poly: &[u64], k: usize, m: usize, n: usize) -> Result<FixedTensor> {
    check_capacity(k, m, n, poly.len())?;
    let mut out = FixedTensor::zeros(k, n);
    for i in 0..k {
        for j in 0..n {
            out.set(i, j, poly[i * m * n + j * m + (m - 1)]);
        }
    }
    Ok(out)
}

fn check_capacity(k: usize, m: usize, n: usize, ring_n: usize) -> Result<()> {
    if k == 0 || m == 0 || n == 0 {
        return Err(Error::shape("matmul dims must be nonzero"));
    }
    if k.saturating_mul(m).saturating_mul(n) > ring_n {
        return Err(Error::shape(format!(
            "packing overflow: k*m*n = {}*{}*{} > ring degree {ring_n}",
            k, m, n
        )));
    }
    Ok(())
}

/// Row/column tiling for a k×m by m×n product in a degree-N ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlan {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// Rows of x per block.
    pub k_tile: usize,
    /// Columns of W per block.
    pub n_tile: usize,
}

impl TilePlan {
    pub fn row_tiles(&self) -> usize {
        self.k.div_ceil(self.k_tile)
    }

    pub fn col_tiles(&self) -> usize {
        self.n.div_ceil(self.n_tile)
    }

    /// Total ciphertext blocks the product costs.
    pub fn blocks(&self) -> usize {
        self.row_tiles() * self.col_tiles()
    }

    /// Row range of x covered by row tile `r`.
    pub fn rows_of(&self, r: usize) -> std::ops::Range<usize> {
        let lo = r * self.k_tile;
        lo..(lo + self.k_tile).min(self.k)
    }

    /// Column range of W covered by column tile `c`.
    pub fn cols_of(&self, c: usize) -> std::ops::Range<usize> {
        let lo = c * self.n_tile;
        lo..(lo + self.n_tile).min(self.n)
    }
}

/// Chooses the widest column tile that fits, then packs as many rows as the
/// remaining capacity allows. Requires m ≤ N.
pub fn plan_matmul(k: usize, m: usize, n: usize, ring_n: usize) -> Result<TilePlan> {
    if k == 0 || m == 0 || n == 0 {
        return Err(Error::shape("matmul dims must be nonzero"));
    }
    if m > ring_n {
        return Err(Error::shape(format!("inner dim {m} exceeds ring degree {ring_n}")));
    }
    let n_tile = n.min(ring_n / m);
    let k_tile = k.min(ring_n / (m * n_tile)).max(1);
    Ok(TilePlan { k, m, n, k_tile, n_tile })
}
