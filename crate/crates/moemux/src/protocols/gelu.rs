//! Piecewise-quadratic GeLU over shares: one batched comparison against the
//! public breakpoints, one batched coefficient MUX, then a single quadratic
//! evaluation — versus the naive baseline that Horner-evaluates every
//! segment and selects afterwards.

use crate::error::Result;
use crate::plain;
use crate::sharing::{Bits, Mpc};

/// Segment-membership bits for a batch: for each of the five thresholds, a
/// lane per element, packed [threshold][element].
fn threshold_bits(mpc: &mut Mpc, x: &[u64]) -> Result<Bits> {
    let e = x.len();
    let thresholds = plain::piecewise_thresholds(mpc.cfg, &plain::GELU);
    let mut lanes = Vec::with_capacity(thresholds.len() * e);
    let mut bounds = Vec::with_capacity(thresholds.len() * e);
    for &t in &thresholds {
        lanes.extend_from_slice(x);
        bounds.extend(std::iter::repeat(t).take(e));
    }
    mpc.comp_lt(&lanes, &bounds)
}

/// Fused GeLU: per element 5 comparisons, 12 selected coefficients, one
/// converted clamp bit, and 3 fixed-point products. Matches
/// [`plain::gelu_fixed`] on the reconstruction exactly.
pub fn secure_gelu(mpc: &mut Mpc, x: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    let e = x.len();
    if e == 0 {
        return Ok(Vec::new());
    }
    let cmp = threshold_bits(mpc, x)?;

    // Row j ∈ 1..=4 is active on (b_{j−1}, b_j]; the monotone threshold
    // chain turns the interval test into an XOR of adjacent comparisons.
    let row_sel: Vec<Bits> =
        (1..=4).map(|j| cmp.slice(j * e, e).xor(&cmp.slice((j - 1) * e, e))).collect();

    // One MUX batch over all dense coefficient entries, [row][column][element].
    let mut sel_bits = Vec::with_capacity(12);
    let mut consts = Vec::with_capacity(12 * e);
    for (j, row) in row_sel.iter().enumerate() {
        for col in 0..3 {
            sel_bits.push(row);
            let c = cfg.encode(plain::GELU.rows[j + 1][col]);
            consts.extend(std::iter::repeat(c).take(e));
        }
    }
    let picked = mpc.mux_const(&Bits::concat(&sel_bits), &consts)?;
    let mut sel = vec![vec![0u64; e]; 3];
    for j in 0..4 {
        for col in 0..3 {
            let chunk = &picked[(j * 3 + col) * e..(j * 3 + col + 1) * e];
            for (s, &v) in sel[col].iter_mut().zip(chunk) {
                *s = cfg.add(*s, v);
            }
        }
    }

    // Identity clamp above the last breakpoint: fold a converted ¬cmp_4 bit
    // into the linear column as encode(1).
    let ident = mpc.not_bits(&cmp.slice(4 * e, e));
    let ident_a = mpc.b2a(&ident)?;
    let ident_lin = mpc.scale_vec(&ident_a, cfg.one());
    let sel1 = mpc.add_vec(&sel[1], &ident_lin);

    let x2 = mpc.mul_fixed(x, x)?;
    let quad = mpc.mul_fixed(&x2, &sel[2])?;
    let lin = mpc.mul_fixed(x, &sel1)?;
    Ok(mpc.add_vec(&mpc.add_vec(&quad, &lin), &sel[0]))
}

/// Naive per-segment baseline: the same membership bits, but every segment's
/// polynomial is evaluated on shares — the shared power x², then two Π_Mul
/// per segment against its lifted coefficients, clamp rows included — and
/// the results combined with a shared-value MUX per segment.
pub fn naive_piecewise_gelu(mpc: &mut Mpc, x: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    let e = x.len();
    if e == 0 {
        return Ok(Vec::new());
    }
    let cmp = threshold_bits(mpc, x)?;
    let segs = plain::GELU.rows.len();

    // ind_0 = cmp_0, ind_j = cmp_j ⊕ cmp_{j−1}, ind_last = ¬cmp_4.
    let mut inds = Vec::with_capacity(segs);
    inds.push(cmp.slice(0, e));
    for j in 1..segs - 1 {
        inds.push(cmp.slice(j * e, e).xor(&cmp.slice((j - 1) * e, e)));
    }
    inds.push(mpc.not_bits(&cmp.slice((segs - 2) * e, e)));

    // Per segment: c2·x² + c1·x + c0 with shared coefficient products.
    let x2 = mpc.mul_fixed(x, x)?;
    let mut values = Vec::with_capacity(segs * e);
    for row in plain::GELU.rows {
        let quad = mpc.mul_fixed(&x2, &vec![mpc.const_share(cfg.encode(row[2])); e])?;
        let lin = mpc.mul_fixed(x, &vec![mpc.const_share(cfg.encode(row[1])); e])?;
        let c0 = cfg.encode(row[0]);
        let acc: Vec<u64> = quad
            .iter()
            .zip(&lin)
            .map(|(&q, &l)| mpc.add_const(cfg.add(q, l), c0))
            .collect();
        values.extend(acc);
    }

    let ind_refs: Vec<&Bits> = inds.iter().collect();
    let picked = mpc.mux_share(&Bits::concat(&ind_refs), &values)?;
    let mut out = vec![0u64; e];
    for j in 0..segs {
        for (o, &v) in out.iter_mut().zip(&picked[j * e..(j + 1) * e]) {
            *o = cfg.add(*o, v);
        }
    }
    Ok(out)
}
