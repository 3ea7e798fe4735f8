//! Exponential, reciprocal, and softmax over shares. The exponential is the
//! clipped base-2^6 limit form; the reciprocal normalizes into [0.5, 1) via
//! a power-of-two bin scan and runs Goldschmidt iterations.

use crate::error::Result;
use crate::plain;
use crate::sharing::{Bits, Mpc};

/// Bin scan shared by reciprocal and inverse square root: one comparison
/// batch against the powers 2^k for k in `scan`, one MUX batch selecting
/// encode(f(k)) per requested table. Lanes are independent; returns one
/// selected vector per table. Mirrors `plain::bin_select` per lane.
pub(crate) fn bin_tables(
    mpc: &mut Mpc,
    v: &[u64],
    scan: std::ops::RangeInclusive<i32>,
    tables: &[&dyn Fn(i32) -> f64],
) -> Result<Vec<Vec<u64>>> {
    let cfg = mpc.cfg;
    let l = v.len();
    let ks: Vec<i32> = scan.collect();
    let mut lanes = Vec::with_capacity(ks.len() * l);
    let mut bounds = Vec::with_capacity(ks.len() * l);
    for &k in &ks {
        lanes.extend_from_slice(v);
        bounds.extend(std::iter::repeat(cfg.encode((k as f64).exp2())).take(l));
    }
    let t = mpc.comp_lt(&lanes, &bounds)?;

    // Bin-k indicator: first threshold hit along the monotone chain.
    let mut hs: Vec<Bits> = vec![t.slice(0, l)];
    for ki in 1..ks.len() {
        hs.push(t.slice(ki * l, l).xor(&t.slice((ki - 1) * l, l)));
    }
    let hrefs: Vec<&Bits> = hs.iter().collect();
    let hcat = Bits::concat(&hrefs);

    let sel_bits = Bits::concat(&vec![&hcat; tables.len()]);
    let mut consts = Vec::with_capacity(tables.len() * ks.len() * l);
    for f in tables {
        for &k in &ks {
            consts.extend(std::iter::repeat(cfg.encode(f(k))).take(l));
        }
    }
    let z = mpc.mux_const(&sel_bits, &consts)?;

    let mut out = vec![vec![0u64; l]; tables.len()];
    for (ti, tab) in out.iter_mut().enumerate() {
        for ki in 0..ks.len() {
            let chunk = &z[(ti * ks.len() + ki) * l..(ti * ks.len() + ki + 1) * l];
            for (o, &sel) in tab.iter_mut().zip(chunk) {
                *o = cfg.add(*o, sel);
            }
        }
    }
    Ok(out)
}

/// exp(x) for shared x ≤ 0: (1 + x·2^−6) squared six times, clipped to zero
/// below encode(−13) with one comparison and one MUX. Matches
/// [`plain::exp_fixed`] exactly on the reconstruction.
pub fn secure_exp(mpc: &mut Mpc, x: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let t = mpc.trunc(x, plain::EXP_LOG2_BASE)?;
    let mut y: Vec<u64> = t.iter().map(|&v| mpc.add_const(v, cfg.one())).collect();
    for _ in 0..plain::EXP_LOG2_BASE {
        y = mpc.mul_fixed(&y, &y)?;
    }
    let clip = mpc.comp_lt(x, &vec![cfg.encode(plain::EXP_CLIP); x.len()])?;
    let gated = mpc.mux_share(&clip, &y)?;
    Ok(mpc.sub_vec(&y, &gated))
}

/// Reciprocal of shared v ∈ [1, 2^8) per lane: bin scan normalizes v̂ = v·2^−k
/// into [0.5, 1), Goldschmidt refines w ≈ 1/v̂, and the same selected power
/// denormalizes. Matches [`plain::recip_fixed`] exactly.
pub fn secure_recip(mpc: &mut Mpc, v: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    let g = bin_tables(mpc, v, plain::RECIP_SCAN, &[&|k| (-k as f64).exp2()])?
        .pop()
        .unwrap();
    let xh = mpc.mul_fixed(v, &g)?;
    let init = mpc.const_share(cfg.encode(plain::RECIP_INIT));
    let two = mpc.const_share(cfg.encode(2.0));
    let mut w: Vec<u64> = xh.iter().map(|&t| cfg.sub(init, cfg.add(t, t))).collect();
    for _ in 0..plain::RECIP_ITERS {
        let p = mpc.mul_fixed(&xh, &w)?;
        let e: Vec<u64> = p.iter().map(|&pi| cfg.sub(two, pi)).collect();
        w = mpc.mul_fixed(&w, &e)?;
    }
    mpc.mul_fixed(&w, &g)
}

/// Softmax of one shared row: tournament max, shift, exp, local sum, one
/// reciprocal, broadcast product. Row length is capped so the exp sum stays
/// inside the reciprocal's [1, 2^8) domain.
pub fn secure_softmax(mpc: &mut Mpc, row: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    assert!(!row.is_empty() && row.len() < 256, "softmax row length {}", row.len());
    let max = mpc.tournament_max(row)?;
    let shifted: Vec<u64> = row.iter().map(|&v| cfg.sub(v, max)).collect();
    let exps = secure_exp(mpc, &shifted)?;
    let sum = exps.iter().fold(0u64, |a, &b| cfg.add(a, b));
    let inv = secure_recip(mpc, &[sum])?[0];
    mpc.mul_fixed(&exps, &vec![inv; row.len()])
}
