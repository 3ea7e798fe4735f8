//! Faithful (exact) arithmetic-shift truncation of shared fixed-point values.
//!
//! Given <x> and a public shift s, open the masked value y = x + rho using a
//! truncation record (additive shares of rho and rho >> s, XOR shares of
//! rho's bits). Writing x = y - rho mod 2^ell, the logical shift is
//!
//!   x >>_L s = (y >> s) - (rho >> s) - borrow + 2^(ell-s) * wrap
//!
//! with borrow = [y mod 2^s < rho mod 2^s] and wrap = [y < rho]; the sign bit
//! is msb(x) = y_(ell-1) xor rho_(ell-1) xor [y mod 2^(ell-1) < rho mod
//! 2^(ell-1)], and the arithmetic shift subtracts msb * 2^(ell-s). The three
//! comparison bits come from one batched first-difference circuit against the
//! public y parts, are converted arithmetic in one batch, and the rest is
//! local. The result equals the plaintext oracle `truncate_plain` on every
//! ring element, not just on a bounded band.

use super::{Bits, Mpc};
use crate::error::Result;
use crate::transport::tag;

impl Mpc {
    /// Arithmetic-shift truncation by `shift` (1 <= shift < ell), exact.
    pub fn trunc(&mut self, x: &[u64], shift: u32) -> Result<Vec<u64>> {
        let cfg = self.cfg;
        let ell = cfg.ell;
        assert!(shift >= 1 && shift < ell, "shift {shift} out of range for ell {ell}");
        let n = x.len();
        let mask = cfg.mask();
        let low_mask = (1u64 << shift) - 1;
        let body_mask = (1u64 << (ell - 1)) - 1; // low ell-1 bits

        let mut rho_a = Vec::with_capacity(n);
        let mut rho_hi_a = Vec::with_capacity(n);
        let mut rho_bits = Vec::with_capacity(n);
        for _ in 0..n {
            let rec = self.pool().next_trunc(shift)?;
            rho_a.push(rec.rho_a);
            rho_hi_a.push(rec.rho_hi_a);
            rho_bits.push(rec.rho_bits);
        }
        let masked: Vec<u64> =
            x.iter().zip(&rho_a).map(|(&xi, &ra)| cfg.add(xi, ra)).collect();
        let y = self.open_elems(tag::TRUNC_OPEN, &masked)?;

        // Three comparison lanes per element against public y pieces:
        //   A: [rho_lo <= y_lo]   B: [rho <= y]   C: [rho_body <= y_body]
        let mut lanes = Vec::with_capacity(3 * n);
        let mut ts = Vec::with_capacity(3 * n);
        for i in 0..n {
            lanes.push(rho_bits[i] & low_mask);
            ts.push((y[i] & low_mask) as u128 + 1);
        }
        for i in 0..n {
            lanes.push(rho_bits[i]);
            ts.push(y[i] as u128 + 1);
        }
        for i in 0..n {
            lanes.push(rho_bits[i] & body_mask);
            ts.push((y[i] & body_mask) as u128 + 1);
        }
        let le = self.ltbits(&lanes, &ts)?;

        // borrow = not A, wrap = not B, body borrow = not C; msb folds in the
        // public top bit of y and the shared top bit of rho.
        let client = self.is_client();
        let mut conv = Bits::zeros(3 * n);
        for i in 0..n {
            let flip = client as u64;
            conv.set(i, le.get(i) ^ flip); // borrow
            conv.set(n + i, le.get(n + i) ^ flip); // wrap
            let mut msb = le.get(2 * n + i) ^ flip; // body borrow
            msb ^= (rho_bits[i] >> (ell - 1)) & 1;
            if client {
                msb ^= (y[i] >> (ell - 1)) & 1;
            }
            conv.set(2 * n + i, msb);
        }
        let arith = self.b2a(&conv)?;

        let big = 1u64 << (ell - shift);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let borrow = arith[i];
            let wrap = arith[n + i];
            let msb = arith[2 * n + i];
            let mut v = self.const_share(y[i] >> shift);
            v = cfg.sub(v, rho_hi_a[i]);
            v = cfg.sub(v, borrow);
            v = cfg.add(v, cfg.mul(big & mask, wrap));
            v = cfg.sub(v, cfg.mul(big & mask, msb));
            out.push(v);
        }
        self.counters.trunc += n as u64;
        if shift % cfg.frac == 0 {
            self.excess -= (shift / cfg.frac) as i64 * n as i64;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::run_pair;
    use crate::fixed::FixedConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn run_trunc(cfg: FixedConfig, xs: &[u64], shift: u32, seed: u64) -> Vec<u64> {
        let mut rng = StdRng::seed_from_u64(seed ^ 0xaaaa);
        let mut xc = Vec::new();
        let mut xs_srv = Vec::new();
        for &x in xs {
            let a = rng.random::<u64>() & cfg.mask();
            xc.push(a);
            xs_srv.push(cfg.sub(x, a));
        }
        let (rc, rs, _) = run_pair(
            cfg,
            seed,
            move |mpc| mpc.trunc(&xc, shift),
            move |mpc| mpc.trunc(&xs_srv, shift),
        )
        .unwrap();
        rc.iter().zip(&rs).map(|(&a, &b)| cfg.add(a, b)).collect()
    }

    #[test]
    fn trunc_exhaustive_8bit_all_shifts() {
        let cfg = FixedConfig::new(8, 2);
        let xs: Vec<u64> = (0..256).collect();
        for shift in 1..8 {
            let got = run_trunc(cfg, &xs, shift, 1000 + shift as u64);
            for (i, &x) in xs.iter().enumerate() {
                assert_eq!(
                    got[i],
                    cfg.truncate_plain(x, shift),
                    "x={x} shift={shift} (signed {})",
                    cfg.to_signed(x)
                );
            }
        }
    }

    #[test]
    fn trunc_random_full_width() {
        let cfg = FixedConfig::DEFAULT;
        let mut rng = StdRng::seed_from_u64(7);
        let xs: Vec<u64> = (0..400).map(|_| rng.random()).collect();
        for shift in [1u32, 17, 18, 36, 63] {
            let got = run_trunc(cfg, &xs, shift, 2000 + shift as u64);
            for (i, &x) in xs.iter().enumerate() {
                assert_eq!(got[i], cfg.truncate_plain(x, shift), "x={x:#x} shift={shift}");
            }
        }
    }

    #[test]
    fn trunc_fixed_point_semantics() {
        // decode(trunc(encode(a) * encode(b))) ~= a * b
        let cfg = FixedConfig::DEFAULT;
        let pairs = [(1.5, 2.5), (-3.25, 0.5), (-1.0, -1.0), (0.004, 800.0)];
        let xs: Vec<u64> =
            pairs.iter().map(|&(a, b)| cfg.mul(cfg.encode(a), cfg.encode(b))).collect();
        let got = run_trunc(cfg, &xs, cfg.frac, 55);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            // Exact: protocol trunc == plaintext trunc of the raw product.
            assert_eq!(got[i], cfg.truncate_plain(xs[i], cfg.frac), "{a}*{b}");
            // Float sanity: dominated by input encoding error scaled by |b|.
            let dec = cfg.decode(got[i]);
            assert!((dec - a * b).abs() < 2e-3, "{a}*{b} -> {dec}");
        }
    }
}
