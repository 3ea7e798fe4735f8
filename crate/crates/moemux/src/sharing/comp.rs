//! Signed comparison of shared values against public thresholds.
//!
//! To evaluate [x < b] with b public, both parties shift into the unsigned
//! domain (x' = x + 2^(ell-1)), open the masked value m = x' + rho where rho
//! comes from a comparison mask (additively shared, bits XOR-shared), and
//! reduce to cyclic interval membership: x' < b' iff rho lies in (m - b', m]
//! mod 2^ell, which is [rho <= m] xor [rho <= m - b'] xor [b' > m].
//!
//! Each [rho < t] with t public uses a first-difference circuit over the bit
//! sharing of rho: equality suffix products are built by doubling (log depth)
//! and every bit position's term is computed regardless of t, so AND-gate
//! consumption depends only on the lane count — never on opened data. One
//! lane occupies one share word, which makes the in-lane shifts of the
//! doubling step local bit surgery.

use super::{Bits, Mpc};
use crate::error::Result;
use crate::transport::tag;

impl Mpc {
    /// [rho < t] per lane. `rho` is one XOR-share word per lane (ring-width
    /// bits); `t` is public, in 0..=2^ell (inclusive top means "always
    /// true"). Returns one shared bit per lane.
    pub(crate) fn ltbits(&mut self, rho: &[u64], t: &[u128]) -> Result<Bits> {
        let w = self.cfg.ell;
        let mask = self.cfg.mask();
        let top = 1u128 << w;
        let n = rho.len();
        assert_eq!(t.len(), n);
        let client = self.is_client();
        // Canonical share of public 1 in dead lanes: client holds the ones.
        let hi_fill = |word: u64| -> u64 {
            if client {
                word | !mask
            } else {
                word & mask
            }
        };

        // e_i = not(rho_i xor t_i): equality bits, public t folded into the
        // client share, NOT applied to the client share.
        let mut p: Vec<u64> = rho
            .iter()
            .zip(t)
            .map(|(&r, &ti)| {
                let t_eff = (ti & (top - 1)) as u64 & mask;
                if client {
                    hi_fill(!(r ^ t_eff) & mask)
                } else {
                    hi_fill(r & mask)
                }
            })
            .collect();

        // Suffix products P_i = prod_{j >= i} e_j by doubling. Dead lanes are
        // kept at canonical shares of 1 so shifted-in bits act as identity.
        let mut span = 1u32;
        while span < w {
            let shifted: Vec<u64> = p
                .iter()
                .map(|&word| {
                    let s = word >> span;
                    if client {
                        s | (!0u64 << (64 - span))
                    } else {
                        s
                    }
                })
                .collect();
            p = self.and_word_vec(&p, &shifted)?;
            for word in p.iter_mut() {
                *word = hi_fill(*word);
            }
            span <<= 1;
        }

        // E_i = P_{i+1} (strictly-above equality), top position gets 1.
        let above: Vec<u64> = p
            .iter()
            .map(|&word| {
                let s = word >> 1;
                if client {
                    s | (1u64 << 63)
                } else {
                    s
                }
            })
            .collect();
        let not_rho: Vec<u64> =
            rho.iter().map(|&r| if client { !r & mask } else { r & mask }).collect();
        let z = self.and_word_vec(&not_rho, &above)?;

        // Result = xor of terms where t has a 1 bit; a local parity fold.
        // t = 2^ell lanes are publicly "always true".
        let mut out = Bits::zeros(n);
        for i in 0..n {
            let t_eff = (t[i] & (top - 1)) as u64 & mask;
            let mut bit = (z[i] & t_eff).count_ones() as u64 & 1;
            if client && t[i] == top {
                bit ^= 1;
            }
            out.set(i, bit);
        }
        Ok(out)
    }

    /// Signed [x < b] per lane with public thresholds b (ring-encoded).
    /// Returns XOR-shared bits. Exact over the whole ring.
    pub fn comp_lt(&mut self, x: &[u64], b: &[u64]) -> Result<Bits> {
        let n = x.len();
        assert_eq!(b.len(), n);
        let cfg = self.cfg;
        let half = cfg.half();
        let mut rho_bits = Vec::with_capacity(n);
        let mut masked = Vec::with_capacity(n);
        for &xi in x {
            let rec = self.pool().next_comp()?;
            rho_bits.push(rec.rho_bits);
            masked.push(cfg.add(self.add_const(xi, half), rec.rho_a));
        }
        let m = self.open_elems(tag::COMP_OPEN, &masked)?;

        let mut lanes = Vec::with_capacity(2 * n);
        let mut ts = Vec::with_capacity(2 * n);
        let mut b_prime = Vec::with_capacity(n);
        for i in 0..n {
            b_prime.push(cfg.add(b[i], half));
        }
        for i in 0..n {
            lanes.push(rho_bits[i]);
            ts.push(m[i] as u128 + 1); // [rho <= m]
        }
        for i in 0..n {
            lanes.push(rho_bits[i]);
            ts.push(cfg.sub(m[i], b_prime[i]) as u128 + 1); // [rho <= m - b']
        }
        let lt = self.ltbits(&lanes, &ts)?;

        let client = self.is_client();
        let mut out = Bits::zeros(n);
        for i in 0..n {
            if b_prime[i] == 0 {
                // [x < most negative] is publicly false; consumption above
                // stays uniform, the result is just pinned.
                out.set(i, 0);
                continue;
            }
            let mut bit = lt.get(i) ^ lt.get(n + i);
            if client && b_prime[i] > m[i] {
                bit ^= 1; // interval wraps past zero
            }
            out.set(i, bit);
        }
        self.counters.comp += n as u64;
        Ok(out)
    }

    /// [x < b] against one shared threshold vector: [x - y < 0].
    pub fn comp_lt_shared(&mut self, x: &[u64], y: &[u64]) -> Result<Bits> {
        let diff = self.sub_vec(x, y);
        let zeros = vec![0u64; diff.len()];
        self.comp_lt(&diff, &zeros)
    }
}

#[cfg(test)]
mod tests {
    use super::super::run_pair;
    use crate::fixed::FixedConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn split(rng: &mut StdRng, cfg: FixedConfig, x: u64) -> (u64, u64) {
        let a = rng.random::<u64>() & cfg.mask();
        (a, cfg.sub(x, a))
    }

    fn run_comp(cfg: FixedConfig, xs: &[u64], bs: &[u64], seed: u64) -> Vec<bool> {
        let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
        let mut xc = Vec::new();
        let mut xs_srv = Vec::new();
        for &x in xs {
            let (a, b) = split(&mut rng, cfg, x);
            xc.push(a);
            xs_srv.push(b);
        }
        let bc = bs.to_vec();
        let bs2 = bs.to_vec();
        let (rc, rs, _) = run_pair(
            cfg,
            seed,
            move |mpc| mpc.comp_lt(&xc, &bc),
            move |mpc| mpc.comp_lt(&xs_srv, &bs2),
        )
        .unwrap();
        rc.xor(&rs).to_bools()
    }

    #[test]
    fn comp_exhaustive_8bit() {
        let cfg = FixedConfig::new(8, 2);
        // Every x against a spread of thresholds including both extremes.
        let thresholds: [i64; 8] = [-128, -100, -17, -1, 0, 1, 63, 127];
        let mut xs = Vec::new();
        let mut bs = Vec::new();
        let mut want = Vec::new();
        for x in 0..256u64 {
            for &t in &thresholds {
                xs.push(x);
                bs.push(cfg.from_signed(t));
                want.push(cfg.to_signed(x) < t);
            }
        }
        let got = run_comp(cfg, &xs, &bs, 77);
        for i in 0..xs.len() {
            assert_eq!(
                got[i], want[i],
                "x={} b={} (signed {} < {})",
                xs[i],
                bs[i],
                cfg.to_signed(xs[i]),
                cfg.to_signed(bs[i])
            );
        }
    }

    #[test]
    fn comp_random_full_width() {
        let cfg = FixedConfig::DEFAULT;
        let mut rng = StdRng::seed_from_u64(42);
        let n = 500;
        let xs: Vec<u64> = (0..n).map(|_| rng.random()).collect();
        let bs: Vec<u64> = (0..n).map(|_| rng.random()).collect();
        let got = run_comp(cfg, &xs, &bs, 99);
        for i in 0..n {
            assert_eq!(
                got[i],
                cfg.to_signed(xs[i]) < cfg.to_signed(bs[i]),
                "lane {i}: {} < {}",
                cfg.to_signed(xs[i]),
                cfg.to_signed(bs[i])
            );
        }
    }

    #[test]
    fn comp_boundary_values() {
        let cfg = FixedConfig::DEFAULT;
        let min = cfg.half(); // most negative
        let max = cfg.half() - 1; // most positive
        let xs = vec![min, max, 0, min, max, 5, u64::MAX];
        let bs = vec![0, 0, min, min, max, 5, 0];
        let got = run_comp(cfg, &xs, &bs, 3);
        assert_eq!(
            got,
            vec![true, false, false, false, false, false, true],
            "min<0, max<0, 0<min, min<min, max<max, 5<5, -1<0"
        );
    }

    #[test]
    fn comp_shared_threshold() {
        let cfg = FixedConfig::DEFAULT;
        let mut rng = StdRng::seed_from_u64(8);
        let n = 100;
        // Keep magnitudes below 2^62 so the subtraction cannot wrap.
        let xs: Vec<u64> = (0..n).map(|_| cfg.from_signed(rng.random_range(-1_000_000..1_000_000))).collect();
        let ys: Vec<u64> = (0..n).map(|_| cfg.from_signed(rng.random_range(-1_000_000..1_000_000))).collect();
        let mut xc = Vec::new();
        let mut xs_srv = Vec::new();
        let mut yc = Vec::new();
        let mut ys_srv = Vec::new();
        for i in 0..n {
            let (a, b) = split(&mut rng, cfg, xs[i]);
            xc.push(a);
            xs_srv.push(b);
            let (a, b) = split(&mut rng, cfg, ys[i]);
            yc.push(a);
            ys_srv.push(b);
        }
        let (rc, rs, _) = run_pair(
            cfg,
            31,
            move |mpc| mpc.comp_lt_shared(&xc, &yc),
            move |mpc| mpc.comp_lt_shared(&xs_srv, &ys_srv),
        )
        .unwrap();
        let got = rc.xor(&rs);
        for i in 0..n {
            assert_eq!(got.get(i) == 1, cfg.to_signed(xs[i]) < cfg.to_signed(ys[i]), "lane {i}");
        }
    }

    #[test]
    fn comp_consumption_uniform_in_lane_count() {
        // Same lane count, very different data: identical budgets (asserted
        // inside run_pair) and identical byte counts.
        let cfg = FixedConfig::DEFAULT;
        let run = |xs: Vec<u64>, seed| {
            let bs = vec![cfg.encode(0.5); xs.len()];
            let xs2 = xs.clone();
            let bs2 = bs.clone();
            run_pair(
                cfg,
                seed,
                move |mpc| mpc.comp_lt(&xs, &bs),
                move |mpc| mpc.comp_lt(&xs2, &bs2),
            )
            .unwrap()
            .2
        };
        let s1 = run(vec![0; 33], 1);
        let s2 = run((0..33).map(|i| i * 0x1234_5678_9ab).collect(), 2);
        assert_eq!(s1, s2);
    }
}
