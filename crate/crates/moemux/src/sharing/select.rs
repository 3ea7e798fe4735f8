//! Oblivious argmax: tournament top-1 with a fused one-hot output.
//!
//! Candidates are compared pairwise in a balanced tree; each node costs one
//! shared comparison and one mux of the value difference. The one-hot mask is
//! maintained alongside: after each level, every leaf's "still winning" bit
//! is ANDed with its side's outcome, so the mask work is a packed AND batch
//! per level. Ties resolve to the lower index (strict less-than means the
//! left candidate survives equality). The tree shape depends only on the
//! candidate count, so correlation consumption is data-independent.
//!
//! Comparisons act on value differences, so candidate magnitudes must stay
//! below 2^(ell-2) for the signed difference to be wrap-free — gate scores
//! after a bounded projection easily satisfy this.

use super::{Bits, Mpc};
use crate::error::Result;

impl Mpc {
    /// Shared argmax: returns (share of the max value, one-hot selection
    /// bits). Lowest index wins ties.
    pub fn top1(&mut self, g: &[u64]) -> Result<(u64, Bits)> {
        let n = g.len();
        assert!(n >= 1, "top1 needs at least one candidate");
        let client = self.is_client();
        let trivially_shared_one = |len: usize| {
            if client {
                Bits::ones(len)
            } else {
                Bits::zeros(len)
            }
        };
        if n == 1 {
            self.counters.top1 += 1;
            return Ok((g[0], trivially_shared_one(1)));
        }

        let mut alive = trivially_shared_one(n);
        // Each surviving candidate covers a contiguous leaf span.
        let mut vals: Vec<u64> = g.to_vec();
        let mut spans: Vec<(usize, usize)> = (0..n).map(|i| (i, i + 1)).collect();
        let cfg = self.cfg;

        while vals.len() > 1 {
            let pairs = vals.len() / 2;
            let mut diff = Vec::with_capacity(pairs); // left - right
            let mut adj = Vec::with_capacity(pairs); // right - left
            for p in 0..pairs {
                diff.push(cfg.sub(vals[2 * p], vals[2 * p + 1]));
                adj.push(cfg.sub(vals[2 * p + 1], vals[2 * p]));
            }
            // c = [left < right]: 1 means the right candidate advances.
            let c = self.comp_lt(&diff, &vec![0u64; pairs])?;
            let delta = self.mux_share(&c, &adj)?;

            // Leaf mask for this level: left spans get !c, right spans get c,
            // a bye keeps a shared 1.
            let mut level = trivially_shared_one(n);
            for p in 0..pairs {
                let c_bit = c.get(p);
                let not_c = c_bit ^ client as u64;
                let (l0, l1) = spans[2 * p];
                for leaf in l0..l1 {
                    level.set(leaf, not_c);
                }
                let (r0, r1) = spans[2 * p + 1];
                for leaf in r0..r1 {
                    level.set(leaf, c_bit);
                }
            }
            alive = self.and_bits(&alive, &level)?;

            let mut next_vals = Vec::with_capacity(pairs + 1);
            let mut next_spans = Vec::with_capacity(pairs + 1);
            for p in 0..pairs {
                next_vals.push(cfg.add(vals[2 * p], delta[p]));
                next_spans.push((spans[2 * p].0, spans[2 * p + 1].1));
            }
            if vals.len() % 2 == 1 {
                next_vals.push(*vals.last().unwrap());
                next_spans.push(*spans.last().unwrap());
            }
            vals = next_vals;
            spans = next_spans;
        }
        self.counters.top1 += 1;
        Ok((vals[0], alive))
    }

    /// Tournament max without the one-hot bookkeeping (for normalizers).
    pub fn tournament_max(&mut self, g: &[u64]) -> Result<u64> {
        let mut vals = g.to_vec();
        assert!(!vals.is_empty());
        let cfg = self.cfg;
        while vals.len() > 1 {
            let pairs = vals.len() / 2;
            let mut diff = Vec::with_capacity(pairs);
            let mut adj = Vec::with_capacity(pairs);
            for p in 0..pairs {
                diff.push(cfg.sub(vals[2 * p], vals[2 * p + 1]));
                adj.push(cfg.sub(vals[2 * p + 1], vals[2 * p]));
            }
            let c = self.comp_lt(&diff, &vec![0u64; pairs])?;
            let delta = self.mux_share(&c, &adj)?;
            let mut next = Vec::with_capacity(pairs + 1);
            for p in 0..pairs {
                next.push(cfg.add(vals[2 * p], delta[p]));
            }
            if vals.len() % 2 == 1 {
                next.push(*vals.last().unwrap());
            }
            vals = next;
        }
        Ok(vals[0])
    }
}

#[cfg(test)]
mod tests {
    use super::super::run_pair;
    use crate::fixed::FixedConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn run_top1(cfg: FixedConfig, g: &[f64], seed: u64) -> (f64, Vec<bool>) {
        let enc: Vec<u64> = g.iter().map(|&v| cfg.encode(v)).collect();
        let mut rng = StdRng::seed_from_u64(seed ^ 0x70b1);
        let mut gc = Vec::new();
        let mut gs = Vec::new();
        for &v in &enc {
            let a = rng.random::<u64>() & cfg.mask();
            gc.push(a);
            gs.push(cfg.sub(v, a));
        }
        let ((vc, hc), (vs, hs), _) = run_pair(
            cfg,
            seed,
            move |mpc| mpc.top1(&gc),
            move |mpc| mpc.top1(&gs),
        )
        .unwrap();
        let v = cfg.decode(cfg.add(vc, vs));
        (v, hc.xor(&hs).to_bools())
    }

    fn plain_argmax(g: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..g.len() {
            if g[i] > g[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn top1_matches_plain_argmax() {
        let cfg = FixedConfig::DEFAULT;
        let mut rng = StdRng::seed_from_u64(17);
        for n in [1usize, 2, 3, 4, 5, 7, 8, 9, 16, 33] {
            for rep in 0..4 {
                let g: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
                let (v, onehot) = run_top1(cfg, &g, (n * 100 + rep) as u64);
                let want_idx = plain_argmax(&g);
                assert!((v - g[want_idx]).abs() < 1e-4, "n={n} max {v} want {}", g[want_idx]);
                let hot: Vec<usize> =
                    (0..n).filter(|&i| onehot[i]).collect();
                assert_eq!(hot, vec![want_idx], "n={n} rep={rep} onehot {onehot:?}");
            }
        }
    }

    #[test]
    fn top1_tie_picks_lowest_index() {
        let cfg = FixedConfig::DEFAULT;
        let (v, onehot) = run_top1(cfg, &[5.0, 9.0, 9.0, 2.0], 1);
        assert_eq!(v, 9.0);
        assert_eq!(onehot, vec![false, true, false, false]);
        let (_, onehot) = run_top1(cfg, &[3.0, 3.0, 3.0], 2);
        assert_eq!(onehot, vec![true, false, false]);
    }

    #[test]
    fn tournament_max_matches() {
        let cfg = FixedConfig::DEFAULT;
        let mut rng = StdRng::seed_from_u64(5);
        let g: Vec<f64> = (0..13).map(|_| rng.random_range(-4.0..4.0)).collect();
        let enc: Vec<u64> = g.iter().map(|&v| cfg.encode(v)).collect();
        let mut gc = Vec::new();
        let mut gs = Vec::new();
        for &v in &enc {
            let a = rng.random::<u64>() & cfg.mask();
            gc.push(a);
            gs.push(cfg.sub(v, a));
        }
        let (vc, vs, _) = run_pair(
            cfg,
            6,
            move |mpc| mpc.tournament_max(&gc),
            move |mpc| mpc.tournament_max(&gs),
        )
        .unwrap();
        let want = g.iter().cloned().fold(f64::MIN, f64::max);
        assert!((cfg.decode(cfg.add(vc, vs)) - want).abs() < 1e-4);
    }
}
