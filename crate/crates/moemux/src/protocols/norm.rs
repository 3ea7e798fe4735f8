//! Layer normalization over shares: mean-of-squares variance with an ε
//! floor, Newton inverse square root, and an affine step whose γ/β stay on
//! the server as trivial shares.

use super::softmax::bin_tables;
use crate::error::{Error, Result};
use crate::plain;
use crate::sharing::Mpc;

/// Server-held normalization parameters, already fixed-point encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LnParams {
    pub gamma: Vec<u64>,
    pub beta: Vec<u64>,
}

/// Inverse square root of shared v ∈ [2^−12, 2^9) per lane: one bin scan
/// selects both the normalizer 2^−k and the output factor 2^−k/2, then three
/// Newton steps y ← y·(1.5 − (v̂/2)·y²). Matches [`plain::rsqrt_fixed`]
/// exactly on the reconstruction.
pub fn secure_rsqrt(mpc: &mut Mpc, v: &[u64]) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    let mut tabs = bin_tables(
        mpc,
        v,
        plain::RSQRT_SCAN,
        &[&|k| (-k as f64).exp2(), &|k| (-k as f64 / 2.0).exp2()],
    )?;
    let f = tabs.pop().unwrap();
    let g = tabs.pop().unwrap();

    let xh = mpc.mul_fixed(v, &g)?;
    let hv = mpc.trunc(&xh, 1)?;
    let m_raw = mpc.scale_by_encoded(&xh, cfg.encode(plain::RSQRT_INIT_M));
    let m = mpc.trunc(&m_raw, cfg.frac)?;
    let init = mpc.const_share(cfg.encode(plain::RSQRT_INIT_C));
    let mut y: Vec<u64> = m.iter().map(|&t| cfg.sub(init, t)).collect();

    let three_half = mpc.const_share(cfg.encode(1.5));
    for _ in 0..plain::RSQRT_ITERS {
        let yy = mpc.mul_fixed(&y, &y)?;
        let p = mpc.mul_fixed(&hv, &yy)?;
        let e: Vec<u64> = p.iter().map(|&pi| cfg.sub(three_half, pi)).collect();
        y = mpc.mul_fixed(&y, &e)?;
    }
    mpc.mul_fixed(&y, &f)
}

/// LayerNorm of one shared row. γ and β are the server's plaintext; the
/// γ-scale runs as a Beaver product against the server's trivial share so
/// the parameters never reach the client. Matches [`plain::layernorm_fixed`]
/// exactly on the reconstruction.
pub fn secure_layernorm(mpc: &mut Mpc, x: &[u64], params: Option<&LnParams>) -> Result<Vec<u64>> {
    let cfg = mpc.cfg;
    let d = x.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("layernorm row length {d} < 2")));
    }
    if mpc.is_client() != params.is_none() {
        return Err(Error::InvalidArgument(
            "layernorm parameters belong on the server".into(),
        ));
    }
    if let Some(p) = params {
        if p.gamma.len() != d || p.beta.len() != d {
            return Err(Error::shape(format!(
                "layernorm params length {}/{} != row length {d}",
                p.gamma.len(),
                p.beta.len()
            )));
        }
    }

    let inv_d = cfg.encode(1.0 / d as f64);
    let sum = x.iter().fold(0u64, |a, &b| cfg.add(a, b));
    let mean_raw = mpc.scale_by_encoded(&[sum], inv_d);
    let mean = mpc.trunc(&mean_raw, cfg.frac)?[0];
    let centered: Vec<u64> = x.iter().map(|&v| cfg.sub(v, mean)).collect();

    let sq = mpc.mul_fixed(&centered, &centered)?;
    let sq_sum = sq.iter().fold(0u64, |a, &b| cfg.add(a, b));
    let var_raw = mpc.scale_by_encoded(&[sq_sum], inv_d);
    let var = mpc.trunc(&var_raw, cfg.frac)?[0];
    let var_eps = mpc.add_const(var, cfg.encode((plain::VAR_EPS_LOG2 as f64).exp2()));

    let inv_sigma = secure_rsqrt(mpc, &[var_eps])?[0];
    let normed = mpc.mul_fixed(&centered, &vec![inv_sigma; d])?;

    let g_share = match params {
        Some(p) => p.gamma.clone(),
        None => vec![0u64; d],
    };
    let raw = mpc.mul_scaled(&normed, &g_share)?;
    let mut out = mpc.trunc(&raw, cfg.frac)?;
    if let Some(p) = params {
        for (o, &b) in out.iter_mut().zip(&p.beta) {
            *o = cfg.add(*o, b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedConfig;
    use crate::sharing::run_pair;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const CFG: FixedConfig = FixedConfig::DEFAULT;

    fn split(rng: &mut ChaCha20Rng, vals: &[u64]) -> (Vec<u64>, Vec<u64>) {
        let s: Vec<u64> = vals.iter().map(|_| rng.next_u64() & CFG.mask()).collect();
        let c: Vec<u64> = vals.iter().zip(&s).map(|(&v, &r)| CFG.sub(v, r)).collect();
        (c, s)
    }

    fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    #[test]
    fn rsqrt_matches_plain_mirror_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(80);
        let mut vals = vec![
            CFG.encode(2f64.powi(-12)),
            CFG.encode(1.0),
            CFG.encode(511.0),
            CFG.encode(0.25),
        ];
        for _ in 0..40 {
            vals.push(CFG.encode(2f64.powf(uniform(&mut rng, -12.0, 9.0))));
        }
        let (xc, xs) = split(&mut rng, &vals);
        let (yc, ys, _) =
            run_pair(CFG, 14, |mpc| secure_rsqrt(mpc, &xc), |mpc| secure_rsqrt(mpc, &xs)).unwrap();
        for (i, &v) in vals.iter().enumerate() {
            assert_eq!(
                CFG.add(yc[i], ys[i]),
                plain::rsqrt_fixed(CFG, v),
                "v = {}",
                CFG.decode(v)
            );
        }
    }

    #[test]
    fn layernorm_matches_plain_mirror_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(81);
        for case in 0..4 {
            let d = [2, 8, 64, 64][case];
            let vals: Vec<u64> = (0..d).map(|_| CFG.encode(uniform(&mut rng, -2.0, 2.0))).collect();
            let (gamma, beta): (Vec<u64>, Vec<u64>) = if case == 0 {
                (vec![CFG.one(); d], vec![0; d])
            } else {
                (
                    (0..d).map(|_| CFG.encode(uniform(&mut rng, -0.1, 0.1))).collect(),
                    (0..d).map(|_| CFG.encode(uniform(&mut rng, -0.1, 0.1))).collect(),
                )
            };
            let params = LnParams { gamma: gamma.clone(), beta: beta.clone() };
            let (xc, xs) = split(&mut rng, &vals);
            let (yc, ys, _) = run_pair(
                CFG,
                90 + case as u64,
                |mpc| secure_layernorm(mpc, &xc, None),
                |mpc| secure_layernorm(mpc, &xs, Some(&params)),
            )
            .unwrap();
            let want = plain::layernorm_fixed(CFG, &vals, &gamma, &beta);
            for i in 0..d {
                assert_eq!(CFG.add(yc[i], ys[i]), want[i], "case {case} lane {i}");
            }
        }
    }

    #[test]
    fn layernorm_normalized_row_is_fixed_point() {
        // x = [1, −1] is already zero-mean unit-variance up to the ε floor.
        let vals = vec![CFG.encode(1.0), CFG.encode(-1.0)];
        let params = LnParams { gamma: vec![CFG.one(); 2], beta: vec![0; 2] };
        let mut rng = ChaCha20Rng::seed_from_u64(82);
        let (xc, xs) = split(&mut rng, &vals);
        let (yc, ys, _) = run_pair(
            CFG,
            99,
            |mpc| secure_layernorm(mpc, &xc, None),
            |mpc| secure_layernorm(mpc, &xs, Some(&params)),
        )
        .unwrap();
        for i in 0..2 {
            let got = CFG.decode(CFG.add(yc[i], ys[i]));
            let want = CFG.decode(vals[i]);
            assert!((got - want).abs() < 2f64.powi(-6), "lane {i}: {got} vs {want}");
        }
    }
}
