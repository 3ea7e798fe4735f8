//! Secret-key RLWE additive encryption over Z_{2^64}[X]/(X^N + 1).
//!
//! Only the client ever encrypts or decrypts, so a secret-key scheme
//! suffices: a ← uniform, b = a·s + e + Δ·m with Δ = 2^64 / t, ternary s,
//! and centered-binomial e. Because Δ·t wraps to exactly 0 mod 2^64,
//! plaintext arithmetic mod t rides on ciphertext arithmetic mod 2^64
//! with no explicit reduction. Supports add and ciphertext×plaintext;
//! anything needing a multiplicative level lives in the semantic engine.

use rand::RngCore;

use crate::error::{Error, Result};

use super::poly::negacyclic_mul;
use super::HeParams;

/// Ternary secret key, coefficients in {−1, 0, 1} stored as wrapping u64.
pub struct SecretKey {
    pub(super) s: Vec<u64>,
}

/// Maximum ct+ct accumulations the noise audit budgets for.
pub const MAX_ADDS: u64 = 64;

pub fn keygen(params: &HeParams, rng: &mut dyn RngCore) -> Result<SecretKey> {
    noise_audit(params)?;
    let s = (0..params.ring_n)
        .map(|_| match rng.next_u32() % 3 {
            0 => 0u64,
            1 => 1,
            _ => u64::MAX, // −1
        })
        .collect();
    Ok(SecretKey { s })
}

/// Worst-case decryption noise after one ct×pt product and MAX_ADDS
/// additions. Rejects parameter sets where correct decryption is not
/// certain: noise here is bounded, so passing the audit means failure
/// probability 0 (comfortably below 2^−40).
pub fn noise_audit(params: &HeParams) -> Result<()> {
    let n = params.ring_n as u128;
    let eta = params.eta as u128;
    if params.pt_bits >= 64 {
        return Err(Error::NoiseBudget(format!(
            "plaintext modulus 2^{} leaves no room for noise under a 64-bit \
             ciphertext modulus",
            params.pt_bits
        )));
    }
    let t = 1u128 << params.pt_bits;
    let delta = 1u128 << (64 - params.pt_bits);
    // One ct×pt: fresh noise η per coefficient convolved with a signed
    // plaintext of magnitude ≤ t/2 over N terms; then MAX_ADDS fresh adds.
    let bound = eta * n * (t / 2) + MAX_ADDS as u128 * eta;
    if bound >= delta / 2 {
        return Err(Error::NoiseBudget(format!(
            "worst-case noise 2^{:.1} reaches rounding radius 2^{:.1} \
             (N={}, t=2^{}, eta={})",
            (bound as f64).log2(),
            (delta as f64 / 2.0).log2(),
            params.ring_n,
            params.pt_bits,
            params.eta,
        )));
    }
    Ok(())
}

/// Centered binomial sample in [−η, η] as wrapping u64.
fn cbd(eta: u32, rng: &mut dyn RngCore) -> u64 {
    debug_assert!(eta <= 32);
    let bits = rng.next_u64();
    let mask = (1u64 << eta) - 1;
    let pos = (bits & mask).count_ones() as u64;
    let neg = ((bits >> eta) & mask).count_ones() as u64;
    pos.wrapping_sub(neg)
}

/// Encrypts plaintext coefficients (mod t) into (a, b).
pub fn encrypt(
    params: &HeParams,
    sk: &SecretKey,
    pt: &[u64],
    rng: &mut dyn RngCore,
) -> (Vec<u64>, Vec<u64>) {
    let n = params.ring_n;
    debug_assert_eq!(pt.len(), n);
    let shift = 64 - params.pt_bits;
    let t_mask = (1u64 << params.pt_bits) - 1;
    let a: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    let a_s = negacyclic_mul(&a, &sk.s);
    let b = (0..n)
        .map(|i| {
            a_s[i].wrapping_add(cbd(params.eta, rng)).wrapping_add((pt[i] & t_mask) << shift)
        })
        .collect();
    (a, b)
}

/// Recovers plaintext coefficients mod t: round((b − a·s) / Δ).
pub fn decrypt(params: &HeParams, sk: &SecretKey, a: &[u64], b: &[u64]) -> Vec<u64> {
    let shift = 64 - params.pt_bits;
    let t_mask = (1u64 << params.pt_bits) - 1;
    let half_delta = 1u64 << (shift - 1);
    let a_s = negacyclic_mul(a, &sk.s);
    b.iter()
        .zip(&a_s)
        .map(|(&bi, &asi)| (bi.wrapping_sub(asi).wrapping_add(half_delta) >> shift) & t_mask)
        .collect()
}

/// Lifts plaintext coefficients mod t to the centered representative so the
/// noise term e·p stays small; Δ·t ≡ 0 keeps the message slot unchanged.
pub fn lift_signed(params: &HeParams, pt: &[u64]) -> Vec<u64> {
    let t = 1u64 << params.pt_bits;
    pt.iter()
        .map(|&c| {
            let c = c & (t - 1);
            if c >= t / 2 {
                c.wrapping_sub(t)
            } else {
                c
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params(pt_bits: u32) -> HeParams {
        HeParams { ring_n: 4096, pt_bits, eta: 4, response_scale: 1.0 }
    }

    #[test]
    fn roundtrip() {
        let p = params(20);
        let mut rng = StdRng::seed_from_u64(1);
        let sk = keygen(&p, &mut rng).unwrap();
        let pt: Vec<u64> = (0..p.ring_n).map(|_| rng.random::<u64>() & 0xfffff).collect();
        let (a, b) = encrypt(&p, &sk, &pt, &mut rng);
        assert_eq!(decrypt(&p, &sk, &a, &b), pt);
    }

    #[test]
    fn audit_rejects_oversized_plaintext_modulus() {
        assert!(noise_audit(&params(20)).is_ok());
        assert!(noise_audit(&params(24)).is_ok());
        assert!(matches!(noise_audit(&params(25)), Err(Error::NoiseBudget(_))));
        assert!(matches!(noise_audit(&params(64)), Err(Error::NoiseBudget(_))));
    }

    #[test]
    fn cbd_range_and_balance() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut sum = 0i64;
        for _ in 0..10_000 {
            let e = cbd(4, &mut rng) as i64;
            assert!((-4..=4).contains(&e), "{e}");
            sum += e;
        }
        assert!(sum.abs() < 500, "mean far from zero: {sum}");
    }
}
