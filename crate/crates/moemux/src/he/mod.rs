//! Additive homomorphic encryption with two interchangeable engines.
//!
//! The `semantic` engine carries the exact plaintext polynomial internally,
//! enforces the level/op discipline, and charges wire bytes through a fixed
//! size model — it is the reference engine for end-to-end runs, including
//! the single ct×ct level the sparse-MoE path needs. The `rlwe` engine is a
//! real secret-key RLWE additive scheme (encrypt, add, ct×pt) that exercises
//! the packing math on genuine lattice ciphertexts; it has no multiplicative
//! level, so ct×ct and gate-driven weight selection report
//! [`Error::EngineUnsupported`] there.
//!
//! Both engines serialize to the same wire shape: a 16-byte header
//! {engine tag, level, pad, N, payload length} followed by 2·N little-endian
//! 8-byte words, 65 552 bytes at N = 4096.

pub mod poly;
pub mod rlwe;

use rand::RngCore;

use crate::error::{Error, Result};

/// Header bytes preceding every serialized ciphertext.
pub const CT_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Plaintext-carrying reference engine; supports every operation.
    Semantic,
    /// Real RLWE additive scheme; no multiplicative level.
    Rlwe,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Semantic => "semantic",
            Engine::Rlwe => "rlwe",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Engine::Semantic => 0,
            Engine::Rlwe => 1,
        }
    }
}

/// Ring and size-model parameters shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeParams {
    /// Ring degree N (power of two).
    pub ring_n: usize,
    /// Plaintext modulus 2^pt_bits; matches the secret-sharing ring width.
    pub pt_bits: u32,
    /// Centered-binomial noise parameter (rlwe engine).
    pub eta: u32,
    /// What-if factor applied to response-ciphertext bytes in reports only;
    /// actual wire bytes are never scaled.
    pub response_scale: f64,
}

impl HeParams {
    pub const DEFAULT: HeParams =
        HeParams { ring_n: 4096, pt_bits: 64, eta: 4, response_scale: 1.0 };

    /// Serialized bytes per ciphertext under the size model.
    pub fn ct_bytes(&self) -> usize {
        CT_HEADER_BYTES + 2 * self.ring_n * 8
    }

    fn pt_mask(&self) -> u64 {
        if self.pt_bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.pt_bits) - 1
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.ring_n.is_power_of_two() || self.ring_n < 2 {
            return Err(Error::InvalidArgument(format!(
                "ring degree {} must be a power of two ≥ 2",
                self.ring_n
            )));
        }
        if self.pt_bits == 0 || self.pt_bits > 64 {
            return Err(Error::InvalidArgument(format!(
                "plaintext width {} out of range",
                self.pt_bits
            )));
        }
        Ok(())
    }
}

enum Body {
    /// Virtual plaintext coefficients. Private: protocol code on the
    /// non-key-holder side cannot inspect them, only the engine can.
    Semantic(Vec<u64>),
    Rlwe {
        a: Vec<u64>,
        b: Vec<u64>,
        /// Plaintext-multiplication depth consumed (audited profile: ≤ 1).
        pmul: u8,
        /// ct+ct accumulations consumed (audited profile: ≤ MAX_ADDS).
        adds: u16,
    },
}

pub struct Ciphertext {
    level: u8,
    ring_n: u32,
    body: Body,
}

impl Ciphertext {
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn engine(&self) -> Engine {
        match self.body {
            Body::Semantic(_) => Engine::Semantic,
            Body::Rlwe { .. } => Engine::Rlwe,
        }
    }

    /// Serialized length under the size model.
    pub fn byte_size(&self) -> usize {
        CT_HEADER_BYTES + 2 * self.ring_n as usize * 8
    }

    /// Wire format: {tag u8, level u8, pad u16, N u32 LE, payload_len u64 LE}
    /// then the payload words little-endian.
    pub fn serialize(&self) -> Vec<u8> {
        let n = self.ring_n as usize;
        let payload_len = (2 * n * 8) as u64;
        let mut out = Vec::with_capacity(self.byte_size());
        out.push(self.engine().tag());
        out.push(self.level);
        out.extend_from_slice(&[0u8; 2]);
        out.extend_from_slice(&self.ring_n.to_le_bytes());
        out.extend_from_slice(&payload_len.to_le_bytes());
        match &self.body {
            // First N words carry the virtual plaintext, the rest pad the
            // size model out to a real ciphertext's width.
            Body::Semantic(pt) => {
                for &c in pt {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                out.resize(CT_HEADER_BYTES + 2 * n * 8, 0);
            }
            Body::Rlwe { a, b, .. } => {
                for &c in a.iter().chain(b) {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Ciphertext> {
        if bytes.len() < CT_HEADER_BYTES {
            return Err(Error::malformed("ciphertext", "short header"));
        }
        let tag = bytes[0];
        let level = bytes[1];
        let ring_n = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let payload_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let n = ring_n as usize;
        if payload_len != (2 * n * 8) as u64
            || bytes.len() != CT_HEADER_BYTES + payload_len as usize
        {
            return Err(Error::malformed(
                "ciphertext",
                format!("payload length {payload_len} inconsistent with N={n}"),
            ));
        }
        let word = |i: usize| {
            u64::from_le_bytes(
                bytes[CT_HEADER_BYTES + 8 * i..CT_HEADER_BYTES + 8 * (i + 1)].try_into().unwrap(),
            )
        };
        let body = match tag {
            0 => Body::Semantic((0..n).map(word).collect()),
            1 => Body::Rlwe {
                a: (0..n).map(word).collect(),
                b: (n..2 * n).map(|i| word(i)).collect(),
                pmul: 0,
                adds: 0,
            },
            other => {
                return Err(Error::malformed("ciphertext", format!("unknown engine tag {other}")))
            }
        };
        Ok(Ciphertext { level, ring_n, body })
    }
}

/// One party's view of the HE session. The client holds the secret key;
/// the server can only combine and mask ciphertexts.
pub struct He {
    pub engine: Engine,
    pub params: HeParams,
    secret: Option<rlwe::SecretKey>,
    has_key: bool,
    /// When set, value-level work is skipped and ciphertext bodies are
    /// zero-filled; sizes, levels, and errors are unchanged. Used by
    /// counting passes.
    pub skip_compute: bool,
}

impl He {
    /// Client-side session: generates (and for rlwe, audits) key material.
    pub fn client(engine: Engine, params: HeParams, rng: &mut dyn RngCore) -> Result<He> {
        params.validate()?;
        let secret = match engine {
            Engine::Semantic => None,
            Engine::Rlwe => Some(rlwe::keygen(&params, rng)?),
        };
        Ok(He { engine, params, secret, has_key: true, skip_compute: false })
    }

    /// Server-side session: no key material, may not decrypt.
    pub fn server(engine: Engine, params: HeParams) -> Result<He> {
        params.validate()?;
        if engine == Engine::Rlwe {
            rlwe::noise_audit(&params)?;
        }
        Ok(He { engine, params, secret: None, has_key: false, skip_compute: false })
    }

    fn check_n(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.params.ring_n {
            return Err(Error::shape(format!(
                "{what} has {len} coefficients, ring degree is {}",
                self.params.ring_n
            )));
        }
        Ok(())
    }

    fn check_ct(&self, ct: &Ciphertext) -> Result<()> {
        if ct.engine() != self.engine {
            return Err(Error::ConfigMismatch(format!(
                "ciphertext from {} engine under {} session",
                ct.engine().name(),
                self.engine.name()
            )));
        }
        self.check_n("ciphertext", ct.ring_n as usize)
    }

    pub fn encrypt(&self, pt: &[u64], rng: &mut dyn RngCore) -> Result<Ciphertext> {
        self.check_n("plaintext", pt.len())?;
        if !self.has_key {
            return Err(Error::InvalidArgument("encrypt requires the secret key".into()));
        }
        let mask = self.params.pt_mask();
        let body = if self.skip_compute {
            match self.engine {
                Engine::Semantic => Body::Semantic(vec![0; pt.len()]),
                Engine::Rlwe => {
                    Body::Rlwe { a: vec![0; pt.len()], b: vec![0; pt.len()], pmul: 0, adds: 0 }
                }
            }
        } else {
            match self.engine {
                Engine::Semantic => Body::Semantic(pt.iter().map(|&c| c & mask).collect()),
                Engine::Rlwe => {
                    let sk = self.secret.as_ref().unwrap();
                    let (a, b) = rlwe::encrypt(&self.params, sk, pt, rng);
                    Body::Rlwe { a, b, pmul: 0, adds: 0 }
                }
            }
        };
        Ok(Ciphertext { level: 0, ring_n: self.params.ring_n as u32, body })
    }

    pub fn decrypt(&self, ct: &Ciphertext) -> Result<Vec<u64>> {
        self.check_ct(ct)?;
        if !self.has_key {
            return Err(Error::InvalidArgument("decrypt requires the secret key".into()));
        }
        if self.skip_compute {
            return Ok(vec![0; self.params.ring_n]);
        }
        let mask = self.params.pt_mask();
        match &ct.body {
            Body::Semantic(pt) => Ok(pt.iter().map(|&c| c & mask).collect()),
            Body::Rlwe { a, b, .. } => {
                let sk = self.secret.as_ref().unwrap();
                Ok(rlwe::decrypt(&self.params, sk, a, b))
            }
        }
    }

    pub fn add_ct_ct(&self, x: &Ciphertext, y: &Ciphertext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_ct(y)?;
        if x.level != y.level {
            return Err(Error::LevelExceeded(x.level.max(y.level)));
        }
        let body = match (&x.body, &y.body) {
            (Body::Semantic(p), Body::Semantic(q)) => {
                Body::Semantic(zip_wrap(p, q, u64::wrapping_add))
            }
            (
                Body::Rlwe { a, b, pmul, adds },
                Body::Rlwe { a: a2, b: b2, pmul: pm2, adds: ad2 },
            ) => {
                let adds = adds + ad2 + 1;
                if u64::from(adds) > rlwe::MAX_ADDS {
                    return Err(Error::NoiseBudget(format!(
                        "{adds} ct+ct accumulations exceed the audited {}",
                        rlwe::MAX_ADDS
                    )));
                }
                Body::Rlwe {
                    a: zip_wrap(a, a2, u64::wrapping_add),
                    b: zip_wrap(b, b2, u64::wrapping_add),
                    pmul: (*pmul).max(*pm2),
                    adds,
                }
            }
            _ => unreachable!("check_ct enforces matching engines"),
        };
        Ok(Ciphertext { level: x.level, ring_n: x.ring_n, body })
    }

    pub fn add_ct_pt(&self, x: &Ciphertext, pt: &[u64]) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_n("plaintext", pt.len())?;
        let body = match &x.body {
            Body::Semantic(p) => Body::Semantic(zip_wrap(p, pt, u64::wrapping_add)),
            Body::Rlwe { a, b, pmul, adds } => {
                // Message slots shift by Δ·pt exactly; no noise is added.
                let shift = 64 - self.params.pt_bits;
                let b = b
                    .iter()
                    .zip(pt)
                    .map(|(&bi, &pi)| bi.wrapping_add((pi & self.params.pt_mask()) << shift))
                    .collect();
                Body::Rlwe { a: a.clone(), b, pmul: *pmul, adds: *adds }
            }
        };
        Ok(Ciphertext { level: x.level, ring_n: x.ring_n, body })
    }

    pub fn mul_ct_pt(&self, x: &Ciphertext, pt: &[u64]) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_n("plaintext", pt.len())?;
        let body = match &x.body {
            Body::Semantic(p) => Body::Semantic(if self.skip_compute {
                vec![0; p.len()]
            } else {
                poly::negacyclic_mul(p, pt)
            }),
            Body::Rlwe { a, b, pmul, adds } => {
                if *pmul >= 1 {
                    return Err(Error::NoiseBudget(
                        "second plaintext multiplication exceeds the audited depth".into(),
                    ));
                }
                let lifted = rlwe::lift_signed(&self.params, pt);
                Body::Rlwe {
                    a: poly::negacyclic_mul(a, &lifted),
                    b: poly::negacyclic_mul(b, &lifted),
                    pmul: pmul + 1,
                    adds: *adds,
                }
            }
        };
        Ok(Ciphertext { level: x.level, ring_n: x.ring_n, body })
    }

    /// Depth-1 ciphertext product; semantic engine only.
    pub fn mul_ct_ct(&self, x: &Ciphertext, y: &Ciphertext) -> Result<Ciphertext> {
        self.check_ct(x)?;
        self.check_ct(y)?;
        if self.engine == Engine::Rlwe {
            return Err(Error::EngineUnsupported { engine: "rlwe", op: "mul_ct_ct" });
        }
        if x.level != 0 || y.level != 0 {
            return Err(Error::LevelExceeded(x.level.max(y.level)));
        }
        let (Body::Semantic(p), Body::Semantic(q)) = (&x.body, &y.body) else {
            unreachable!("semantic engine checked above")
        };
        let pt = if self.skip_compute {
            vec![0; p.len()]
        } else {
            poly::negacyclic_mul(p, q)
        };
        Ok(Ciphertext { level: 1, ring_n: x.ring_n, body: Body::Semantic(pt) })
    }

    /// Gate-driven weight selection: Σ_e gate[e] · weights[e], where the
    /// gate ciphertext packs one scalar per coefficient slot. Server-local
    /// and communication-free; semantic engine only.
    pub fn weighted_select(&self, gate: &Ciphertext, weights: &[Vec<u64>]) -> Result<Ciphertext> {
        self.check_ct(gate)?;
        if self.engine == Engine::Rlwe {
            return Err(Error::EngineUnsupported { engine: "rlwe", op: "weighted_select" });
        }
        if gate.level != 0 {
            return Err(Error::LevelExceeded(gate.level));
        }
        if weights.len() > self.params.ring_n {
            return Err(Error::shape(format!(
                "{} selection slots exceed ring degree {}",
                weights.len(),
                self.params.ring_n
            )));
        }
        let Body::Semantic(g) = &gate.body else { unreachable!("semantic engine checked above") };
        let mut acc = vec![0u64; self.params.ring_n];
        if !self.skip_compute {
            for (e, w) in weights.iter().enumerate() {
                self.check_n("selection weights", w.len())?;
                let ge = g[e];
                if ge == 0 {
                    continue;
                }
                for (dst, &src) in acc.iter_mut().zip(w) {
                    *dst = dst.wrapping_add(ge.wrapping_mul(src));
                }
            }
        } else {
            for w in weights {
                self.check_n("selection weights", w.len())?;
            }
        }
        Ok(Ciphertext { level: 0, ring_n: gate.ring_n, body: Body::Semantic(acc) })
    }
}

fn zip_wrap(a: &[u64], b: &[u64], f: fn(u64, u64) -> u64) -> Vec<u64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sessions(engine: Engine, pt_bits: u32) -> (He, He) {
        let params = HeParams { ring_n: 4096, pt_bits, eta: 4, response_scale: 1.0 };
        let mut rng = StdRng::seed_from_u64(41);
        let c = He::client(engine, params, &mut rng).unwrap();
        let s = He::server(engine, params).unwrap();
        (c, s)
    }

    fn rand_pt(rng: &mut StdRng, n: usize, bits: u32) -> Vec<u64> {
        let mask = if bits >= 64 { u64::MAX } else { (1 << bits) - 1 };
        (0..n).map(|_| rng.random::<u64>() & mask).collect()
    }

    #[test]
    fn serialized_size_is_pinned() {
        let (client, _) = sessions(Engine::Semantic, 64);
        let mut rng = StdRng::seed_from_u64(5);
        let ct = client.encrypt(&vec![0u64; 4096], &mut rng).unwrap();
        assert_eq!(ct.byte_size(), 65_552);
        assert_eq!(ct.serialize().len(), 65_552);
        assert_eq!(client.params.ct_bytes(), 65_552);
    }

    #[test]
    fn roundtrip_both_engines() {
        let mut rng = StdRng::seed_from_u64(6);
        for (engine, bits) in [(Engine::Semantic, 64), (Engine::Semantic, 20), (Engine::Rlwe, 20)]
        {
            let (client, _) = sessions(engine, bits);
            let pt = rand_pt(&mut rng, 4096, bits);
            let ct = client.encrypt(&pt, &mut rng).unwrap();
            let wire = ct.serialize();
            let back = Ciphertext::deserialize(&wire).unwrap();
            assert_eq!(client.decrypt(&back).unwrap(), pt, "{} {bits}", engine.name());
        }
    }

    #[test]
    fn fresh_rlwe_encryptions_differ() {
        let (client, _) = sessions(Engine::Rlwe, 20);
        let mut rng = StdRng::seed_from_u64(7);
        let pt = rand_pt(&mut rng, 4096, 20);
        let w1 = client.encrypt(&pt, &mut rng).unwrap().serialize();
        let w2 = client.encrypt(&pt, &mut rng).unwrap().serialize();
        assert_ne!(w1, w2);
    }

    #[test]
    fn server_cannot_decrypt() {
        let (client, server) = sessions(Engine::Semantic, 64);
        let mut rng = StdRng::seed_from_u64(8);
        let ct = client.encrypt(&vec![3u64; 4096], &mut rng).unwrap();
        assert!(matches!(server.decrypt(&ct), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn homomorphic_ops_match_plain_ring_both_engines() {
        let mut rng = StdRng::seed_from_u64(9);
        for engine in [Engine::Semantic, Engine::Rlwe] {
            let (client, server) = sessions(engine, 16);
            let mask = (1u64 << 16) - 1;
            for _ in 0..5 {
                let p = rand_pt(&mut rng, 4096, 16);
                let q = rand_pt(&mut rng, 4096, 16);
                let r = rand_pt(&mut rng, 4096, 16);
                let cp = client.encrypt(&p, &mut rng).unwrap();
                let cq = client.encrypt(&q, &mut rng).unwrap();
                // (p + q)·r + q, all mod (X^4096+1, 2^16).
                let sum = server.add_ct_ct(&cp, &cq).unwrap();
                let prod = server.mul_ct_pt(&sum, &r).unwrap();
                let fin = server.add_ct_pt(&prod, &q).unwrap();
                let got = client.decrypt(&fin).unwrap();
                let pq = zip_wrap(&p, &q, u64::wrapping_add);
                let mut want = poly::negacyclic_mul_schoolbook(&pq, &r);
                for (w, &qi) in want.iter_mut().zip(&q) {
                    *w = w.wrapping_add(qi) & mask;
                }
                assert_eq!(got, want, "{}", engine.name());
            }
        }
    }

    #[test]
    fn ct_ct_product_and_level_discipline() {
        let (client, server) = sessions(Engine::Semantic, 64);
        let mut rng = StdRng::seed_from_u64(10);
        let p = rand_pt(&mut rng, 4096, 64);
        let q = rand_pt(&mut rng, 4096, 64);
        let cp = client.encrypt(&p, &mut rng).unwrap();
        let cq = client.encrypt(&q, &mut rng).unwrap();
        let prod = server.mul_ct_ct(&cp, &cq).unwrap();
        assert_eq!(prod.level(), 1);
        assert_eq!(client.decrypt(&prod).unwrap(), poly::negacyclic_mul(&p, &q));
        // A second multiplicative level is rejected.
        assert!(matches!(server.mul_ct_ct(&prod, &cq), Err(Error::LevelExceeded(1))));
        // Level survives the wire.
        let back = Ciphertext::deserialize(&prod.serialize()).unwrap();
        assert_eq!(back.level(), 1);

        let (rc, rs) = sessions(Engine::Rlwe, 20);
        let mut rng2 = StdRng::seed_from_u64(11);
        let a = rc.encrypt(&rand_pt(&mut rng2, 4096, 20), &mut rng2).unwrap();
        let b = rc.encrypt(&rand_pt(&mut rng2, 4096, 20), &mut rng2).unwrap();
        assert!(matches!(
            rs.mul_ct_ct(&a, &b),
            Err(Error::EngineUnsupported { engine: "rlwe", op: "mul_ct_ct" })
        ));
    }

    #[test]
    fn weighted_select_picks_exactly_one_slot() {
        let (client, server) = sessions(Engine::Semantic, 64);
        let mut rng = StdRng::seed_from_u64(12);
        let n_exp = 8usize;
        let weights: Vec<Vec<u64>> =
            (0..n_exp).map(|_| rand_pt(&mut rng, 4096, 64)).collect();
        for sel in 0..n_exp {
            let mut onehot = vec![0u64; 4096];
            onehot[sel] = 1;
            let gate = client.encrypt(&onehot, &mut rng).unwrap();
            let picked = server.weighted_select(&gate, &weights).unwrap();
            assert_eq!(client.decrypt(&picked).unwrap(), weights[sel], "slot {sel}");
        }

        let (rc, rs) = sessions(Engine::Rlwe, 20);
        let mut rng2 = StdRng::seed_from_u64(13);
        let gate = rc.encrypt(&vec![0u64; 4096], &mut rng2).unwrap();
        assert!(matches!(
            rs.weighted_select(&gate, &weights),
            Err(Error::EngineUnsupported { engine: "rlwe", op: "weighted_select" })
        ));
    }

    #[test]
    fn skip_compute_preserves_sizes_and_discipline() {
        let params = HeParams::DEFAULT;
        let mut rng = StdRng::seed_from_u64(14);
        let mut client = He::client(Engine::Semantic, params, &mut rng).unwrap();
        client.skip_compute = true;
        let ct = client.encrypt(&vec![5u64; 4096], &mut rng).unwrap();
        assert_eq!(ct.serialize().len(), 65_552);
        let prod = client.mul_ct_ct(&ct, &ct).unwrap();
        assert_eq!(prod.level(), 1);
        assert!(matches!(client.mul_ct_ct(&prod, &ct), Err(Error::LevelExceeded(1))));
        assert_eq!(client.decrypt(&ct).unwrap(), vec![0u64; 4096]);
    }

    #[test]
    fn rlwe_second_plain_mul_is_rejected() {
        let (client, server) = sessions(Engine::Rlwe, 16);
        let mut rng = StdRng::seed_from_u64(15);
        let pt = rand_pt(&mut rng, 4096, 16);
        let ct = client.encrypt(&pt, &mut rng).unwrap();
        let once = server.mul_ct_pt(&ct, &pt).unwrap();
        assert!(matches!(server.mul_ct_pt(&once, &pt), Err(Error::NoiseBudget(_))));
    }

    #[test]
    fn malformed_wire_is_rejected() {
        let (client, _) = sessions(Engine::Semantic, 64);
        let mut rng = StdRng::seed_from_u64(16);
        let mut wire = client.encrypt(&vec![1u64; 4096], &mut rng).unwrap().serialize();
        assert!(Ciphertext::deserialize(&wire[..10]).is_err());
        wire[0] = 9; // unknown engine tag
        assert!(Ciphertext::deserialize(&wire).is_err());
        let mut short = client.encrypt(&vec![1u64; 4096], &mut rng).unwrap().serialize();
        short.truncate(short.len() - 8);
        assert!(Ciphertext::deserialize(&short).is_err());
    }
}
