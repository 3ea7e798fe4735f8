//! Trusted-dealer correlated randomness.
//!
//! The dealer is simulated: both parties' views of every correlation derive
//! deterministically from one dealer seed, and each party's pool exposes only
//! its own view. Pools are lazily expanded streams (memory stays flat no
//! matter how large the budget), with per-kind budgets enforced at draw time;
//! budgets come from a counting-mode dry run of the same protocol.
//!
//! Correlation kinds:
//!
//! * Beaver triples over the ring: `c = a * b`.
//! * Boolean triples, packed 64 lanes to a word: `c = a & b` bitwise.
//! * Bit-conversion records: a bit XOR-shared and the same bit additively
//!   shared.
//! * Mux records: shared selector bit `beta`, its additive sharing, a ring
//!   mask `gamma`, and the product `beta * gamma`.
//! * Comparison masks: a ring element additively shared together with an
//!   XOR-sharing of its bits.
//! * Truncation records, keyed by shift: additive sharings of a mask `rho`
//!   and of `rho >> shift`, plus an XOR-sharing of rho's bits (the bit
//!   sharing is what lets the protocol resolve wrap/borrow/sign exactly).
//! * Matrix triples keyed by (k, m, n): `C = A * B` entrywise over the ring.
//!
//! A pool can be materialized to a cache file (counts plus raw share words
//! for both views); `audit_cache` re-checks every defining relation and
//! rejects corrupted files, and `audit_stream` re-expands a fresh stream and
//! verifies the same relations hold by construction.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::transport::Role;

const KIND_BEAVER: u64 = 1;
const KIND_BOOL: u64 = 2;
const KIND_B2A: u64 = 3;
const KIND_MUX: u64 = 4;
const KIND_COMP: u64 = 5;
const KIND_TRUNC: u64 = 6;
const KIND_MAT: u64 = 7;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Domain-separated 256-bit seed from the dealer seed and a kind label.
fn derive_seed(master: u64, label: &[u64]) -> [u8; 32] {
    let mut state = master ^ 0x6D6F_656D_7578_2A2A; // constant domain tag
    for &w in label {
        let mixed = splitmix64(&mut state) ^ w.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        state ^= mixed.rotate_left(17);
    }
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

fn kind_rng(seed: u64, label: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_seed(seed, label))
}

/// Per-kind correlation counts for one protocol run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Budget {
    pub beaver: u64,
    /// Boolean triples in 64-lane words.
    pub bool_words: u64,
    pub b2a: u64,
    pub mux: u64,
    pub comp: u64,
    /// shift -> count
    pub trunc: BTreeMap<u32, u64>,
    /// (k, m, n) -> count
    pub mat: BTreeMap<(usize, usize, usize), u64>,
}

impl Budget {
    /// Modeled offline bytes: every share word the dealer must deliver to the
    /// two parties, bits packed, ring elements at their wire width.
    pub fn modeled_setup_bytes(&self, ell: u32) -> u64 {
        let eb = ell.div_ceil(8) as u64;
        let mut elems: u64 = 0; // ring elements per party
        let mut bits: u64 = 0; // packed bits per party
        elems += 3 * self.beaver;
        bits += 3 * 64 * self.bool_words;
        elems += self.b2a;
        bits += self.b2a;
        elems += 3 * self.mux;
        bits += self.mux;
        elems += self.comp;
        bits += ell as u64 * self.comp;
        for &count in self.trunc.values() {
            elems += 2 * count;
            bits += ell as u64 * count;
        }
        for (&(k, m, n), &count) in &self.mat {
            elems += ((k * m + m * n + k * n) as u64) * count;
        }
        2 * (elems * eb + bits.div_ceil(8))
    }

    pub fn total_records(&self) -> u64 {
        self.beaver
            + self.bool_words
            + self.b2a
            + self.mux
            + self.comp
            + self.trunc.values().sum::<u64>()
            + self.mat.values().sum::<u64>()
    }
}

// Generators: split one combined stream into the two party views. The
// relation between the views is the correlation's defining equation.

fn gen_beaver(rng: &mut ChaCha20Rng, mask: u64) -> ([u64; 3], [u64; 3]) {
    let a_c = rng.next_u64() & mask;
    let a_s = rng.next_u64() & mask;
    let b_c = rng.next_u64() & mask;
    let b_s = rng.next_u64() & mask;
    let c_c = rng.next_u64() & mask;
    let a = a_c.wrapping_add(a_s);
    let b = b_c.wrapping_add(b_s);
    let c_s = a.wrapping_mul(b).wrapping_sub(c_c) & mask;
    ([a_c, b_c, c_c], [a_s, b_s, c_s])
}

fn gen_bool_word(rng: &mut ChaCha20Rng) -> ([u64; 3], [u64; 3]) {
    let a_c = rng.next_u64();
    let a_s = rng.next_u64();
    let b_c = rng.next_u64();
    let b_s = rng.next_u64();
    let c_c = rng.next_u64();
    let c_s = ((a_c ^ a_s) & (b_c ^ b_s)) ^ c_c;
    ([a_c, b_c, c_c], [a_s, b_s, c_s])
}

fn gen_b2a(rng: &mut ChaCha20Rng, mask: u64) -> ([u64; 2], [u64; 2]) {
    let beta = rng.next_u64() & 1;
    let bit_c = rng.next_u64() & 1;
    let bit_s = beta ^ bit_c;
    let a_c = rng.next_u64() & mask;
    let a_s = beta.wrapping_sub(a_c) & mask;
    ([bit_c, a_c], [bit_s, a_s])
}

fn gen_mux(rng: &mut ChaCha20Rng, mask: u64) -> ([u64; 4], [u64; 4]) {
    let beta = rng.next_u64() & 1;
    let bit_c = rng.next_u64() & 1;
    let bit_s = beta ^ bit_c;
    let ba_c = rng.next_u64() & mask;
    let ba_s = beta.wrapping_sub(ba_c) & mask;
    let gamma = rng.next_u64() & mask;
    let g_c = rng.next_u64() & mask;
    let g_s = gamma.wrapping_sub(g_c) & mask;
    let bg = beta.wrapping_mul(gamma) & mask;
    let bg_c = rng.next_u64() & mask;
    let bg_s = bg.wrapping_sub(bg_c) & mask;
    ([bit_c, ba_c, g_c, bg_c], [bit_s, ba_s, g_s, bg_s])
}

fn gen_comp(rng: &mut ChaCha20Rng, ell: u32, mask: u64) -> ([u64; 2], [u64; 2]) {
    let _ = ell;
    let rho = rng.next_u64() & mask;
    let bits_c = rng.next_u64() & mask;
    let bits_s = rho ^ bits_c;
    let a_c = rng.next_u64() & mask;
    let a_s = rho.wrapping_sub(a_c) & mask;
    ([bits_c, a_c], [bits_s, a_s])
}

fn gen_trunc(rng: &mut ChaCha20Rng, shift: u32, mask: u64) -> ([u64; 3], [u64; 3]) {
    let rho = rng.next_u64() & mask;
    let hi = rho >> shift;
    let a_c = rng.next_u64() & mask;
    let a_s = rho.wrapping_sub(a_c) & mask;
    let h_c = rng.next_u64() & mask;
    let h_s = hi.wrapping_sub(h_c) & mask;
    let bits_c = rng.next_u64() & mask;
    let bits_s = rho ^ bits_c;
    ([a_c, h_c, bits_c], [a_s, h_s, bits_s])
}

fn gen_mat(
    rng: &mut ChaCha20Rng,
    mask: u64,
    (k, m, n): (usize, usize, usize),
) -> (Vec<u64>, Vec<u64>) {
    let mut a = vec![0u64; k * m];
    let mut b = vec![0u64; m * n];
    let mut view_c = Vec::with_capacity(k * m + m * n + k * n);
    let mut view_s = Vec::with_capacity(k * m + m * n + k * n);
    for item in a.iter_mut() {
        let x_c = rng.next_u64() & mask;
        let x_s = rng.next_u64() & mask;
        *item = x_c.wrapping_add(x_s) & mask;
        view_c.push(x_c);
        view_s.push(x_s);
    }
    for item in b.iter_mut() {
        let x_c = rng.next_u64() & mask;
        let x_s = rng.next_u64() & mask;
        *item = x_c.wrapping_add(x_s) & mask;
        view_c.push(x_c);
        view_s.push(x_s);
    }
    for i in 0..k {
        for j in 0..n {
            let mut acc = 0u64;
            for t in 0..m {
                acc = acc.wrapping_add(a[i * m + t].wrapping_mul(b[t * n + j]));
            }
            let c_c = rng.next_u64() & mask;
            view_c.push(c_c);
            view_s.push(acc.wrapping_sub(c_c) & mask);
        }
    }
    (view_c, view_s)
}

/// One party's record view for a mux correlation.
#[derive(Clone, Copy, Debug)]
pub struct MuxRecord {
    pub beta_bit: u64,
    pub beta_a: u64,
    pub gamma_a: u64,
    pub betagamma_a: u64,
}

/// One party's view of a comparison mask.
#[derive(Clone, Copy, Debug)]
pub struct CompMask {
    pub rho_bits: u64,
    pub rho_a: u64,
}

/// One party's view of a truncation record.
#[derive(Clone, Copy, Debug)]
pub struct TruncRecord {
    pub rho_a: u64,
    pub rho_hi_a: u64,
    pub rho_bits: u64,
}

/// One party's view of a matrix triple, concatenated [A | B | C] row-major.
#[derive(Clone, Debug)]
pub struct MatTriple {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
}

enum Source {
    /// Lazily expanded from the dealer seed.
    Stream(Box<ChaCha20Rng>),
    /// Materialized share words, both views interleaved per record.
    Mem { words: Vec<u64>, pos: usize },
}

struct KindStream {
    src: Source,
    used: u64,
    limit: u64,
}

impl KindStream {
    fn stream(rng: ChaCha20Rng, limit: u64) -> KindStream {
        KindStream { src: Source::Stream(Box::new(rng)), used: 0, limit }
    }

    fn take(&mut self, name: &'static str) -> Result<()> {
        if self.used == self.limit {
            return Err(Error::RandomnessExhausted(name));
        }
        self.used += 1;
        Ok(())
    }
}

/// One party's online view of all correlation pools.
pub struct PartyPool {
    role: Role,
    ell: u32,
    mask: u64,
    counting: bool,
    beaver: KindStream,
    bool_words: KindStream,
    b2a: KindStream,
    mux: KindStream,
    comp: KindStream,
    trunc: BTreeMap<u32, KindStream>,
    mat: BTreeMap<(usize, usize, usize), KindStream>,
    seed: u64,
}

/// Build both parties' pools for a budget, streaming from `seed`.
pub fn deal(ell: u32, seed: u64, budget: &Budget) -> (PartyPool, PartyPool) {
    let build = |role| PartyPool::new(role, ell, seed, budget, false);
    (build(Role::Client), build(Role::Server))
}

/// A pool that never exhausts and only counts consumption; values are still
/// properly correlated so a dry run is a faithful run.
pub fn counting_pool(role: Role, ell: u32) -> PartyPool {
    PartyPool::new(role, ell, 0, &Budget::default(), true)
}

fn ring_mask(ell: u32) -> u64 {
    if ell == 64 { u64::MAX } else { (1u64 << ell) - 1 }
}

impl PartyPool {
    fn new(role: Role, ell: u32, seed: u64, budget: &Budget, counting: bool) -> PartyPool {
        let lim = |n: u64| if counting { u64::MAX } else { n };
        let trunc = budget
            .trunc
            .iter()
            .map(|(&shift, &n)| {
                (shift, KindStream::stream(kind_rng(seed, &[KIND_TRUNC, shift as u64]), lim(n)))
            })
            .collect();
        let mat = budget
            .mat
            .iter()
            .map(|(&key, &n)| {
                let (k, m, nn) = key;
                let rng = kind_rng(seed, &[KIND_MAT, k as u64, m as u64, nn as u64]);
                (key, KindStream::stream(rng, lim(n)))
            })
            .collect();
        PartyPool {
            role,
            ell,
            mask: ring_mask(ell),
            counting,
            beaver: KindStream::stream(kind_rng(seed, &[KIND_BEAVER]), lim(budget.beaver)),
            bool_words: KindStream::stream(kind_rng(seed, &[KIND_BOOL]), lim(budget.bool_words)),
            b2a: KindStream::stream(kind_rng(seed, &[KIND_B2A]), lim(budget.b2a)),
            mux: KindStream::stream(kind_rng(seed, &[KIND_MUX]), lim(budget.mux)),
            comp: KindStream::stream(kind_rng(seed, &[KIND_COMP]), lim(budget.comp)),
            trunc,
            mat,
            seed,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// True for dry-run pools that only meter consumption.
    pub fn is_counting(&self) -> bool {
        self.counting
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// Consumption so far, in budget units.
    pub fn used(&self) -> Budget {
        Budget {
            beaver: self.beaver.used,
            bool_words: self.bool_words.used,
            b2a: self.b2a.used,
            mux: self.mux.used,
            comp: self.comp.used,
            trunc: self.trunc.iter().map(|(&s, ks)| (s, ks.used)).collect(),
            mat: self.mat.iter().map(|(&k, ks)| (k, ks.used)).collect(),
        }
    }

    fn pick<const W: usize>(role: Role, views: ([u64; W], [u64; W])) -> [u64; W] {
        match role {
            Role::Client => views.0,
            Role::Server => views.1,
        }
    }

    fn draw<const W: usize>(
        stream: &mut KindStream,
        role: Role,
        gen: impl Fn(&mut ChaCha20Rng) -> ([u64; W], [u64; W]),
    ) -> [u64; W] {
        match &mut stream.src {
            Source::Stream(rng) => Self::pick(role, gen(rng)),
            Source::Mem { words, pos } => {
                let off = match role {
                    Role::Client => *pos,
                    Role::Server => *pos + W,
                };
                let mut out = [0u64; W];
                out.copy_from_slice(&words[off..off + W]);
                *pos += 2 * W;
                out
            }
        }
    }

    /// (a, b, c) ring shares with a*b = c across parties.
    pub fn next_beaver(&mut self) -> Result<(u64, u64, u64)> {
        self.beaver.take("beaver")?;
        let mask = self.mask;
        let v = Self::draw(&mut self.beaver, self.role, |rng| gen_beaver(rng, mask));
        Ok((v[0], v[1], v[2]))
    }

    /// 64 boolean triples packed in words: (a, b, c) with a&b = c laneswise.
    pub fn next_bool_word(&mut self) -> Result<(u64, u64, u64)> {
        self.bool_words.take("boolean triple")?;
        let v = Self::draw(&mut self.bool_words, self.role, gen_bool_word);
        Ok((v[0], v[1], v[2]))
    }

    /// (xor share of a bit, additive share of the same bit).
    pub fn next_b2a(&mut self) -> Result<(u64, u64)> {
        self.b2a.take("bit conversion")?;
        let mask = self.mask;
        let v = Self::draw(&mut self.b2a, self.role, |rng| gen_b2a(rng, mask));
        Ok((v[0], v[1]))
    }

    pub fn next_mux(&mut self) -> Result<MuxRecord> {
        self.mux.take("mux")?;
        let mask = self.mask;
        let v = Self::draw(&mut self.mux, self.role, |rng| gen_mux(rng, mask));
        Ok(MuxRecord { beta_bit: v[0], beta_a: v[1], gamma_a: v[2], betagamma_a: v[3] })
    }

    pub fn next_comp(&mut self) -> Result<CompMask> {
        self.comp.take("comparison mask")?;
        let (ell, mask) = (self.ell, self.mask);
        let v = Self::draw(&mut self.comp, self.role, |rng| gen_comp(rng, ell, mask));
        Ok(CompMask { rho_bits: v[0], rho_a: v[1] })
    }

    pub fn next_trunc(&mut self, shift: u32) -> Result<TruncRecord> {
        let mask = self.mask;
        let role = self.role;
        let stream = match self.trunc.entry(shift) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) if self.counting => {
                e.insert(KindStream::stream(kind_rng(self.seed, &[KIND_TRUNC, shift as u64]), u64::MAX))
            }
            std::collections::btree_map::Entry::Vacant(_) => {
                return Err(Error::RandomnessExhausted("truncation"));
            }
        };
        stream.take("truncation")?;
        let v = Self::draw(stream, role, |rng| gen_trunc(rng, shift, mask));
        Ok(TruncRecord { rho_a: v[0], rho_hi_a: v[1], rho_bits: v[2] })
    }

    pub fn next_mat(&mut self, k: usize, m: usize, n: usize) -> Result<MatTriple> {
        let mask = self.mask;
        let role = self.role;
        let key = (k, m, n);
        let stream = match self.mat.entry(key) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) if self.counting => {
                let rng = kind_rng(self.seed, &[KIND_MAT, k as u64, m as u64, n as u64]);
                e.insert(KindStream::stream(rng, u64::MAX))
            }
            std::collections::btree_map::Entry::Vacant(_) => {
                return Err(Error::RandomnessExhausted("matrix triple"));
            }
        };
        stream.take("matrix triple")?;
        let view = match &mut stream.src {
            Source::Stream(rng) => {
                let (c, s) = gen_mat(rng, mask, key);
                match role {
                    Role::Client => c,
                    Role::Server => s,
                }
            }
            Source::Mem { words, pos } => {
                let w = k * m + m * n + k * n;
                let off = match role {
                    Role::Client => *pos,
                    Role::Server => *pos + w,
                };
                let out = words[off..off + w].to_vec();
                *pos += 2 * w;
                out
            }
        };
        let a = view[..k * m].to_vec();
        let b = view[k * m..k * m + m * n].to_vec();
        let c = view[k * m + m * n..].to_vec();
        Ok(MatTriple { a, b, c })
    }
}

// --- cache file ---

const CACHE_MAGIC: &[u8; 8] = b"MXPOOL01";

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u64(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let end = *pos + 8;
    if end > buf.len() {
        return Err(Error::malformed("pool cache", "truncated"));
    }
    let v = u64::from_le_bytes(buf[*pos..end].try_into().unwrap());
    *pos = end;
    Ok(v)
}

/// Materialize every budgeted record (both views) into a cache file.
pub fn write_cache(path: &Path, ell: u32, seed: u64, budget: &Budget) -> Result<()> {
    let mask = ring_mask(ell);
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    push_u64(&mut out, ell as u64);
    push_u64(&mut out, seed);
    push_u64(&mut out, budget.beaver);
    push_u64(&mut out, budget.bool_words);
    push_u64(&mut out, budget.b2a);
    push_u64(&mut out, budget.mux);
    push_u64(&mut out, budget.comp);
    push_u64(&mut out, budget.trunc.len() as u64);
    for (&shift, &n) in &budget.trunc {
        push_u64(&mut out, shift as u64);
        push_u64(&mut out, n);
    }
    push_u64(&mut out, budget.mat.len() as u64);
    for (&(k, m, n), &count) in &budget.mat {
        push_u64(&mut out, k as u64);
        push_u64(&mut out, m as u64);
        push_u64(&mut out, n as u64);
        push_u64(&mut out, count);
    }

    let mut emit = |views: (&[u64], &[u64])| {
        for &w in views.0 {
            push_u64(&mut out, w);
        }
        for &w in views.1 {
            push_u64(&mut out, w);
        }
    };
    let mut rng = kind_rng(seed, &[KIND_BEAVER]);
    for _ in 0..budget.beaver {
        let (c, s) = gen_beaver(&mut rng, mask);
        emit((&c, &s));
    }
    let mut rng = kind_rng(seed, &[KIND_BOOL]);
    for _ in 0..budget.bool_words {
        let (c, s) = gen_bool_word(&mut rng);
        emit((&c, &s));
    }
    let mut rng = kind_rng(seed, &[KIND_B2A]);
    for _ in 0..budget.b2a {
        let (c, s) = gen_b2a(&mut rng, mask);
        emit((&c, &s));
    }
    let mut rng = kind_rng(seed, &[KIND_MUX]);
    for _ in 0..budget.mux {
        let (c, s) = gen_mux(&mut rng, mask);
        emit((&c, &s));
    }
    let mut rng = kind_rng(seed, &[KIND_COMP]);
    for _ in 0..budget.comp {
        let (c, s) = gen_comp(&mut rng, ell, mask);
        emit((&c, &s));
    }
    for (&shift, &n) in &budget.trunc {
        let mut rng = kind_rng(seed, &[KIND_TRUNC, shift as u64]);
        for _ in 0..n {
            let (c, s) = gen_trunc(&mut rng, shift, mask);
            emit((&c, &s));
        }
    }
    for (&key, &count) in &budget.mat {
        let (k, m, n) = key;
        let mut rng = kind_rng(seed, &[KIND_MAT, k as u64, m as u64, n as u64]);
        for _ in 0..count {
            let (c, s) = gen_mat(&mut rng, mask, key);
            emit((&c, &s));
        }
    }

    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct CacheBody {
    ell: u32,
    budget: Budget,
    /// Raw share words per kind, both views interleaved per record, in
    /// header order.
    sections: Vec<Vec<u64>>,
}

fn read_cache(path: &Path) -> Result<CacheBody> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..8] != CACHE_MAGIC {
        return Err(Error::malformed("pool cache", "bad magic"));
    }
    let mut pos = 8usize;
    let ell = read_u64(&buf, &mut pos)? as u32;
    if !(2..=64).contains(&ell) {
        return Err(Error::malformed("pool cache", format!("ring width {ell}")));
    }
    let _seed = read_u64(&buf, &mut pos)?;
    let mut budget = Budget {
        beaver: read_u64(&buf, &mut pos)?,
        bool_words: read_u64(&buf, &mut pos)?,
        b2a: read_u64(&buf, &mut pos)?,
        mux: read_u64(&buf, &mut pos)?,
        comp: read_u64(&buf, &mut pos)?,
        ..Budget::default()
    };
    let n_trunc = read_u64(&buf, &mut pos)?;
    for _ in 0..n_trunc {
        let shift = read_u64(&buf, &mut pos)? as u32;
        let count = read_u64(&buf, &mut pos)?;
        budget.trunc.insert(shift, count);
    }
    let n_mat = read_u64(&buf, &mut pos)?;
    for _ in 0..n_mat {
        let k = read_u64(&buf, &mut pos)? as usize;
        let m = read_u64(&buf, &mut pos)? as usize;
        let n = read_u64(&buf, &mut pos)? as usize;
        let count = read_u64(&buf, &mut pos)?;
        budget.mat.insert((k, m, n), count);
    }

    let mut sections = Vec::new();
    let take_words = |pos: &mut usize, n_words: u64| -> Result<Vec<u64>> {
        let mut v = Vec::with_capacity(n_words as usize);
        for _ in 0..n_words {
            v.push(read_u64(&buf, pos)?);
        }
        Ok(v)
    };
    sections.push(take_words(&mut pos, budget.beaver * 6)?);
    sections.push(take_words(&mut pos, budget.bool_words * 6)?);
    sections.push(take_words(&mut pos, budget.b2a * 4)?);
    sections.push(take_words(&mut pos, budget.mux * 8)?);
    sections.push(take_words(&mut pos, budget.comp * 4)?);
    for (_, &n) in &budget.trunc {
        sections.push(take_words(&mut pos, n * 6)?);
    }
    for (&(k, m, n), &count) in &budget.mat {
        let w = (k * m + m * n + k * n) as u64;
        sections.push(take_words(&mut pos, count * 2 * w)?);
    }
    if pos != buf.len() {
        return Err(Error::malformed("pool cache", "trailing bytes"));
    }
    Ok(CacheBody { ell, budget, sections })
}

/// Load both parties' pools from a cache file, auditing it first.
pub fn load_cache(path: &Path) -> Result<(PartyPool, PartyPool)> {
    audit_cache(path)?;
    let body = read_cache(path)?;
    let build = |role: Role| {
        let mut pool = PartyPool::new(role, body.ell, 0, &body.budget, false);
        let mut sec = body.sections.iter();
        let mut mem = |ks: &mut KindStream| {
            ks.src = Source::Mem { words: sec.next().unwrap().clone(), pos: 0 };
        };
        mem(&mut pool.beaver);
        mem(&mut pool.bool_words);
        mem(&mut pool.b2a);
        mem(&mut pool.mux);
        mem(&mut pool.comp);
        for ks in pool.trunc.values_mut() {
            mem(ks);
        }
        for ks in pool.mat.values_mut() {
            mem(ks);
        }
        pool
    };
    Ok((build(Role::Client), build(Role::Server)))
}

/// Per-kind record counts whose defining relations were verified.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub checked: BTreeMap<String, u64>,
}

fn audit_fail(kind: &str, index: u64) -> Error {
    Error::PoolAudit(format!("{kind} record {index} violates its defining relation"))
}

fn audit_body(body: &CacheBody) -> Result<AuditReport> {
    let ell = body.ell;
    let mask = ring_mask(ell);
    let mut report = AuditReport::default();
    let mut sec = body.sections.iter();

    let beaver = sec.next().unwrap();
    for (i, r) in beaver.chunks_exact(6).enumerate() {
        let (a, b, c) = (
            r[0].wrapping_add(r[3]) & mask,
            r[1].wrapping_add(r[4]) & mask,
            r[2].wrapping_add(r[5]) & mask,
        );
        if a.wrapping_mul(b) & mask != c {
            return Err(audit_fail("beaver", i as u64));
        }
    }
    report.checked.insert("beaver".into(), body.budget.beaver);

    let boolw = sec.next().unwrap();
    for (i, r) in boolw.chunks_exact(6).enumerate() {
        if (r[0] ^ r[3]) & (r[1] ^ r[4]) != (r[2] ^ r[5]) {
            return Err(audit_fail("boolean triple", i as u64));
        }
    }
    report.checked.insert("boolean".into(), body.budget.bool_words);

    let b2a = sec.next().unwrap();
    for (i, r) in b2a.chunks_exact(4).enumerate() {
        let bit = r[0] ^ r[2];
        if bit > 1 || r[1].wrapping_add(r[3]) & mask != bit {
            return Err(audit_fail("bit conversion", i as u64));
        }
    }
    report.checked.insert("b2a".into(), body.budget.b2a);

    let mux = sec.next().unwrap();
    for (i, r) in mux.chunks_exact(8).enumerate() {
        let beta = r[0] ^ r[4];
        let beta_a = r[1].wrapping_add(r[5]) & mask;
        let gamma = r[2].wrapping_add(r[6]) & mask;
        let bg = r[3].wrapping_add(r[7]) & mask;
        if beta > 1 || beta_a != beta || bg != beta.wrapping_mul(gamma) & mask {
            return Err(audit_fail("mux", i as u64));
        }
    }
    report.checked.insert("mux".into(), body.budget.mux);

    let comp = sec.next().unwrap();
    for (i, r) in comp.chunks_exact(4).enumerate() {
        let rho_bits = r[0] ^ r[2];
        let rho = r[1].wrapping_add(r[3]) & mask;
        if rho_bits != rho {
            return Err(audit_fail("comparison mask", i as u64));
        }
    }
    report.checked.insert("comparison".into(), body.budget.comp);

    for (&shift, &count) in &body.budget.trunc {
        let words = sec.next().unwrap();
        for (i, r) in words.chunks_exact(6).enumerate() {
            let rho = r[0].wrapping_add(r[3]) & mask;
            let hi = r[1].wrapping_add(r[4]) & mask;
            let bits = r[2] ^ r[5];
            if hi != rho >> shift || bits != rho {
                return Err(audit_fail("truncation", i as u64));
            }
        }
        report.checked.insert(format!("trunc[{shift}]"), count);
    }

    for (&(k, m, n), &count) in &body.budget.mat {
        let words = sec.next().unwrap();
        let w = k * m + m * n + k * n;
        for (i, r) in words.chunks_exact(2 * w).enumerate() {
            let (vc, vs) = r.split_at(w);
            let a: Vec<u64> = (0..k * m).map(|t| vc[t].wrapping_add(vs[t]) & mask).collect();
            let b: Vec<u64> =
                (0..m * n).map(|t| vc[k * m + t].wrapping_add(vs[k * m + t]) & mask).collect();
            for ii in 0..k {
                for jj in 0..n {
                    let mut acc = 0u64;
                    for t in 0..m {
                        acc = acc.wrapping_add(a[ii * m + t].wrapping_mul(b[t * n + jj]));
                    }
                    let idx = k * m + m * n + ii * n + jj;
                    if acc & mask != vc[idx].wrapping_add(vs[idx]) & mask {
                        return Err(audit_fail("matrix triple", i as u64));
                    }
                }
            }
        }
        report.checked.insert(format!("mat[{k}x{m}x{n}]"), count);
    }
    Ok(report)
}

/// Re-check every record in a cache file against its defining relation.
pub fn audit_cache(path: &Path) -> Result<AuditReport> {
    audit_body(&read_cache(path)?)
}

/// Re-expand the first `samples` records of each kind from the seed and check
/// relations (guards the generators themselves).
pub fn audit_stream(ell: u32, seed: u64, budget: &Budget, samples: u64) -> Result<AuditReport> {
    let capped = Budget {
        beaver: budget.beaver.min(samples),
        bool_words: budget.bool_words.min(samples),
        b2a: budget.b2a.min(samples),
        mux: budget.mux.min(samples),
        comp: budget.comp.min(samples),
        trunc: budget.trunc.iter().map(|(&s, &n)| (s, n.min(samples))).collect(),
        mat: budget.mat.iter().map(|(&k, &n)| (k, n.min(samples))).collect(),
    };
    let mask = ring_mask(ell);
    let mut sections = Vec::new();
    let collect = |label: &[u64], count: u64, words: usize, gen: &mut dyn FnMut(&mut ChaCha20Rng) -> (Vec<u64>, Vec<u64>)| {
        let mut rng = kind_rng(seed, label);
        let mut v = Vec::with_capacity((count as usize) * 2 * words);
        for _ in 0..count {
            let (c, s) = gen(&mut rng);
            v.extend_from_slice(&c);
            v.extend_from_slice(&s);
        }
        v
    };
    sections.push(collect(&[KIND_BEAVER], capped.beaver, 3, &mut |r| {
        let (c, s) = gen_beaver(r, mask);
        (c.to_vec(), s.to_vec())
    }));
    sections.push(collect(&[KIND_BOOL], capped.bool_words, 3, &mut |r| {
        let (c, s) = gen_bool_word(r);
        (c.to_vec(), s.to_vec())
    }));
    sections.push(collect(&[KIND_B2A], capped.b2a, 2, &mut |r| {
        let (c, s) = gen_b2a(r, mask);
        (c.to_vec(), s.to_vec())
    }));
    sections.push(collect(&[KIND_MUX], capped.mux, 4, &mut |r| {
        let (c, s) = gen_mux(r, mask);
        (c.to_vec(), s.to_vec())
    }));
    sections.push(collect(&[KIND_COMP], capped.comp, 2, &mut |r| {
        let (c, s) = gen_comp(r, ell, mask);
        (c.to_vec(), s.to_vec())
    }));
    for (&shift, &n) in &capped.trunc {
        sections.push(collect(&[KIND_TRUNC, shift as u64], n, 3, &mut |r| {
            let (c, s) = gen_trunc(r, shift, mask);
            (c.to_vec(), s.to_vec())
        }));
    }
    for (&key, &n) in &capped.mat {
        let (k, m, nn) = key;
        let words = k * m + m * nn + k * nn;
        sections.push(collect(&[KIND_MAT, k as u64, m as u64, nn as u64], n, words, &mut |r| {
            gen_mat(r, mask, key)
        }));
    }
    audit_body(&CacheBody { ell, budget: capped, sections })
}
