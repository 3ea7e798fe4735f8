//! Additive secret sharing over Z_{2^ell} and the core two-party
//! subprotocols.
//!
//! A value x is held as shares x_C + x_S = x (mod 2^ell); bits are XOR-shared.
//! Public constants are folded into the client's share by convention. Every
//! opened value is masked by fresh dealer randomness, so transcripts are
//! uniform; every subprotocol consumes correlations and sends bytes in
//! amounts that depend only on public shapes, never on data — that is what
//! makes counting-mode budget estimation exact.
//!
//! Core ops here: sharing/reveal, masked opening, Beaver multiplication
//! (element-wise and matrix), boolean AND batches, bit conversion, oblivious
//! selection (mux). Comparison, truncation, and top-1 live in submodules.

pub mod bits;
pub mod comp;
pub mod select;
pub mod trunc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dealer::{Budget, PartyPool};
use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::transport::{tag, Channel, ChannelStats, Role};

pub use bits::Bits;

/// Running totals of subprotocol invocations, counted per element.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct OpCounters {
    pub mul: u64,
    pub mat_mul: u64,
    pub trunc: u64,
    pub comp: u64,
    pub mux: u64,
    pub b2a: u64,
    pub and_words: u64,
    pub opens: u64,
    pub top1: u64,
    /// Ciphertexts this party sent.
    pub he_cts: u64,
    /// Payload bytes of response ciphertexts this party received; feeds the
    /// response-scale what-if column of reports.
    pub resp_ct_bytes: u64,
}

/// One party's session: channel + correlation pool + counters.
pub struct Mpc {
    pub cfg: FixedConfig,
    ch: Box<dyn Channel>,
    pool: PartyPool,
    rng: ChaCha20Rng,
    pub counters: OpCounters,
    /// Scale-tracking debug state: +1 per scale-s x scale-s product element,
    /// -shift/frac per truncation element when shift is a multiple of frac.
    excess: i64,
}

impl Mpc {
    pub fn new(cfg: FixedConfig, ch: Box<dyn Channel>, pool: PartyPool, seed: u64) -> Mpc {
        assert_eq!(pool.ell(), cfg.ell, "pool ring width must match session");
        assert_eq!(pool.role(), ch.role(), "pool role must match channel role");
        let rng = ChaCha20Rng::seed_from_u64(
            seed ^ match ch.role() {
                Role::Client => 0x636c69,
                Role::Server => 0x737276,
            },
        );
        Mpc { cfg, ch, pool, rng, counters: OpCounters::default(), excess: 0 }
    }

    pub fn role(&self) -> Role {
        self.ch.role()
    }

    pub fn is_client(&self) -> bool {
        self.role().is_client()
    }

    pub fn channel(&mut self) -> &mut dyn Channel {
        self.ch.as_mut()
    }

    pub fn stats(&self) -> ChannelStats {
        self.ch.stats()
    }

    pub fn pool(&mut self) -> &mut PartyPool {
        &mut self.pool
    }

    pub fn pool_used(&self) -> Budget {
        self.pool.used()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    // --- local share algebra ---

    /// This party's share of a public constant.
    #[inline]
    pub fn const_share(&self, c: u64) -> u64 {
        if self.is_client() {
            c & self.cfg.mask()
        } else {
            0
        }
    }

    #[inline]
    pub fn add_const(&self, share: u64, c: u64) -> u64 {
        if self.is_client() {
            self.cfg.add(share, c)
        } else {
            share
        }
    }

    pub fn add_vec(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| self.cfg.add(x, y)).collect()
    }

    pub fn sub_vec(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        a.iter().zip(b).map(|(&x, &y)| self.cfg.sub(x, y)).collect()
    }

    /// Multiply shares by a public constant (both parties scale).
    pub fn scale_vec(&self, a: &[u64], c: u64) -> Vec<u64> {
        a.iter().map(|&x| self.cfg.mul(x, c)).collect()
    }

    /// Flip one party's view of shared bits (logical NOT).
    pub fn not_bits(&self, b: &Bits) -> Bits {
        let mut out = b.clone();
        if self.is_client() {
            out.flip_all();
        }
        out
    }

    /// XOR a public bit pattern into shared bits.
    pub fn xor_const_bits(&self, b: &Bits, public: &Bits) -> Bits {
        if self.is_client() {
            b.xor(public)
        } else {
            b.clone()
        }
    }

    // --- wire helpers ---

    fn elems_to_bytes(&self, v: &[u64]) -> Vec<u8> {
        let eb = self.cfg.elem_bytes();
        let mut out = Vec::with_capacity(v.len() * eb);
        for &x in v {
            out.extend_from_slice(&x.to_le_bytes()[..eb]);
        }
        out
    }

    fn bytes_to_elems(&self, bytes: &[u8], n: usize) -> Result<Vec<u64>> {
        let eb = self.cfg.elem_bytes();
        if bytes.len() != n * eb {
            return Err(Error::malformed(
                "message",
                format!("expected {} element bytes, got {}", n * eb, bytes.len()),
            ));
        }
        let mask = self.cfg.mask();
        let mut out = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(eb) {
            let mut raw = [0u8; 8];
            raw[..eb].copy_from_slice(chunk);
            out.push(u64::from_le_bytes(raw) & mask);
        }
        Ok(out)
    }

    // --- sharing and opening ---

    /// The owner splits its values; the peer receives its share blind.
    pub fn share_from(&mut self, owner: Role, vals: Option<&[u64]>, n: usize) -> Result<Vec<u64>> {
        if self.role() == owner {
            let vals = vals.expect("owner must supply values");
            assert_eq!(vals.len(), n);
            let mask = self.cfg.mask();
            let mine: Vec<u64> = (0..n).map(|_| self.rng.next_u64() & mask).collect();
            let theirs: Vec<u64> =
                vals.iter().zip(&mine).map(|(&x, &r)| self.cfg.sub(x, r)).collect();
            let bytes = self.elems_to_bytes(&theirs);
            self.ch.send(tag::INPUT_SHARE, &bytes)?;
            Ok(mine)
        } else {
            let bytes = self.ch.recv(tag::INPUT_SHARE)?;
            self.bytes_to_elems(&bytes, n)
        }
    }

    /// Reconstruct shared values toward one party only.
    pub fn reveal_to(&mut self, owner: Role, shares: &[u64]) -> Result<Option<Vec<u64>>> {
        if self.role() == owner {
            let bytes = self.ch.recv(tag::OUTPUT_SHARE)?;
            let theirs = self.bytes_to_elems(&bytes, shares.len())?;
            Ok(Some(self.add_vec(shares, &theirs)))
        } else {
            let bytes = self.elems_to_bytes(shares);
            self.ch.send(tag::OUTPUT_SHARE, &bytes)?;
            Ok(None)
        }
    }

    /// Open shares to both parties (one exchange). Callers must ensure the
    /// underlying value is masked; everything in this module is.
    pub fn open_elems(&mut self, msg_tag: u16, shares: &[u64]) -> Result<Vec<u64>> {
        let bytes = self.elems_to_bytes(shares);
        let theirs_bytes = self.ch.exchange(msg_tag, &bytes)?;
        let theirs = self.bytes_to_elems(&theirs_bytes, shares.len())?;
        self.counters.opens += shares.len() as u64;
        Ok(self.add_vec(shares, &theirs))
    }

    /// Open XOR-shared bits to both parties (one exchange).
    pub fn open_bits(&mut self, msg_tag: u16, shares: &Bits) -> Result<Bits> {
        let bytes = shares.to_bytes();
        let theirs_bytes = self.ch.exchange(msg_tag, &bytes)?;
        let theirs = Bits::from_bytes(shares.len(), &theirs_bytes)
            .ok_or_else(|| Error::malformed("message", "bad bit vector"))?;
        Ok(shares.xor(&theirs))
    }

    // --- multiplication ---

    /// Beaver multiplication, element-wise; product keeps whatever combined
    /// scale the inputs had. Exactly two ring elements per party per element,
    /// one round.
    pub fn mul_raw(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        assert_eq!(x.len(), y.len());
        let n = x.len();
        let cfg = self.cfg;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for _ in 0..n {
            let (ai, bi, ci) = self.pool.next_beaver()?;
            a.push(ai);
            b.push(bi);
            c.push(ci);
        }
        let mut de = Vec::with_capacity(2 * n);
        for i in 0..n {
            de.push(cfg.sub(x[i], a[i]));
        }
        for i in 0..n {
            de.push(cfg.sub(y[i], b[i]));
        }
        let opened = {
            let bytes = self.elems_to_bytes(&de);
            let theirs_bytes = self.ch.exchange(tag::MUL_OPEN, &bytes)?;
            let theirs = self.bytes_to_elems(&theirs_bytes, 2 * n)?;
            self.add_vec(&de, &theirs)
        };
        let (d, e) = opened.split_at(n);
        let client = self.is_client();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let mut zi = cfg.add(c[i], cfg.mul(d[i], b[i]));
            zi = cfg.add(zi, cfg.mul(e[i], a[i]));
            if client {
                zi = cfg.add(zi, cfg.mul(d[i], e[i]));
            }
            z.push(zi);
        }
        self.counters.mul += n as u64;
        Ok(z)
    }

    /// Product of two scale-frac tensors; the caller owes one truncation.
    pub fn mul_scaled(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        self.excess += x.len() as i64;
        self.mul_raw(x, y)
    }

    /// Scale-preserving fixed-point multiply: product then truncation.
    pub fn mul_fixed(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        let prod = self.mul_scaled(x, y)?;
        self.trunc(&prod, self.cfg.frac)
    }

    /// Multiply shares by an encoded (scale-frac) public constant; local, but
    /// the caller owes one truncation.
    pub fn scale_by_encoded(&mut self, x: &[u64], c: u64) -> Vec<u64> {
        self.excess += x.len() as i64;
        self.scale_vec(x, c)
    }

    /// Elementwise variant with one encoded constant per lane.
    pub fn scale_each_encoded(&mut self, x: &[u64], c: &[u64]) -> Vec<u64> {
        assert_eq!(x.len(), c.len());
        self.excess += x.len() as i64;
        x.iter().zip(c).map(|(&xi, &ci)| self.cfg.mul(xi, ci)).collect()
    }

    /// Record scale-2s products produced outside the share algebra (HE matmul
    /// coefficients) so the scale ledger still balances at the truncation.
    pub(crate) fn note_scaled_products(&mut self, n: usize) {
        self.excess += n as i64;
    }

    /// Scale-tracking assertion: every scaled product has been truncated.
    pub fn assert_scale_settled(&self) {
        debug_assert_eq!(self.excess, 0, "untruncated scaled products outstanding");
    }

    /// Matrix Beaver multiplication: X (k x m) times Y (m x n), one round.
    /// Product keeps combined scale; caller owes one truncation over k*n.
    pub fn mul_mat(
        &mut self,
        x: &[u64],
        y: &[u64],
        k: usize,
        m: usize,
        n: usize,
    ) -> Result<Vec<u64>> {
        assert_eq!(x.len(), k * m);
        assert_eq!(y.len(), m * n);
        let cfg = self.cfg;
        let triple = self.pool.next_mat(k, m, n)?;
        let mut de = Vec::with_capacity(k * m + m * n);
        for i in 0..k * m {
            de.push(cfg.sub(x[i], triple.a[i]));
        }
        for i in 0..m * n {
            de.push(cfg.sub(y[i], triple.b[i]));
        }
        let opened = {
            let bytes = self.elems_to_bytes(&de);
            let theirs_bytes = self.ch.exchange(tag::MATMUL_OPEN, &bytes)?;
            let theirs = self.bytes_to_elems(&theirs_bytes, de.len())?;
            self.add_vec(&de, &theirs)
        };
        let (dd, ee) = opened.split_at(k * m);
        let matmul = |a: &[u64], b: &[u64]| -> Vec<u64> {
            let mut out = vec![0u64; k * n];
            for i in 0..k {
                for t in 0..m {
                    let av = a[i * m + t];
                    if av == 0 {
                        continue;
                    }
                    for j in 0..n {
                        let o = &mut out[i * n + j];
                        *o = o.wrapping_add(av.wrapping_mul(b[t * n + j]));
                    }
                }
            }
            out
        };
        let db = matmul(dd, &triple.b);
        let ae = matmul(&triple.a, ee);
        let mut z = triple.c;
        for i in 0..k * n {
            z[i] = cfg.add(z[i], cfg.add(db[i] & cfg.mask(), ae[i] & cfg.mask()));
        }
        if self.is_client() {
            let de2 = matmul(dd, ee);
            for i in 0..k * n {
                z[i] = cfg.add(z[i], de2[i] & cfg.mask());
            }
        }
        self.counters.mat_mul += 1;
        self.excess += (k * n) as i64;
        Ok(z)
    }

    /// Multiply scale-frac shares by an unscaled shared bit (0/1 value, given
    /// additively). No truncation owed.
    pub fn mul_bit(&mut self, x: &[u64], bit_arith: &[u64]) -> Result<Vec<u64>> {
        self.mul_raw(x, bit_arith)
    }

    // --- boolean engine ---

    /// AND over raw share words (all 64 lanes live).
    pub fn and_word_vec(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        assert_eq!(x.len(), y.len());
        let n = x.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for _ in 0..n {
            let (ai, bi, ci) = self.pool.next_bool_word()?;
            a.push(ai);
            b.push(bi);
            c.push(ci);
        }
        let mut de_bytes = Vec::with_capacity(16 * n);
        for i in 0..n {
            de_bytes.extend_from_slice(&(x[i] ^ a[i]).to_le_bytes());
        }
        for i in 0..n {
            de_bytes.extend_from_slice(&(y[i] ^ b[i]).to_le_bytes());
        }
        let theirs = self.ch.exchange(tag::AND_OPEN, &de_bytes)?;
        if theirs.len() != de_bytes.len() {
            return Err(Error::malformed("message", "AND batch size mismatch"));
        }
        let client = self.is_client();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let mine_d = u64::from_le_bytes(de_bytes[i * 8..][..8].try_into().unwrap());
            let their_d = u64::from_le_bytes(theirs[i * 8..][..8].try_into().unwrap());
            let mine_e = u64::from_le_bytes(de_bytes[(n + i) * 8..][..8].try_into().unwrap());
            let their_e = u64::from_le_bytes(theirs[(n + i) * 8..][..8].try_into().unwrap());
            let d = mine_d ^ their_d;
            let e = mine_e ^ their_e;
            let mut zi = c[i] ^ (d & b[i]) ^ (e & a[i]);
            if client {
                zi ^= d & e;
            }
            z.push(zi);
        }
        self.counters.and_words += n as u64;
        Ok(z)
    }

    /// AND of packed shared bit vectors; wire carries ceil(len/8) bytes per
    /// operand per party (two bits per AND gate plus byte rounding).
    pub fn and_bits(&mut self, x: &Bits, y: &Bits) -> Result<Bits> {
        assert_eq!(x.len(), y.len());
        let len = x.len();
        let nw = x.words().len();
        let mut a = Vec::with_capacity(nw);
        let mut b = Vec::with_capacity(nw);
        let mut c = Vec::with_capacity(nw);
        for _ in 0..nw {
            let (ai, bi, ci) = self.pool.next_bool_word()?;
            a.push(ai);
            b.push(bi);
            c.push(ci);
        }
        let d_mine =
            Bits::from_words(len, x.words().iter().zip(&a).map(|(w, aw)| w ^ aw).collect());
        let e_mine =
            Bits::from_words(len, y.words().iter().zip(&b).map(|(w, bw)| w ^ bw).collect());
        let mut payload = d_mine.to_bytes();
        payload.extend_from_slice(&e_mine.to_bytes());
        let theirs = self.ch.exchange(tag::AND_OPEN, &payload)?;
        let half = len.div_ceil(8);
        if theirs.len() != 2 * half {
            return Err(Error::malformed("message", "AND batch size mismatch"));
        }
        let d_theirs = Bits::from_bytes(len, &theirs[..half])
            .ok_or_else(|| Error::malformed("message", "bad AND bits"))?;
        let e_theirs = Bits::from_bytes(len, &theirs[half..])
            .ok_or_else(|| Error::malformed("message", "bad AND bits"))?;
        let d = d_mine.xor(&d_theirs);
        let e = e_mine.xor(&e_theirs);
        let client = self.is_client();
        let words: Vec<u64> = (0..nw)
            .map(|i| {
                let mut z = c[i] ^ (d.words()[i] & b[i]) ^ (e.words()[i] & a[i]);
                if client {
                    z ^= d.words()[i] & e.words()[i];
                }
                z
            })
            .collect();
        self.counters.and_words += nw as u64;
        Ok(Bits::from_words(len, words))
    }

    // --- bit conversion ---

    /// XOR-shared bits -> additive shares of the same 0/1 values (unscaled).
    pub fn b2a(&mut self, bits: &Bits) -> Result<Vec<u64>> {
        let n = bits.len();
        let cfg = self.cfg;
        let mut beta_bits = Bits::zeros(n);
        let mut beta_a = Vec::with_capacity(n);
        for i in 0..n {
            let (bit, arith) = self.pool.next_b2a()?;
            beta_bits.set(i, bit);
            beta_a.push(arith);
        }
        let e = self.open_bits(tag::B2A_OPEN, &bits.xor(&beta_bits))?;
        let client = self.is_client();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            // t = e xor beta = e + beta - 2 e beta
            let ei = e.get(i);
            let mut z = if ei == 1 { cfg.neg(beta_a[i]) } else { beta_a[i] };
            if client && ei == 1 {
                z = cfg.add(z, 1);
            }
            out.push(z);
        }
        self.counters.b2a += n as u64;
        Ok(out)
    }

    // --- oblivious selection ---

    fn mux_inner(&mut self, sel: &Bits, v_share: &[u64]) -> Result<Vec<u64>> {
        let n = sel.len();
        assert_eq!(v_share.len(), n);
        let cfg = self.cfg;
        let mut beta_bits = Bits::zeros(n);
        let mut rec = Vec::with_capacity(n);
        for i in 0..n {
            let r = self.pool.next_mux()?;
            beta_bits.set(i, r.beta_bit);
            rec.push(r);
        }
        let e_mine = sel.xor(&beta_bits);
        let f_mine: Vec<u64> =
            v_share.iter().zip(&rec).map(|(&v, r)| cfg.sub(v, r.gamma_a)).collect();
        let mut payload = e_mine.to_bytes();
        payload.extend_from_slice(&self.elems_to_bytes(&f_mine));
        let theirs = self.ch.exchange(tag::MUX_OPEN, &payload)?;
        let ebytes = n.div_ceil(8);
        if theirs.len() != ebytes + n * cfg.elem_bytes() {
            return Err(Error::malformed("message", "mux batch size mismatch"));
        }
        let e_theirs = Bits::from_bytes(n, &theirs[..ebytes])
            .ok_or_else(|| Error::malformed("message", "bad mux bits"))?;
        let e = e_mine.xor(&e_theirs);
        let f_theirs = self.bytes_to_elems(&theirs[ebytes..], n)?;
        let f = self.add_vec(&f_mine, &f_theirs);
        let client = self.is_client();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let r = &rec[i];
            // t*v = e*f + e*gamma + (1-2e)(f*beta + beta*gamma)
            let ei = e.get(i);
            let mut zi = if ei == 1 { r.gamma_a } else { 0 };
            let inner = cfg.add(cfg.mul(f[i], r.beta_a), r.betagamma_a);
            zi = cfg.add(zi, if ei == 1 { cfg.neg(inner) } else { inner });
            if client && ei == 1 {
                zi = cfg.add(zi, f[i]);
            }
            z.push(zi);
        }
        self.counters.mux += n as u64;
        Ok(z)
    }

    /// sel ? v : 0 with v secret-shared.
    pub fn mux_share(&mut self, sel: &Bits, v: &[u64]) -> Result<Vec<u64>> {
        self.mux_inner(sel, v)
    }

    /// sel ? c : 0 with c public. The constant is lifted to a trivial share
    /// so cost and transcript shape are identical to the shared case.
    pub fn mux_const(&mut self, sel: &Bits, consts: &[u64]) -> Result<Vec<u64>> {
        let v: Vec<u64> = consts.iter().map(|&c| self.const_share(c)).collect();
        self.mux_inner(sel, &v)
    }
}

/// Run client and server closures over an in-process channel pair: first a
/// counting pass to derive the exact correlation budget, then the real pass
/// against dealt pools. Asserts that both parties consume identical budgets,
/// that the real run consumes the budget exactly, and that both endpoints
/// report identical channel statistics.
pub fn run_pair<T, U, FC, FS>(
    cfg: FixedConfig,
    seed: u64,
    client_fn: FC,
    server_fn: FS,
) -> Result<(T, U, ChannelStats)>
where
    FC: Fn(&mut Mpc) -> Result<T> + Send + Sync,
    FS: Fn(&mut Mpc) -> Result<U> + Send + Sync,
    T: Send,
    U: Send,
{
    let (_, _, budget_c, budget_s, _) = run_pair_once(cfg, seed, None, &client_fn, &server_fn)?;
    assert_eq!(budget_c, budget_s, "parties must consume identical correlation budgets");
    let (t, u, used_c, used_s, stats) =
        run_pair_once(cfg, seed, Some(&budget_c), &client_fn, &server_fn)?;
    assert_eq!(used_c, budget_c, "client run must consume its budget exactly");
    assert_eq!(used_s, budget_c, "server run must consume its budget exactly");
    Ok((t, u, stats))
}

/// Single counting pass: the exact per-kind correlation budget of a protocol
/// plus its channel statistics. Payloads and rounds depend only on public
/// shapes, so the dry run's counters equal the real run's.
pub fn estimate_pair<T, U, FC, FS>(
    cfg: FixedConfig,
    client_fn: FC,
    server_fn: FS,
) -> Result<(Budget, ChannelStats)>
where
    FC: Fn(&mut Mpc) -> Result<T> + Send + Sync,
    FS: Fn(&mut Mpc) -> Result<U> + Send + Sync,
    T: Send,
    U: Send,
{
    let (_, _, budget_c, budget_s, stats) = run_pair_once(cfg, 0, None, &client_fn, &server_fn)?;
    assert_eq!(budget_c, budget_s, "parties must consume identical correlation budgets");
    Ok((budget_c, stats))
}

fn run_pair_once<T, U, FC, FS>(
    cfg: FixedConfig,
    seed: u64,
    budget: Option<&Budget>,
    client_fn: &FC,
    server_fn: &FS,
) -> Result<(T, U, Budget, Budget, ChannelStats)>
where
    FC: Fn(&mut Mpc) -> Result<T> + Send + Sync,
    FS: Fn(&mut Mpc) -> Result<U> + Send + Sync,
    T: Send,
    U: Send,
{
    let (ch_c, ch_s) = crate::transport::inproc::pair();
    let (pool_c, pool_s) = match budget {
        Some(b) => crate::dealer::deal(cfg.ell, seed, b),
        None => (
            crate::dealer::counting_pool(Role::Client, cfg.ell),
            crate::dealer::counting_pool(Role::Server, cfg.ell),
        ),
    };
    let (res_c, res_s) = std::thread::scope(|scope| {
        let hc = scope.spawn(move || {
            let mut mpc = Mpc::new(cfg, Box::new(ch_c), pool_c, seed);
            let out = client_fn(&mut mpc)?;
            Ok::<_, Error>((out, mpc))
        });
        let hs = scope.spawn(move || {
            let mut mpc = Mpc::new(cfg, Box::new(ch_s), pool_s, seed);
            let out = server_fn(&mut mpc)?;
            Ok::<_, Error>((out, mpc))
        });
        let rc = hc.join();
        let rs = hs.join();
        match (rc, rs) {
            (Ok(rc), Ok(rs)) => (rc, rs),
            (Err(p), _) | (_, Err(p)) => std::panic::resume_unwind(p),
        }
    });
    // Snapshot counters only after both parties finished, so every message
    // is booked.
    let ((t, mpc_c), (u, mpc_s)) = crate::error::join_party_results(res_c, res_s)?;
    assert_eq!(mpc_c.stats(), mpc_s.stats(), "endpoints must agree on channel statistics");
    Ok((t, u, mpc_c.pool_used(), mpc_s.pool_used(), mpc_c.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::FRAMING_BYTES;
    use rand::rngs::StdRng;
    use rand::Rng;

    fn split(rng: &mut StdRng, cfg: FixedConfig, x: u64) -> (u64, u64) {
        let a = rng.random::<u64>() & cfg.mask();
        (a, cfg.sub(x, a))
    }

    fn split_bits(rng: &mut StdRng, bits: &[bool]) -> (Bits, Bits) {
        let a = Bits::from_words(
            bits.len(),
            (0..bits.len().div_ceil(64)).map(|_| rng.random()).collect(),
        );
        let mut b = Bits::from_bools(bits);
        b.xor_assign(&a);
        (a, b)
    }

    #[test]
    fn mul_matches_plain_wide_and_narrow() {
        let mut rng = StdRng::seed_from_u64(1);
        for ell in [64u32, 12] {
            let cfg = FixedConfig::new(ell, 2);
            let n = 64;
            let xs: Vec<u64> = (0..n).map(|_| rng.random::<u64>() & cfg.mask()).collect();
            let ys: Vec<u64> = (0..n).map(|_| rng.random::<u64>() & cfg.mask()).collect();
            let mut xc = Vec::new();
            let mut xsrv = Vec::new();
            let mut yc = Vec::new();
            let mut ysrv = Vec::new();
            for i in 0..n {
                let (a, b) = split(&mut rng, cfg, xs[i]);
                xc.push(a);
                xsrv.push(b);
                let (a, b) = split(&mut rng, cfg, ys[i]);
                yc.push(a);
                ysrv.push(b);
            }
            let (zc, zs, _) = run_pair(
                cfg,
                7,
                |mpc| mpc.mul_raw(&xc, &yc),
                |mpc| mpc.mul_raw(&xsrv, &ysrv),
            )
            .unwrap();
            for i in 0..n {
                assert_eq!(cfg.add(zc[i], zs[i]), cfg.mul(xs[i], ys[i]), "ell={ell} i={i}");
            }
        }
    }

    #[test]
    fn mul_wire_cost_is_two_elements_per_party_one_round() {
        let cfg = FixedConfig::DEFAULT;
        let n = 16usize;
        let (_, _, stats) = run_pair(
            cfg,
            3,
            |mpc| mpc.mul_raw(&vec![5u64; n], &vec![7u64; n]),
            |mpc| mpc.mul_raw(&vec![0u64; n], &vec![0u64; n]),
        )
        .unwrap();
        assert_eq!(stats.rounds, 1);
        assert_eq!(stats.payload_c_to_s, (2 * n * 8) as u64);
        assert_eq!(stats.payload_s_to_c, (2 * n * 8) as u64);
        assert_eq!(stats.total_framing(), 2 * FRAMING_BYTES);
    }

    #[test]
    fn mat_mul_matches_tensor_matmul() {
        let mut rng = StdRng::seed_from_u64(2);
        let cfg = FixedConfig::DEFAULT;
        let (k, m, n) = (3usize, 5usize, 4usize);
        let x: Vec<u64> = (0..k * m).map(|_| rng.random()).collect();
        let y: Vec<u64> = (0..m * n).map(|_| rng.random()).collect();
        let mut xc = Vec::new();
        let mut xs = Vec::new();
        let mut yc = Vec::new();
        let mut ys = Vec::new();
        for &v in &x {
            let (a, b) = split(&mut rng, cfg, v);
            xc.push(a);
            xs.push(b);
        }
        for &v in &y {
            let (a, b) = split(&mut rng, cfg, v);
            yc.push(a);
            ys.push(b);
        }
        let (zc, zs, stats) = run_pair(
            cfg,
            11,
            |mpc| {
                let z = mpc.mul_mat(&xc, &yc, k, m, n)?;
                mpc.excess = 0; // test consumes the raw product directly
                Ok(z)
            },
            |mpc| {
                let z = mpc.mul_mat(&xs, &ys, k, m, n)?;
                mpc.excess = 0;
                Ok(z)
            },
        )
        .unwrap();
        let xt = crate::fixed::FixedTensor::from_rows(k, m, x);
        let yt = crate::fixed::FixedTensor::from_rows(m, n, y);
        let want = xt.matmul(cfg, &yt);
        for i in 0..k * n {
            assert_eq!(cfg.add(zc[i], zs[i]), want.data[i]);
        }
        assert_eq!(stats.rounds, 1);
        assert_eq!(stats.payload_c_to_s, ((k * m + m * n) * 8) as u64);
    }

    #[test]
    fn and_bits_matches_plain() {
        let mut rng = StdRng::seed_from_u64(3);
        let cfg = FixedConfig::DEFAULT;
        let n = 200;
        let xb: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let yb: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let (xc, xs) = split_bits(&mut rng, &xb);
        let (yc, ys) = split_bits(&mut rng, &yb);
        let (zc, zs, stats) = run_pair(
            cfg,
            5,
            |mpc| mpc.and_bits(&xc, &yc),
            |mpc| mpc.and_bits(&xs, &ys),
        )
        .unwrap();
        let z = zc.xor(&zs);
        for i in 0..n {
            assert_eq!(z.get(i) == 1, xb[i] && yb[i], "lane {i}");
        }
        // two operands x ceil(200/8) bytes each way, one round
        assert_eq!(stats.rounds, 1);
        assert_eq!(stats.payload_c_to_s, 2 * 25);
    }

    #[test]
    fn b2a_matches_bits() {
        let mut rng = StdRng::seed_from_u64(4);
        let cfg = FixedConfig::new(64, 18);
        let n = 150;
        let vals: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let (bc, bs) = split_bits(&mut rng, &vals);
        let (zc, zs, _) = run_pair(cfg, 9, |mpc| mpc.b2a(&bc), |mpc| mpc.b2a(&bs)).unwrap();
        for i in 0..n {
            assert_eq!(cfg.add(zc[i], zs[i]), vals[i] as u64, "lane {i}");
        }
    }

    #[test]
    fn mux_share_and_const_match_plain() {
        let mut rng = StdRng::seed_from_u64(5);
        let cfg = FixedConfig::DEFAULT;
        let n = 120;
        let sel: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let vals: Vec<u64> = (0..n).map(|_| rng.random()).collect();
        let (sc, ss) = split_bits(&mut rng, &sel);
        let mut vc = Vec::new();
        let mut vs = Vec::new();
        for &v in &vals {
            let (a, b) = split(&mut rng, cfg, v);
            vc.push(a);
            vs.push(b);
        }
        let consts = vals.clone();
        let (zc, zs, stats) = run_pair(
            cfg,
            13,
            |mpc| {
                let shared = mpc.mux_share(&sc, &vc)?;
                let constant = mpc.mux_const(&sc, &consts)?;
                Ok((shared, constant))
            },
            |mpc| {
                let shared = mpc.mux_share(&ss, &vs)?;
                let constant = mpc.mux_const(&ss, &consts)?;
                Ok((shared, constant))
            },
        )
        .unwrap();
        for i in 0..n {
            let want = if sel[i] { vals[i] } else { 0 };
            assert_eq!(cfg.add(zc.0[i], zs.0[i]), want, "share lane {i}");
            assert_eq!(cfg.add(zc.1[i], zs.1[i]), want, "const lane {i}");
        }
        // Per mux element each party sends one ring element + one selector
        // bit (packed); cost identical for shared and constant variants.
        let per_call = (n * 8 + n.div_ceil(8)) as u64;
        assert_eq!(stats.payload_c_to_s, 2 * per_call);
        assert_eq!(stats.payload_s_to_c, 2 * per_call);
        assert_eq!(stats.rounds, 2);
    }

    #[test]
    fn share_and_reveal_roundtrip() {
        let cfg = FixedConfig::DEFAULT;
        let vals: Vec<u64> = vec![1, 2, 3, cfg.encode(-1.5)];
        let expect = vals.clone();
        let (out_c, _, _) = run_pair(
            cfg,
            21,
            move |mpc| {
                let mine = mpc.share_from(Role::Client, Some(&vals), 4)?;
                let back = mpc.reveal_to(Role::Client, &mine)?;
                Ok(back.unwrap())
            },
            |mpc| {
                let mine = mpc.share_from(Role::Client, None, 4)?;
                let back = mpc.reveal_to(Role::Client, &mine)?;
                assert!(back.is_none());
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(out_c, expect);
    }

    #[test]
    fn counters_track_invocations() {
        let cfg = FixedConfig::DEFAULT;
        let (cnt, _, _) = run_pair(
            cfg,
            2,
            |mpc| {
                mpc.mul_raw(&[1, 2], &[3, 4])?;
                mpc.b2a(&Bits::from_bools(&[true, false, true]))?;
                mpc.mux_const(&Bits::from_bools(&[true]), &[9])?;
                Ok(mpc.counters)
            },
            |mpc| {
                mpc.mul_raw(&[0, 0], &[0, 0])?;
                mpc.b2a(&Bits::zeros(3))?;
                mpc.mux_const(&Bits::zeros(1), &[9])?;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(cnt.mul, 2);
        assert_eq!(cnt.b2a, 3);
        assert_eq!(cnt.mux, 1);
    }
}
