//! Composite secure protocols assembled from the share algebra and the HE
//! engine: plaintext-weight matrix products, the fused piecewise GeLU,
//! exponential/softmax, layer normalization, attention, and the sparse and
//! dense mixture-of-experts layers.
//!
//! Conventions shared by every protocol in this tree:
//!
//! * Both parties call the same function inside a [`run_secure_pair`]
//!   session. Server-held plaintext (weights) is passed as `Some(..)` by the
//!   server and `None` by the client; shapes are public arguments.
//! * Values flow at scale 2^frac. Raw double-scale products are registered
//!   on the scale ledger and truncated before they leave a protocol.
//! * Traffic and correlated-randomness consumption depend only on public
//!   shapes, never on data, so a counting-pool dry run reproduces the exact
//!   byte, round, and record costs of a real execution.
//! * Phase deltas (`ChannelStats::since`) are read on the client, whose
//!   bookings are totally ordered with its own protocol steps; the server
//!   may observe in-flight client bookings at a snapshot point.

pub mod attention;
pub mod gelu;
pub mod moe;
pub mod norm;
pub mod softmax;

pub use attention::{attention_plain, secure_attention, AttnWeights};
pub use gelu::{naive_piecewise_gelu, secure_gelu};
pub use moe::{naive_dense_moe, secure_sparse_moe, sparse_moe_plain, ExpertWeights, MoePhases};
pub use norm::{secure_layernorm, secure_rsqrt, LnParams};
pub use softmax::{secure_exp, secure_recip, secure_softmax};

use rand_chacha::rand_core::RngCore;

use crate::dealer::Budget;
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, FixedTensor};
use crate::he::poly::{self, TilePlan};
use crate::he::{Ciphertext, Engine, He, HeParams};
use crate::sharing::Mpc;
use crate::transport::{tag, ChannelStats};

/// HE engine selection plus parameters for one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeOpts {
    pub engine: Engine,
    pub params: HeParams,
}

impl HeOpts {
    pub const DEFAULT: HeOpts = HeOpts { engine: Engine::Semantic, params: HeParams::DEFAULT };
}

/// One party's full session state: the share algebra plus its HE half.
///
/// The client side owns the HE key; the server side only packs, evaluates,
/// and masks. Sessions built on a counting pool set `skip_compute` so dry
/// runs stay cheap while keeping ciphertext sizes and engine discipline.
pub struct SecureCtx<'a> {
    pub mpc: &'a mut Mpc,
    pub he: He,
}

impl<'a> SecureCtx<'a> {
    pub fn new(mpc: &'a mut Mpc, opts: HeOpts) -> Result<SecureCtx<'a>> {
        if opts.params.pt_bits != mpc.cfg.ell {
            return Err(Error::ConfigMismatch(format!(
                "HE plaintext width {} does not match share ring width {}",
                opts.params.pt_bits, mpc.cfg.ell
            )));
        }
        let mut he = if mpc.is_client() {
            He::client(opts.engine, opts.params, mpc.rng())?
        } else {
            He::server(opts.engine, opts.params)?
        };
        he.skip_compute = mpc.pool().is_counting();
        Ok(SecureCtx { mpc, he })
    }

    pub fn cfg(&self) -> FixedConfig {
        self.mpc.cfg
    }

    /// Sends a batch of equal-size ciphertexts as one message.
    pub(crate) fn send_cts(&mut self, msg_tag: u16, cts: &[Ciphertext]) -> Result<()> {
        let mut bytes = Vec::with_capacity(cts.len() * self.he.params.ct_bytes());
        for ct in cts {
            bytes.extend_from_slice(&ct.serialize());
        }
        self.mpc.counters.he_cts += cts.len() as u64;
        self.mpc.channel().send(msg_tag, &bytes)
    }

    /// Receives a batch sent by [`send_cts`]; the count is shape-derived.
    pub(crate) fn recv_cts(&mut self, msg_tag: u16, count: usize) -> Result<Vec<Ciphertext>> {
        let bytes = self.mpc.channel().recv(msg_tag)?;
        if msg_tag == tag::HE_RESP {
            self.mpc.counters.resp_ct_bytes += bytes.len() as u64;
        }
        let sz = self.he.params.ct_bytes();
        if bytes.len() != count * sz {
            return Err(Error::malformed(
                "ciphertext batch",
                format!("expected {count} ciphertexts / {} bytes, got {}", count * sz, bytes.len()),
            ));
        }
        bytes.chunks_exact(sz).map(Ciphertext::deserialize).collect()
    }
}

/// Left-operand packings of this party's x share, one polynomial per row
/// tile, all padded to the plan's uniform column width.
pub(crate) fn left_tile_polys(
    x: &FixedTensor,
    plan: &TilePlan,
    ring_n: usize,
) -> Result<Vec<Vec<u64>>> {
    (0..plan.row_tiles())
        .map(|r| {
            let tile = x.submatrix(plan.rows_of(r), 0..x.cols);
            poly::encode_left(&tile, plan.n_tile, ring_n)
        })
        .collect()
}

/// Column tile `c` of W, zero-padded on the right to the plan's tile width.
pub(crate) fn right_tile(w: &FixedTensor, plan: &TilePlan, c: usize) -> FixedTensor {
    let cols = plan.cols_of(c);
    let mut out = FixedTensor::zeros(w.rows, plan.n_tile);
    for r in 0..w.rows {
        for (j, cc) in cols.clone().enumerate() {
            out.set(r, j, w.at(r, cc));
        }
    }
    out
}

/// Right-operand packing of column tile `c` of W.
pub(crate) fn right_tile_poly(
    w: &FixedTensor,
    plan: &TilePlan,
    c: usize,
    ring_n: usize,
) -> Result<Vec<u64>> {
    poly::encode_right(&right_tile(w, plan, c), plan.k_tile, ring_n)
}

/// Reads block (r, c)'s product entries out of a decrypted (or mask)
/// polynomial into the full result tensor.
pub(crate) fn extract_block(
    cfg: FixedConfig,
    plan: &TilePlan,
    vals: &[u64],
    r: usize,
    c: usize,
    out: &mut FixedTensor,
) {
    let cols = plan.cols_of(c);
    for (i, rr) in plan.rows_of(r).enumerate() {
        for (j, cc) in cols.clone().enumerate() {
            let idx = i * plan.m * plan.n_tile + j * plan.m + (plan.m - 1);
            out.set(rr, cc, vals[idx] & cfg.mask());
        }
    }
}

/// Uniform response mask over the full coefficient vector.
pub(crate) fn draw_mask(mpc: &mut Mpc, ring_n: usize) -> Vec<u64> {
    let mask = mpc.cfg.mask();
    (0..ring_n).map(|_| mpc.rng().next_u64() & mask).collect()
}

/// ⟨x⟩ (k×m) times server-plaintext W (m×n) → raw scale-2^2s shares (k×n).
///
/// The client ships one packed ciphertext per row tile; the server folds in
/// its own x share, multiplies by each packed column tile of W, subtracts a
/// uniform mask, and returns one response ciphertext per block. Two rounds.
fn matmul_pt_raw(
    ctx: &mut SecureCtx,
    x_share: &FixedTensor,
    w: Option<&FixedTensor>,
    n: usize,
) -> Result<FixedTensor> {
    let cfg = ctx.cfg();
    let (k, m) = (x_share.rows, x_share.cols);
    let ring_n = ctx.he.params.ring_n;
    let plan = poly::plan_matmul(k, m, n, ring_n)?;
    let lefts = left_tile_polys(x_share, &plan, ring_n)?;
    let mut out = FixedTensor::zeros(k, n);

    if ctx.mpc.is_client() {
        let mut cts = Vec::with_capacity(lefts.len());
        {
            let SecureCtx { mpc, he } = &mut *ctx;
            for p in &lefts {
                cts.push(he.encrypt(p, mpc.rng())?);
            }
        }
        ctx.send_cts(tag::HE_CT, &cts)?;
        let resp = ctx.recv_cts(tag::HE_RESP, plan.blocks())?;
        for (b, ct) in resp.iter().enumerate() {
            let vals = ctx.he.decrypt(ct)?;
            extract_block(cfg, &plan, &vals, b / plan.col_tiles(), b % plan.col_tiles(), &mut out);
        }
    } else {
        let w = w.ok_or_else(|| Error::InvalidArgument("server must supply weights".into()))?;
        if w.rows != m || w.cols != n {
            return Err(Error::shape(format!(
                "weight shape {}x{} does not match product {}x{}·{}x{}",
                w.rows, w.cols, k, m, m, n
            )));
        }
        let xin = ctx.recv_cts(tag::HE_CT, plan.row_tiles())?;
        let mut x_cts = Vec::with_capacity(xin.len());
        for (r, ct) in xin.iter().enumerate() {
            x_cts.push(ctx.he.add_ct_pt(ct, &lefts[r])?);
        }
        let rights: Vec<Vec<u64>> = (0..plan.col_tiles())
            .map(|c| right_tile_poly(w, &plan, c, ring_n))
            .collect::<Result<_>>()?;
        let mut resp = Vec::with_capacity(plan.blocks());
        for r in 0..plan.row_tiles() {
            for c in 0..plan.col_tiles() {
                let prod = ctx.he.mul_ct_pt(&x_cts[r], &rights[c])?;
                let mask = draw_mask(ctx.mpc, ring_n);
                extract_block(cfg, &plan, &mask, r, c, &mut out);
                let neg: Vec<u64> = mask.iter().map(|&v| cfg.neg(v)).collect();
                resp.push(ctx.he.add_ct_pt(&prod, &neg)?);
            }
        }
        ctx.send_cts(tag::HE_RESP, &resp)?;
    }
    ctx.mpc.note_scaled_products(k * n);
    Ok(out)
}

/// Fixed-point product of a shared k×m input with server-plaintext m×n
/// weights, truncated back to scale 2^frac.
pub fn secure_matmul_pt(
    ctx: &mut SecureCtx,
    x_share: &FixedTensor,
    w: Option<&FixedTensor>,
    n: usize,
) -> Result<FixedTensor> {
    let raw = matmul_pt_raw(ctx, x_share, w, n)?;
    let data = ctx.mpc.trunc(&raw.data, ctx.cfg().frac)?;
    Ok(FixedTensor::from_rows(raw.rows, raw.cols, data))
}

/// Runs a client closure against a server closure over an in-process pair of
/// sessions that include the HE half. See [`crate::sharing::run_pair`].
pub fn run_secure_pair<T, U, FC, FS>(
    cfg: FixedConfig,
    opts: HeOpts,
    seed: u64,
    client_fn: FC,
    server_fn: FS,
) -> Result<(T, U, ChannelStats)>
where
    FC: Fn(&mut SecureCtx) -> Result<T> + Send + Sync,
    FS: Fn(&mut SecureCtx) -> Result<U> + Send + Sync,
    T: Send,
    U: Send,
{
    crate::sharing::run_pair(
        cfg,
        seed,
        |mpc| {
            let mut ctx = SecureCtx::new(mpc, opts)?;
            client_fn(&mut ctx)
        },
        |mpc| {
            let mut ctx = SecureCtx::new(mpc, opts)?;
            server_fn(&mut ctx)
        },
    )
}

/// Counting-pool dry run of a secure pair: returns the exact correlated
/// randomness budget and channel totals without any real randomness or (for
/// the semantic engine) ciphertext arithmetic.
pub fn estimate_secure_pair<T, U, FC, FS>(
    cfg: FixedConfig,
    opts: HeOpts,
    client_fn: FC,
    server_fn: FS,
) -> Result<(Budget, ChannelStats)>
where
    FC: Fn(&mut SecureCtx) -> Result<T> + Send + Sync,
    FS: Fn(&mut SecureCtx) -> Result<U> + Send + Sync,
    T: Send,
    U: Send,
{
    crate::sharing::estimate_pair(
        cfg,
        |mpc| {
            let mut ctx = SecureCtx::new(mpc, opts)?;
            client_fn(&mut ctx)
        },
        |mpc| {
            let mut ctx = SecureCtx::new(mpc, opts)?;
            server_fn(&mut ctx)
        },
    )
}
