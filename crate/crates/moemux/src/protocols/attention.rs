//! Multi-head self-attention over shares: HE products for the projections,
//! Beaver matrix products for QKᵀ and probs·V, and one softmax per score
//! row. The 1/√d_h factor is folded into the score truncation so each head
//! spends a single truncation on its logits.

use super::{secure_matmul_pt, secure_softmax, SecureCtx};
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, FixedTensor};
use crate::plain;

/// Server-held projection weights, each d×d.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnWeights {
    pub wq: FixedTensor,
    pub wk: FixedTensor,
    pub wv: FixedTensor,
    pub wo: FixedTensor,
}

/// Plain mirror of [`secure_attention`] on reconstructed values.
pub fn attention_plain(
    cfg: FixedConfig,
    x: &FixedTensor,
    w: &AttnWeights,
    heads: usize,
) -> FixedTensor {
    let (k, d) = (x.rows, x.cols);
    let dh = d / heads;
    let q = plain::matmul_trunc(cfg, x, &w.wq);
    let kk = plain::matmul_trunc(cfg, x, &w.wk);
    let v = plain::matmul_trunc(cfg, x, &w.wv);
    let scale = cfg.encode(1.0 / (dh as f64).sqrt());
    let mut ctx_all = FixedTensor::zeros(k, d);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.submatrix(0..k, cols.clone());
        let kh = kk.submatrix(0..k, cols.clone());
        let vh = v.submatrix(0..k, cols.clone());
        let raw = qh.matmul(cfg, &kh.transpose());
        let mut probs = FixedTensor::zeros(k, k);
        for i in 0..k {
            let row: Vec<u64> = (0..k)
                .map(|j| cfg.truncate_plain(cfg.mul(raw.at(i, j), scale), 2 * cfg.frac))
                .collect();
            for (j, &p) in plain::softmax_fixed(cfg, &row).iter().enumerate() {
                probs.set(i, j, p);
            }
        }
        let ctx_h = plain::matmul_trunc(cfg, &probs, &vh);
        for i in 0..k {
            for (jj, j) in cols.clone().enumerate() {
                ctx_all.set(i, j, ctx_h.at(i, jj));
            }
        }
    }
    plain::matmul_trunc(cfg, &ctx_all, &w.wo)
}

/// Multi-head attention on a shared k×d input. Weights are `Some` on the
/// server. Per head, QKᵀ·(1/√d_h) reaches scale 2^3s before one truncation;
/// with the model's |γ|, |β| ≤ 0.1 normalization bound the logits stay far
/// inside the 2^(63−3s) headroom. Matches [`attention_plain`] exactly on the
/// reconstruction.
pub fn secure_attention(
    ctx: &mut SecureCtx,
    x_share: &FixedTensor,
    w: Option<&AttnWeights>,
    heads: usize,
) -> Result<FixedTensor> {
    let cfg = ctx.cfg();
    let (k, d) = (x_share.rows, x_share.cols);
    if heads == 0 || d % heads != 0 {
        return Err(Error::InvalidArgument(format!("{heads} heads do not divide width {d}")));
    }
    let dh = d / heads;
    let q = secure_matmul_pt(ctx, x_share, w.map(|w| &w.wq), d)?;
    let kk = secure_matmul_pt(ctx, x_share, w.map(|w| &w.wk), d)?;
    let v = secure_matmul_pt(ctx, x_share, w.map(|w| &w.wv), d)?;

    let scale = cfg.encode(1.0 / (dh as f64).sqrt());
    let mut ctx_all = FixedTensor::zeros(k, d);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.submatrix(0..k, cols.clone());
        let kht = kk.submatrix(0..k, cols.clone()).transpose();
        let vh = v.submatrix(0..k, cols.clone());

        let raw = ctx.mpc.mul_mat(&qh.data, &kht.data, k, dh, k)?;
        let scaled = ctx.mpc.scale_by_encoded(&raw, scale);
        let scores = ctx.mpc.trunc(&scaled, 2 * cfg.frac)?;

        let mut probs = Vec::with_capacity(k * k);
        for i in 0..k {
            probs.extend(secure_softmax(ctx.mpc, &scores[i * k..(i + 1) * k])?);
        }

        let ctx_raw = ctx.mpc.mul_mat(&probs, &vh.data, k, k, dh)?;
        let ctx_h = ctx.mpc.trunc(&ctx_raw, cfg.frac)?;
        for i in 0..k {
            for (jj, j) in cols.clone().enumerate() {
                ctx_all.set(i, j, ctx_h[i * dh + jj]);
            }
        }
    }
    secure_matmul_pt(ctx, &ctx_all, w.map(|w| &w.wo), d)
}
