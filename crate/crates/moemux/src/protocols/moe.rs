//! Mixture-of-experts layers. The sparse protocol hides which expert fired:
//! the client ships one encrypted one-hot gate, the server folds every
//! expert's packed weights into selected ciphertexts, and the compute phase
//! runs one expert's worth of traffic no matter how many experts exist. The
//! dense baseline evaluates every expert under plaintext weights and
//! combines with the same one-hot, so its traffic grows with the expert
//! count.

use super::gelu::secure_gelu;
use super::softmax::secure_softmax;
use super::{draw_mask, extract_block, left_tile_polys, right_tile_poly, SecureCtx};
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, FixedTensor};
use crate::he::poly;
use crate::he::Ciphertext;
use crate::plain;
use crate::transport::{tag, ChannelStats};

/// One expert's GeGLU weights: up projections W1 and V (m×d_ff) and the
/// down projection W2 (d_ff×m).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertWeights {
    pub w1: FixedTensor,
    pub v: FixedTensor,
    pub w2: FixedTensor,
}

/// Per-phase traffic of one MoE invocation. The client's deltas are
/// deterministic (every in-phase booking is ordered with its own steps); the
/// server's view may attribute in-flight client traffic to the next phase,
/// so reports read the client's copy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MoePhases {
    pub selection: ChannelStats,
    pub compute: ChannelStats,
}

fn check_experts(
    is_client: bool,
    experts: Option<&[ExpertWeights]>,
    n_exp: usize,
    m: usize,
    d_ff: usize,
) -> Result<()> {
    if is_client != experts.is_none() {
        return Err(Error::InvalidArgument("expert weights belong on the server".into()));
    }
    if let Some(experts) = experts {
        if experts.len() != n_exp {
            return Err(Error::shape(format!(
                "{} experts supplied, gate row has {n_exp}",
                experts.len()
            )));
        }
        for (i, e) in experts.iter().enumerate() {
            let up = e.w1.rows == m && e.w1.cols == d_ff && e.v.rows == m && e.v.cols == d_ff;
            let down = e.w2.rows == d_ff && e.w2.cols == m;
            if !up || !down {
                return Err(Error::shape(format!("expert {i} weight shapes do not match layer")));
            }
        }
    }
    Ok(())
}

/// Plain mirror of both MoE protocols on reconstructed values: route to the
/// argmax expert (ties to the lowest index), GeGLU through its weights, and
/// optionally scale by the softmax weight of the winner.
pub fn sparse_moe_plain(
    cfg: FixedConfig,
    x: &FixedTensor,
    gate_row: &[u64],
    experts: &[ExpertWeights],
    gate_scaling: bool,
) -> FixedTensor {
    let sel = plain::argmax_fixed(cfg, gate_row);
    let e = &experts[sel];
    let xw1 = plain::matmul_trunc(cfg, x, &e.w1);
    let xv = plain::matmul_trunc(cfg, x, &e.v);
    let glu: Vec<u64> = xw1
        .data
        .iter()
        .zip(&xv.data)
        .map(|(&a, &b)| cfg.mul_fixed(plain::gelu_fixed(cfg, a), b))
        .collect();
    let glu_t = FixedTensor::from_rows(x.rows, e.w1.cols, glu);
    let mut y = plain::matmul_trunc(cfg, &glu_t, &e.w2);
    if gate_scaling {
        let p = plain::softmax_fixed(cfg, gate_row)[sel];
        for v in y.data.iter_mut() {
            *v = cfg.mul_fixed(*v, p);
        }
    }
    y
}

/// Sparse MoE with a hidden top-1 route.
///
/// Selection: top-1 over the shared gate row, converted one-hot, client
/// encrypts its arithmetic share as one ciphertext, server folds in its own
/// share and compresses every expert's packed weight tiles into selected
/// ciphertexts. Compute: the usual two-round HE product pattern against the
/// selected tiles (ciphertext×ciphertext, one level), GeGLU on shares, and a
/// second product for the down projection. Traffic in the compute phase is
/// that of exactly one expert. Matches [`sparse_moe_plain`] exactly on the
/// reconstruction.
pub fn secure_sparse_moe(
    ctx: &mut SecureCtx,
    x_share: &FixedTensor,
    gate_share: &[u64],
    experts: Option<&[ExpertWeights]>,
    d_ff: usize,
    gate_scaling: bool,
) -> Result<(FixedTensor, MoePhases)> {
    let cfg = ctx.cfg();
    let (k, m) = (x_share.rows, x_share.cols);
    let n_exp = gate_share.len();
    if n_exp == 0 {
        return Err(Error::InvalidArgument("at least one expert required".into()));
    }
    let ring_n = ctx.he.params.ring_n;
    if n_exp > ring_n {
        return Err(Error::shape(format!("{n_exp} experts exceed gate slots {ring_n}")));
    }
    check_experts(ctx.mpc.is_client(), experts, n_exp, m, d_ff)?;
    let plan1 = poly::plan_matmul(k, m, d_ff, ring_n)?;
    let plan2 = poly::plan_matmul(k, d_ff, m, ring_n)?;

    let s0 = ctx.mpc.stats();

    // Selection phase.
    let (_, onehot) = ctx.mpc.top1(gate_share)?;
    let t_a = ctx.mpc.b2a(&onehot)?;
    let mut slots = vec![0u64; ring_n];
    slots[..n_exp].copy_from_slice(&t_a);

    let mut sel_w1: Vec<Ciphertext> = Vec::new();
    let mut sel_v: Vec<Ciphertext> = Vec::new();
    let mut sel_w2: Vec<Ciphertext> = Vec::new();
    if ctx.mpc.is_client() {
        let ct = {
            let SecureCtx { mpc, he } = &mut *ctx;
            he.encrypt(&slots, mpc.rng())?
        };
        ctx.send_cts(tag::GATE_CT, &[ct])?;
    } else {
        let gate_in = ctx.recv_cts(tag::GATE_CT, 1)?;
        let gate_ct = ctx.he.add_ct_pt(&gate_in[0], &slots)?;
        let experts = experts.unwrap();
        for c in 0..plan1.col_tiles() {
            let w1_polys: Vec<Vec<u64>> = experts
                .iter()
                .map(|e| right_tile_poly(&e.w1, &plan1, c, ring_n))
                .collect::<Result<_>>()?;
            sel_w1.push(ctx.he.weighted_select(&gate_ct, &w1_polys)?);
            let v_polys: Vec<Vec<u64>> = experts
                .iter()
                .map(|e| right_tile_poly(&e.v, &plan1, c, ring_n))
                .collect::<Result<_>>()?;
            sel_v.push(ctx.he.weighted_select(&gate_ct, &v_polys)?);
        }
        for c in 0..plan2.col_tiles() {
            let w2_polys: Vec<Vec<u64>> = experts
                .iter()
                .map(|e| right_tile_poly(&e.w2, &plan2, c, ring_n))
                .collect::<Result<_>>()?;
            sel_w2.push(ctx.he.weighted_select(&gate_ct, &w2_polys)?);
        }
    }

    let s1 = ctx.mpc.stats();

    // Compute phase: x against the selected up projections.
    let lefts1 = left_tile_polys(x_share, &plan1, ring_n)?;
    let mut xw1 = FixedTensor::zeros(k, d_ff);
    let mut xv = FixedTensor::zeros(k, d_ff);
    if ctx.mpc.is_client() {
        let mut cts = Vec::with_capacity(lefts1.len());
        {
            let SecureCtx { mpc, he } = &mut *ctx;
            for p in &lefts1 {
                cts.push(he.encrypt(p, mpc.rng())?);
            }
        }
        ctx.send_cts(tag::HE_CT, &cts)?;
        let resp = ctx.recv_cts(tag::HE_RESP, 2 * plan1.blocks())?;
        for (b, ct) in resp.iter().enumerate() {
            let vals = ctx.he.decrypt(ct)?;
            let (out, bb) = if b < plan1.blocks() {
                (&mut xw1, b)
            } else {
                (&mut xv, b - plan1.blocks())
            };
            extract_block(cfg, &plan1, &vals, bb / plan1.col_tiles(), bb % plan1.col_tiles(), out);
        }
    } else {
        let xin = ctx.recv_cts(tag::HE_CT, plan1.row_tiles())?;
        let mut x_cts = Vec::with_capacity(xin.len());
        for (r, ct) in xin.iter().enumerate() {
            x_cts.push(ctx.he.add_ct_pt(ct, &lefts1[r])?);
        }
        let mut resp = Vec::with_capacity(2 * plan1.blocks());
        for (out, sel) in [(&mut xw1, &sel_w1), (&mut xv, &sel_v)] {
            for r in 0..plan1.row_tiles() {
                for c in 0..plan1.col_tiles() {
                    let prod = ctx.he.mul_ct_ct(&x_cts[r], &sel[c])?;
                    let mask = draw_mask(ctx.mpc, ring_n);
                    extract_block(cfg, &plan1, &mask, r, c, out);
                    let neg: Vec<u64> = mask.iter().map(|&v| cfg.neg(v)).collect();
                    resp.push(ctx.he.add_ct_pt(&prod, &neg)?);
                }
            }
        }
        ctx.send_cts(tag::HE_RESP, &resp)?;
    }
    ctx.mpc.note_scaled_products(2 * k * d_ff);
    let mut both = xw1.data.clone();
    both.extend_from_slice(&xv.data);
    let both = ctx.mpc.trunc(&both, cfg.frac)?;
    xw1.data.copy_from_slice(&both[..k * d_ff]);
    xv.data.copy_from_slice(&both[k * d_ff..]);

    // GeGLU on shares.
    let act = secure_gelu(ctx.mpc, &xw1.data)?;
    let glu = ctx.mpc.mul_fixed(&act, &xv.data)?;
    let glu_t = FixedTensor::from_rows(k, d_ff, glu);

    // Selected down projection.
    let lefts2 = left_tile_polys(&glu_t, &plan2, ring_n)?;
    let mut y = FixedTensor::zeros(k, m);
    if ctx.mpc.is_client() {
        let mut cts = Vec::with_capacity(lefts2.len());
        {
            let SecureCtx { mpc, he } = &mut *ctx;
            for p in &lefts2 {
                cts.push(he.encrypt(p, mpc.rng())?);
            }
        }
        ctx.send_cts(tag::HE_CT, &cts)?;
        let resp = ctx.recv_cts(tag::HE_RESP, plan2.blocks())?;
        for (b, ct) in resp.iter().enumerate() {
            let vals = ctx.he.decrypt(ct)?;
            extract_block(cfg, &plan2, &vals, b / plan2.col_tiles(), b % plan2.col_tiles(), &mut y);
        }
    } else {
        let xin = ctx.recv_cts(tag::HE_CT, plan2.row_tiles())?;
        let mut glu_cts = Vec::with_capacity(xin.len());
        for (r, ct) in xin.iter().enumerate() {
            glu_cts.push(ctx.he.add_ct_pt(ct, &lefts2[r])?);
        }
        let mut resp = Vec::with_capacity(plan2.blocks());
        for r in 0..plan2.row_tiles() {
            for c in 0..plan2.col_tiles() {
                let prod = ctx.he.mul_ct_ct(&glu_cts[r], &sel_w2[c])?;
                let mask = draw_mask(ctx.mpc, ring_n);
                extract_block(cfg, &plan2, &mask, r, c, &mut y);
                let neg: Vec<u64> = mask.iter().map(|&v| cfg.neg(v)).collect();
                resp.push(ctx.he.add_ct_pt(&prod, &neg)?);
            }
        }
        ctx.send_cts(tag::HE_RESP, &resp)?;
    }
    ctx.mpc.note_scaled_products(k * m);
    y.data = ctx.mpc.trunc(&y.data, cfg.frac)?;

    if gate_scaling {
        let probs = secure_softmax(ctx.mpc, gate_share)?;
        let picked = ctx.mpc.mul_raw(&probs, &t_a)?;
        let p_sel = picked.iter().fold(0u64, |a, &b| cfg.add(a, b));
        y.data = ctx.mpc.mul_fixed(&y.data, &vec![p_sel; k * m])?;
    }

    let s2 = ctx.mpc.stats();
    Ok((y, MoePhases { selection: s1.since(&s0), compute: s2.since(&s1) }))
}

/// Dense baseline: every expert evaluated under plaintext weights
/// (ciphertext×plaintext products), outputs combined with the same
/// converted one-hot. Reconstruction equals [`sparse_moe_plain`]; traffic
/// grows linearly with the expert count.
pub fn naive_dense_moe(
    ctx: &mut SecureCtx,
    x_share: &FixedTensor,
    gate_share: &[u64],
    experts: Option<&[ExpertWeights]>,
    d_ff: usize,
    gate_scaling: bool,
) -> Result<(FixedTensor, MoePhases)> {
    let cfg = ctx.cfg();
    let (k, m) = (x_share.rows, x_share.cols);
    let n_exp = gate_share.len();
    if n_exp == 0 {
        return Err(Error::InvalidArgument("at least one expert required".into()));
    }
    let ring_n = ctx.he.params.ring_n;
    check_experts(ctx.mpc.is_client(), experts, n_exp, m, d_ff)?;
    let plan1 = poly::plan_matmul(k, m, d_ff, ring_n)?;
    let plan2 = poly::plan_matmul(k, d_ff, m, ring_n)?;

    let s0 = ctx.mpc.stats();
    let (_, onehot) = ctx.mpc.top1(gate_share)?;
    let t_a = ctx.mpc.b2a(&onehot)?;
    let s1 = ctx.mpc.stats();

    // Up projections for every expert off one set of input ciphertexts.
    let lefts1 = left_tile_polys(x_share, &plan1, ring_n)?;
    let mut xw1: Vec<FixedTensor> = (0..n_exp).map(|_| FixedTensor::zeros(k, d_ff)).collect();
    let mut xv: Vec<FixedTensor> = (0..n_exp).map(|_| FixedTensor::zeros(k, d_ff)).collect();
    if ctx.mpc.is_client() {
        let mut cts = Vec::with_capacity(lefts1.len());
        {
            let SecureCtx { mpc, he } = &mut *ctx;
            for p in &lefts1 {
                cts.push(he.encrypt(p, mpc.rng())?);
            }
        }
        ctx.send_cts(tag::HE_CT, &cts)?;
        let resp = ctx.recv_cts(tag::HE_RESP, 2 * n_exp * plan1.blocks())?;
        for (i, ct) in resp.iter().enumerate() {
            let vals = ctx.he.decrypt(ct)?;
            let (half, rest) = (i / (n_exp * plan1.blocks()), i % (n_exp * plan1.blocks()));
            let (e, b) = (rest / plan1.blocks(), rest % plan1.blocks());
            let out = if half == 0 { &mut xw1[e] } else { &mut xv[e] };
            extract_block(cfg, &plan1, &vals, b / plan1.col_tiles(), b % plan1.col_tiles(), out);
        }
    } else {
        let xin = ctx.recv_cts(tag::HE_CT, plan1.row_tiles())?;
        let mut x_cts = Vec::with_capacity(xin.len());
        for (r, ct) in xin.iter().enumerate() {
            x_cts.push(ctx.he.add_ct_pt(ct, &lefts1[r])?);
        }
        let experts = experts.unwrap();
        let mut resp = Vec::with_capacity(2 * n_exp * plan1.blocks());
        for half in 0..2 {
            for (e, ex) in experts.iter().enumerate() {
                let wsel = if half == 0 { &ex.w1 } else { &ex.v };
                let out = if half == 0 { &mut xw1[e] } else { &mut xv[e] };
                for r in 0..plan1.row_tiles() {
                    for c in 0..plan1.col_tiles() {
                        let wpoly = right_tile_poly(wsel, &plan1, c, ring_n)?;
                        let prod = ctx.he.mul_ct_pt(&x_cts[r], &wpoly)?;
                        let mask = draw_mask(ctx.mpc, ring_n);
                        extract_block(cfg, &plan1, &mask, r, c, out);
                        let neg: Vec<u64> = mask.iter().map(|&v| cfg.neg(v)).collect();
                        resp.push(ctx.he.add_ct_pt(&prod, &neg)?);
                    }
                }
            }
        }
        ctx.send_cts(tag::HE_RESP, &resp)?;
    }
    ctx.mpc.note_scaled_products(2 * n_exp * k * d_ff);
    let mut both = Vec::with_capacity(2 * n_exp * k * d_ff);
    for t in &xw1 {
        both.extend_from_slice(&t.data);
    }
    for t in &xv {
        both.extend_from_slice(&t.data);
    }
    let both = ctx.mpc.trunc(&both, cfg.frac)?;

    // GeGLU across all experts in one batch.
    let half = n_exp * k * d_ff;
    let act = secure_gelu(ctx.mpc, &both[..half])?;
    let glu = ctx.mpc.mul_fixed(&act, &both[half..])?;

    // Down projection per expert.
    let mut y_all: Vec<FixedTensor> = (0..n_exp).map(|_| FixedTensor::zeros(k, m)).collect();
    if ctx.mpc.is_client() {
        let mut cts = Vec::with_capacity(n_exp * plan2.row_tiles());
        for e in 0..n_exp {
            let glu_t =
                FixedTensor::from_rows(k, d_ff, glu[e * k * d_ff..(e + 1) * k * d_ff].to_vec());
            let lefts2 = left_tile_polys(&glu_t, &plan2, ring_n)?;
            let SecureCtx { mpc, he } = &mut *ctx;
            for p in &lefts2 {
                cts.push(he.encrypt(p, mpc.rng())?);
            }
        }
        ctx.send_cts(tag::HE_CT, &cts)?;
        let resp = ctx.recv_cts(tag::HE_RESP, n_exp * plan2.blocks())?;
        for (i, ct) in resp.iter().enumerate() {
            let vals = ctx.he.decrypt(ct)?;
            let (e, b) = (i / plan2.blocks(), i % plan2.blocks());
            extract_block(
                cfg,
                &plan2,
                &vals,
                b / plan2.col_tiles(),
                b % plan2.col_tiles(),
                &mut y_all[e],
            );
        }
    } else {
        let xin = ctx.recv_cts(tag::HE_CT, n_exp * plan2.row_tiles())?;
        let experts = experts.unwrap();
        let mut resp = Vec::with_capacity(n_exp * plan2.blocks());
        for (e, ex) in experts.iter().enumerate() {
            let mut glu_cts = Vec::with_capacity(plan2.row_tiles());
            let glu_t =
                FixedTensor::from_rows(k, d_ff, glu[e * k * d_ff..(e + 1) * k * d_ff].to_vec());
            let lefts2 = left_tile_polys(&glu_t, &plan2, ring_n)?;
            for (r, ct) in xin[e * plan2.row_tiles()..(e + 1) * plan2.row_tiles()]
                .iter()
                .enumerate()
            {
                glu_cts.push(ctx.he.add_ct_pt(ct, &lefts2[r])?);
            }
            for r in 0..plan2.row_tiles() {
                for c in 0..plan2.col_tiles() {
                    let wpoly = right_tile_poly(&ex.w2, &plan2, c, ring_n)?;
                    let prod = ctx.he.mul_ct_pt(&glu_cts[r], &wpoly)?;
                    let mask = draw_mask(ctx.mpc, ring_n);
                    extract_block(cfg, &plan2, &mask, r, c, &mut y_all[e]);
                    let neg: Vec<u64> = mask.iter().map(|&v| cfg.neg(v)).collect();
                    resp.push(ctx.he.add_ct_pt(&prod, &neg)?);
                }
            }
        }
        ctx.send_cts(tag::HE_RESP, &resp)?;
    }
    ctx.mpc.note_scaled_products(n_exp * k * m);
    let mut ys = Vec::with_capacity(n_exp * k * m);
    for t in &y_all {
        ys.extend_from_slice(&t.data);
    }
    let ys = ctx.mpc.trunc(&ys, cfg.frac)?;

    // Combine with the one-hot: y = Σ_e t_e · y_e.
    let mut rep = Vec::with_capacity(n_exp * k * m);
    for &t in &t_a {
        rep.extend(std::iter::repeat(t).take(k * m));
    }
    let picked = ctx.mpc.mul_raw(&ys, &rep)?;
    let mut y = FixedTensor::zeros(k, m);
    for e in 0..n_exp {
        for i in 0..k * m {
            y.data[i] = cfg.add(y.data[i], picked[e * k * m + i]);
        }
    }

    if gate_scaling {
        let probs = secure_softmax(ctx.mpc, gate_share)?;
        let picked = ctx.mpc.mul_raw(&probs, &t_a)?;
        let p_sel = picked.iter().fold(0u64, |a, &b| cfg.add(a, b));
        y.data = ctx.mpc.mul_fixed(&y.data, &vec![p_sel; k * m])?;
    }

    let s2 = ctx.mpc.stats();
    Ok((y, MoePhases { selection: s1.since(&s0), compute: s2.since(&s1) }))
}
