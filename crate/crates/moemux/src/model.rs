//! Toy pre-norm transformer with mixture-of-experts feed-forward blocks:
//! deterministic weight generation, directory (de)serialization, a bit-exact
//! plaintext mirror, an approximation-aware float64 shadow, and the two-party
//! secure forward pass with per-layer traffic traces.
//!
//! Per layer (pre-norm residual stream):
//!
//! ```text
//! x += Attention(LayerNorm1(x))
//! g  = column sums of LayerNorm2(x) · W_gate    (one gate row per layer)
//! x += MoE(LayerNorm2(x), g)                    (top-1 routed GeGLU expert)
//! ```
//!
//! The gate is a plaintext-weight projection whose per-token scores are
//! summed over the sequence locally, so each layer routes the whole batch
//! through a single expert and the selection payload stays one ciphertext.
//! Every weight, including the LayerNorm scale and shift, is drawn uniformly
//! from [-0.1, 0.1]; that bound keeps attention logits and MoE activations
//! far inside the single-truncation headroom of the share algebra.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dealer::Budget;
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, FixedTensor};
use crate::plain;
use crate::protocols::{
    attention_plain, estimate_secure_pair, naive_dense_moe, run_secure_pair, secure_attention,
    secure_layernorm, secure_matmul_pt, secure_sparse_moe, sparse_moe_plain, AttnWeights,
    ExpertWeights, HeOpts, LnParams, MoePhases, SecureCtx,
};
use crate::sharing::OpCounters;
use crate::transport::{ChannelStats, Role};

/// Architecture of the toy transformer. Public knowledge on both sides;
/// cross-checked against the server's weight store at session start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub n_experts: usize,
    pub k_experts: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    /// Benchmark model: 64 wide, 128 hidden, four heads, two layers, eight
    /// tokens, top-1 routing over `n_experts` experts.
    pub fn toy(n_experts: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            d_ff: 128,
            num_heads: 4,
            num_layers: 2,
            n_experts,
            k_experts: 1,
            seq_len: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 {
            return Err(Error::InvalidArgument(
                "layer normalization needs d_model >= 2".into(),
            ));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} heads do not divide d_model {}",
                self.num_heads, self.d_model
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::InvalidArgument("d_ff must be positive".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::InvalidArgument("at least one layer required".into()));
        }
        if self.n_experts == 0 {
            return Err(Error::InvalidArgument("at least one expert required".into()));
        }
        if self.k_experts != 1 {
            return Err(Error::InvalidArgument(format!(
                "only top-1 routing is supported, got k_experts = {}",
                self.k_experts
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidArgument("at least one token required".into()));
        }
        Ok(())
    }
}

/// Which MoE protocol drives the feed-forward block of every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoeProtocol {
    /// Hidden top-1 route, compute traffic independent of the expert count.
    Sparse,
    /// Dense baseline: every expert evaluated, one-hot combined.
    Dense,
}

impl MoeProtocol {
    pub fn as_str(self) -> &'static str {
        match self {
            MoeProtocol::Sparse => "sparse",
            MoeProtocol::Dense => "dense",
        }
    }
}

impl fmt::Display for MoeProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MoeProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<MoeProtocol> {
        match s {
            // "secmoe" is accepted as a legacy spelling of the sparse protocol.
            "sparse" | "secmoe" => Ok(MoeProtocol::Sparse),
            "dense" => Ok(MoeProtocol::Dense),
            other => Err(Error::InvalidArgument(format!(
                "unknown protocol {other:?} (expected sparse|dense)"
            ))),
        }
    }
}

/// All weights of one transformer layer, held by the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerWeights {
    pub attn: AttnWeights,
    pub ln1: LnParams,
    pub ln2: LnParams,
    /// Gate projection, `d_model x n_experts`.
    pub gate: FixedTensor,
    pub experts: Vec<ExpertWeights>,
}

/// A complete generated model: architecture, fixed-point geometry, the seed
/// it was drawn from, and the per-layer weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightStore {
    pub config: ModelConfig,
    pub fixed: FixedConfig,
    pub seed: u64,
    pub layers: Vec<LayerWeights>,
}

fn uniform_weight(rng: &mut ChaCha20Rng, cfg: FixedConfig) -> u64 {
    let f = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    cfg.encode(0.2 * f - 0.1)
}

fn gen_vec(rng: &mut ChaCha20Rng, cfg: FixedConfig, n: usize) -> Vec<u64> {
    (0..n).map(|_| uniform_weight(rng, cfg)).collect()
}

fn gen_tensor(rng: &mut ChaCha20Rng, cfg: FixedConfig, rows: usize, cols: usize) -> FixedTensor {
    FixedTensor::from_rows(rows, cols, gen_vec(rng, cfg, rows * cols))
}

/// Draws every tensor of the model from one seeded stream, in a fixed order
/// (per layer: wq, wk, wv, wo, ln1 scale/shift, ln2 scale/shift, gate, then
/// per expert w1, v, w2), all values uniform in [-0.1, 0.1].
pub fn gen_weights(config: ModelConfig, fixed: FixedConfig, seed: u64) -> Result<WeightStore> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = config.d_model;
    let layers = (0..config.num_layers)
        .map(|_| {
            let attn = AttnWeights {
                wq: gen_tensor(&mut rng, fixed, d, d),
                wk: gen_tensor(&mut rng, fixed, d, d),
                wv: gen_tensor(&mut rng, fixed, d, d),
                wo: gen_tensor(&mut rng, fixed, d, d),
            };
            let ln1 = LnParams {
                gamma: gen_vec(&mut rng, fixed, d),
                beta: gen_vec(&mut rng, fixed, d),
            };
            let ln2 = LnParams {
                gamma: gen_vec(&mut rng, fixed, d),
                beta: gen_vec(&mut rng, fixed, d),
            };
            let gate = gen_tensor(&mut rng, fixed, d, config.n_experts);
            let experts = (0..config.n_experts)
                .map(|_| ExpertWeights {
                    w1: gen_tensor(&mut rng, fixed, d, config.d_ff),
                    v: gen_tensor(&mut rng, fixed, d, config.d_ff),
                    w2: gen_tensor(&mut rng, fixed, config.d_ff, d),
                })
                .collect();
            LayerWeights { attn, ln1, ln2, gate, experts }
        })
        .collect();
    Ok(WeightStore { config, fixed, seed, layers })
}

const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_FORMAT: &str = "moemux-weights-v1";

/// Deterministic blob inventory: `(file stem, rows, cols)` in generation order.
fn slot_names(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = config.d_model;
    let mut slots = Vec::new();
    for li in 0..config.num_layers {
        for name in ["wq", "wk", "wv", "wo"] {
            slots.push((format!("layer{li}.{name}"), d, d));
        }
        for name in ["ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"] {
            slots.push((format!("layer{li}.{name}"), 1, d));
        }
        slots.push((format!("layer{li}.gate"), d, config.n_experts));
        for e in 0..config.n_experts {
            slots.push((format!("layer{li}.expert{e}.w1"), d, config.d_ff));
            slots.push((format!("layer{li}.expert{e}.v"), d, config.d_ff));
            slots.push((format!("layer{li}.expert{e}.w2"), config.d_ff, d));
        }
    }
    slots
}

fn slot_data(store: &WeightStore) -> Vec<&[u64]> {
    let mut out = Vec::new();
    for lw in &store.layers {
        out.push(&lw.attn.wq.data[..]);
        out.push(&lw.attn.wk.data[..]);
        out.push(&lw.attn.wv.data[..]);
        out.push(&lw.attn.wo.data[..]);
        out.push(&lw.ln1.gamma[..]);
        out.push(&lw.ln1.beta[..]);
        out.push(&lw.ln2.gamma[..]);
        out.push(&lw.ln2.beta[..]);
        out.push(&lw.gate.data[..]);
        for e in &lw.experts {
            out.push(&e.w1.data[..]);
            out.push(&e.v.data[..]);
            out.push(&e.w2.data[..]);
        }
    }
    out
}

/// Writes the store as a directory: a `key=value` manifest plus one
/// little-endian row-major 8-byte blob per tensor.
pub fn save_weights(store: &WeightStore, dir: &Path) -> Result<()> {
    store.config.validate()?;
    fs::create_dir_all(dir)?;
    let c = &store.config;
    let manifest = format!(
        "format={MANIFEST_FORMAT}\nell={}\nfrac={}\nseed={}\nd_model={}\nd_ff={}\n\
         num_heads={}\nnum_layers={}\nn_experts={}\nk_experts={}\nseq_len={}\n",
        store.fixed.ell,
        store.fixed.frac,
        store.seed,
        c.d_model,
        c.d_ff,
        c.num_heads,
        c.num_layers,
        c.n_experts,
        c.k_experts,
        c.seq_len,
    );
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    let slots = slot_names(c);
    let datas = slot_data(store);
    if slots.len() != datas.len() {
        return Err(Error::shape("weight store does not match its own architecture"));
    }
    for ((name, rows, cols), data) in slots.iter().zip(datas) {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("tensor {name} is {} long, expected {}", data.len(), rows * cols)));
        }
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for &v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.bin")), bytes)?;
    }
    Ok(())
}

fn manifest_field<T: FromStr>(map: &HashMap<&str, &str>, key: &'static str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::malformed("weight manifest", format!("missing key {key}")))?;
    raw.parse()
        .map_err(|_| Error::malformed("weight manifest", format!("bad value for {key}: {raw:?}")))
}

/// Reads a directory written by [`save_weights`]. Short or oversized blobs,
/// unparseable manifests, and out-of-ring values are `Malformed`; blob sizes
/// contradicting the manifest dimensions are `ConfigMismatch`.
pub fn load_weights(dir: &Path) -> Result<WeightStore> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::malformed("weight manifest", format!("line {line:?} is not key=value"))
        })?;
        map.insert(k.trim(), v.trim());
    }
    let format: String = manifest_field(&map, "format")?;
    if format != MANIFEST_FORMAT {
        return Err(Error::malformed("weight manifest", format!("unknown format {format:?}")));
    }
    let ell: u32 = manifest_field(&map, "ell")?;
    let frac: u32 = manifest_field(&map, "frac")?;
    if !(1..=64).contains(&ell) || frac >= ell {
        return Err(Error::malformed(
            "weight manifest",
            format!("invalid fixed-point geometry ell={ell} frac={frac}"),
        ));
    }
    let fixed = FixedConfig::new(ell, frac);
    let seed: u64 = manifest_field(&map, "seed")?;
    let config = ModelConfig {
        d_model: manifest_field(&map, "d_model")?,
        d_ff: manifest_field(&map, "d_ff")?,
        num_heads: manifest_field(&map, "num_heads")?,
        num_layers: manifest_field(&map, "num_layers")?,
        n_experts: manifest_field(&map, "n_experts")?,
        k_experts: manifest_field(&map, "k_experts")?,
        seq_len: manifest_field(&map, "seq_len")?,
    };
    config.validate()?;

    let mut datas = Vec::new();
    for (name, rows, cols) in slot_names(&config) {
        let bytes = fs::read(dir.join(format!("{name}.bin")))?;
        let expected = rows * cols * 8;
        if bytes.len() < expected || bytes.len() % 8 != 0 {
            return Err(Error::malformed(
                "weight blob",
                format!("{name}.bin is {} bytes, expected {expected}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::ConfigMismatch(format!(
                "{name}.bin holds {} bytes but the manifest dimensions require {expected}",
                bytes.len()
            )));
        }
        let data: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(v) = data.iter().find(|&&v| v & !fixed.mask() != 0) {
            return Err(Error::malformed(
                "weight blob",
                format!("{name}.bin value {v:#x} outside the {ell}-bit ring"),
            ));
        }
        datas.push(data);
    }

    let mut it = datas.into_iter();
    let mut next = move || it.next().expect("slot inventory covers every tensor");
    let d = config.d_model;
    let layers = (0..config.num_layers)
        .map(|_| {
            let attn = AttnWeights {
                wq: FixedTensor::from_rows(d, d, next()),
                wk: FixedTensor::from_rows(d, d, next()),
                wv: FixedTensor::from_rows(d, d, next()),
                wo: FixedTensor::from_rows(d, d, next()),
            };
            let ln1 = LnParams { gamma: next(), beta: next() };
            let ln2 = LnParams { gamma: next(), beta: next() };
            let gate = FixedTensor::from_rows(d, config.n_experts, next());
            let experts = (0..config.n_experts)
                .map(|_| ExpertWeights {
                    w1: FixedTensor::from_rows(d, config.d_ff, next()),
                    v: FixedTensor::from_rows(d, config.d_ff, next()),
                    w2: FixedTensor::from_rows(config.d_ff, d, next()),
                })
                .collect();
            LayerWeights { attn, ln1, ln2, gate, experts }
        })
        .collect();
    Ok(WeightStore { config, fixed, seed, layers })
}

fn add_tensors(cfg: FixedConfig, a: &FixedTensor, b: &FixedTensor) -> FixedTensor {
    debug_assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| cfg.add(x, y)).collect();
    FixedTensor::from_rows(a.rows, a.cols, data)
}

fn ln_rows_plain(cfg: FixedConfig, x: &FixedTensor, p: &LnParams) -> FixedTensor {
    let mut out = FixedTensor::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = plain::layernorm_fixed(cfg, x.row(r), &p.gamma, &p.beta);
        out.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&row);
    }
    out
}

/// Per-expert gate scores for the whole batch: the per-token score rows of
/// the gate projection, summed over the sequence.
fn gate_row_from_scores(cfg: FixedConfig, scores: &FixedTensor) -> Vec<u64> {
    (0..scores.cols)
        .map(|e| {
            let mut acc = 0u64;
            for t in 0..scores.rows {
                acc = cfg.add(acc, scores.at(t, e));
            }
            acc
        })
        .collect()
}

fn check_forward_input(config: &ModelConfig, layers: usize, tokens: &FixedTensor) -> Result<()> {
    config.validate()?;
    if layers != config.num_layers {
        return Err(Error::shape(format!(
            "store has {layers} layers, config expects {}",
            config.num_layers
        )));
    }
    if tokens.rows != config.seq_len || tokens.cols != config.d_model {
        return Err(Error::shape(format!(
            "input is {}x{}, model expects {}x{}",
            tokens.rows, tokens.cols, config.seq_len, config.d_model
        )));
    }
    Ok(())
}

/// Bit-exact mirror of the secure forward pass on plaintext ring values.
/// Also reports which expert each layer routed the batch to.
pub fn plain_forward_routed(
    store: &WeightStore,
    tokens: &FixedTensor,
    gate_scaling: bool,
) -> Result<(FixedTensor, Vec<usize>)> {
    check_forward_input(&store.config, store.layers.len(), tokens)?;
    let cfg = store.fixed;
    let mc = &store.config;
    let mut x = tokens.clone();
    let mut routes = Vec::with_capacity(mc.num_layers);
    for lw in &store.layers {
        let h1 = ln_rows_plain(cfg, &x, &lw.ln1);
        let a = attention_plain(cfg, &h1, &lw.attn, mc.num_heads);
        x = add_tensors(cfg, &x, &a);

        let h2 = ln_rows_plain(cfg, &x, &lw.ln2);
        let scores = plain::matmul_trunc(cfg, &h2, &lw.gate);
        let gate_row = gate_row_from_scores(cfg, &scores);
        routes.push(plain::argmax_fixed(cfg, &gate_row));
        let y = sparse_moe_plain(cfg, &h2, &gate_row, &lw.experts, gate_scaling);
        x = add_tensors(cfg, &x, &y);
    }
    Ok((x, routes))
}

/// [`plain_forward_routed`] without the route report.
pub fn plain_forward(
    store: &WeightStore,
    tokens: &FixedTensor,
    gate_scaling: bool,
) -> Result<FixedTensor> {
    Ok(plain_forward_routed(store, tokens, gate_scaling)?.0)
}

// ---------------------------------------------------------------------------
// Float64 shadow: same approximations (base-64 exponential with its clip,
// piecewise GeLU), exact arithmetic everywhere else. Bounds the fixed-point
// rounding drift of the full network.

struct ShadowLayer {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    ln1g: Vec<f64>,
    ln1b: Vec<f64>,
    ln2g: Vec<f64>,
    ln2b: Vec<f64>,
    gate: Vec<f64>,
    experts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn decode_vec(cfg: FixedConfig, v: &[u64]) -> Vec<f64> {
    v.iter().map(|&u| cfg.decode(u)).collect()
}

fn shadow_layer(cfg: FixedConfig, lw: &LayerWeights) -> ShadowLayer {
    ShadowLayer {
        wq: lw.attn.wq.decode(cfg),
        wk: lw.attn.wk.decode(cfg),
        wv: lw.attn.wv.decode(cfg),
        wo: lw.attn.wo.decode(cfg),
        ln1g: decode_vec(cfg, &lw.ln1.gamma),
        ln1b: decode_vec(cfg, &lw.ln1.beta),
        ln2g: decode_vec(cfg, &lw.ln2.gamma),
        ln2b: decode_vec(cfg, &lw.ln2.beta),
        gate: lw.gate.decode(cfg),
        experts: lw
            .experts
            .iter()
            .map(|e| (e.w1.decode(cfg), e.v.decode(cfg), e.w2.decode(cfg)))
            .collect(),
    }
}

fn fmatmul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let av = a[i * ac + k];
            for j in 0..bc {
                out[i * bc + j] += av * b[k * bc + j];
            }
        }
    }
    out
}

fn exp_shadow(x: f64) -> f64 {
    let base = (1u64 << plain::EXP_LOG2_BASE) as f64;
    if x < plain::EXP_CLIP {
        0.0
    } else {
        (1.0 + x / base).powi(1 << plain::EXP_LOG2_BASE)
    }
}

fn softmax_shadow(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| exp_shadow(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|&v| v / s).collect()
}

fn ln_shadow(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let c: Vec<f64> = x.iter().map(|&v| v - mean).collect();
    let var = c.iter().map(|&v| v * v).sum::<f64>() / d;
    let inv = 1.0 / (var + (2.0f64).powi(plain::VAR_EPS_LOG2)).sqrt();
    c.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((&v, &g), &b)| g * (v * inv) + b)
        .collect()
}

fn argmax_shadow(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn attention_shadow(h: &[f64], k: usize, d: usize, sl: &ShadowLayer, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let q = fmatmul(h, k, d, &sl.wq, d);
    let kk = fmatmul(h, k, d, &sl.wk, d);
    let v = fmatmul(h, k, d, &sl.wv, d);
    let mut ctx_all = vec![0.0; k * d];
    let scale = 1.0 / (dh as f64).sqrt();
    for hd in 0..heads {
        for i in 0..k {
            let mut row = vec![0.0; k];
            for (j, rv) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in 0..dh {
                    acc += q[i * d + hd * dh + t] * kk[j * d + hd * dh + t];
                }
                *rv = acc * scale;
            }
            let probs = softmax_shadow(&row);
            for t in 0..dh {
                let mut acc = 0.0;
                for (j, &p) in probs.iter().enumerate() {
                    acc += p * v[j * d + hd * dh + t];
                }
                ctx_all[i * d + hd * dh + t] = acc;
            }
        }
    }
    fmatmul(&ctx_all, k, d, &sl.wo, d)
}

/// Float64 reference of the full forward pass, replicating the protocol's
/// function approximations but none of its fixed-point rounding. Returns the
/// output row-major.
pub fn float_forward(
    store: &WeightStore,
    tokens: &FixedTensor,
    gate_scaling: bool,
) -> Result<Vec<f64>> {
    check_forward_input(&store.config, store.layers.len(), tokens)?;
    let cfg = store.fixed;
    let mc = &store.config;
    let (k, d) = (mc.seq_len, mc.d_model);
    let mut x = tokens.decode(cfg);
    for lw in &store.layers {
        let sl = shadow_layer(cfg, lw);
        let mut h1 = vec![0.0; k * d];
        for r in 0..k {
            h1[r * d..(r + 1) * d]
                .copy_from_slice(&ln_shadow(&x[r * d..(r + 1) * d], &sl.ln1g, &sl.ln1b));
        }
        let a = attention_shadow(&h1, k, d, &sl, mc.num_heads);
        for (xi, ai) in x.iter_mut().zip(&a) {
            *xi += ai;
        }

        let mut h2 = vec![0.0; k * d];
        for r in 0..k {
            h2[r * d..(r + 1) * d]
                .copy_from_slice(&ln_shadow(&x[r * d..(r + 1) * d], &sl.ln2g, &sl.ln2b));
        }
        let scores = fmatmul(&h2, k, d, &sl.gate, mc.n_experts);
        let gate_row: Vec<f64> = (0..mc.n_experts)
            .map(|e| (0..k).map(|t| scores[t * mc.n_experts + e]).sum())
            .collect();
        let sel = argmax_shadow(&gate_row);
        let (w1, wv, w2) = &sl.experts[sel];
        let xw1 = fmatmul(&h2, k, d, w1, mc.d_ff);
        let xv = fmatmul(&h2, k, d, wv, mc.d_ff);
        let glu: Vec<f64> = xw1
            .iter()
            .zip(&xv)
            .map(|(&a, &b)| plain::gelu_real(a) * b)
            .collect();
        let mut y = fmatmul(&glu, k, mc.d_ff, w2, d);
        if gate_scaling {
            let p = softmax_shadow(&gate_row)[sel];
            for v in &mut y {
                *v *= p;
            }
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi += yi;
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Secure forward pass.

/// Client-side traffic deltas of one layer.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct LayerTrace {
    /// First normalization plus the attention block.
    pub attention: ChannelStats,
    /// Second normalization plus the gate projection.
    pub gate: ChannelStats,
    /// MoE selection and compute phases.
    pub moe: MoePhases,
}

/// Traffic trace of a whole forward pass, read on the client.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Everything from input sharing to the last residual add.
    pub total: ChannelStats,
    /// This party's cumulative subprotocol counters when the pass finished.
    pub counters: OpCounters,
}

fn ln_rows_secure(ctx: &mut SecureCtx, x: &FixedTensor, p: Option<&LnParams>) -> Result<FixedTensor> {
    let mut out = FixedTensor::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = secure_layernorm(ctx.mpc, x.row(r), p)?;
        out.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&row);
    }
    Ok(out)
}

/// Runs the full forward pass inside an open session. The client passes the
/// input tokens, the server its weight store; both pass the agreed
/// architecture. Returns each party's share of the output and the per-layer
/// trace (meaningful on the client, whose snapshots are totally ordered with
/// its own protocol steps).
pub fn secure_forward(
    ctx: &mut SecureCtx,
    config: &ModelConfig,
    weights: Option<&WeightStore>,
    input: Option<&FixedTensor>,
    protocol: MoeProtocol,
    gate_scaling: bool,
) -> Result<(FixedTensor, ForwardTrace)> {
    config.validate()?;
    let cfg = ctx.cfg();
    let (k, d) = (config.seq_len, config.d_model);
    if ctx.mpc.is_client() {
        let tokens = input
            .ok_or_else(|| Error::InvalidArgument("client must supply the input tokens".into()))?;
        if weights.is_some() {
            return Err(Error::InvalidArgument("client must not hold weights".into()));
        }
        if tokens.rows != k || tokens.cols != d {
            return Err(Error::shape(format!(
                "input is {}x{}, model expects {k}x{d}",
                tokens.rows, tokens.cols
            )));
        }
    } else {
        let store = weights
            .ok_or_else(|| Error::InvalidArgument("server must supply the weights".into()))?;
        if input.is_some() {
            return Err(Error::InvalidArgument("server must not supply input".into()));
        }
        if store.config != *config {
            return Err(Error::ConfigMismatch(
                "weight store was built for a different architecture".into(),
            ));
        }
        if store.fixed != cfg {
            return Err(Error::ConfigMismatch(
                "weight store fixed-point geometry differs from the session".into(),
            ));
        }
        if store.layers.len() != config.num_layers {
            return Err(Error::shape(format!(
                "store has {} layers, config expects {}",
                store.layers.len(),
                config.num_layers
            )));
        }
    }

    let s_start = ctx.mpc.stats();
    let shared = ctx
        .mpc
        .share_from(Role::Client, input.map(|t| t.data.as_slice()), k * d)?;
    let mut x = FixedTensor::from_rows(k, d, shared);
    let mut layer_traces = Vec::with_capacity(config.num_layers);
    for li in 0..config.num_layers {
        let lw = weights.map(|w| &w.layers[li]);
        let t0 = ctx.mpc.stats();
        let h1 = ln_rows_secure(ctx, &x, lw.map(|l| &l.ln1))?;
        let a = secure_attention(ctx, &h1, lw.map(|l| &l.attn), config.num_heads)?;
        x = add_tensors(cfg, &x, &a);
        let t1 = ctx.mpc.stats();

        let h2 = ln_rows_secure(ctx, &x, lw.map(|l| &l.ln2))?;
        let scores = secure_matmul_pt(ctx, &h2, lw.map(|l| &l.gate), config.n_experts)?;
        let gate_row = gate_row_from_scores(cfg, &scores);
        let t2 = ctx.mpc.stats();

        let experts = lw.map(|l| l.experts.as_slice());
        let (y, moe) = match protocol {
            MoeProtocol::Sparse => {
                secure_sparse_moe(ctx, &h2, &gate_row, experts, config.d_ff, gate_scaling)?
            }
            MoeProtocol::Dense => {
                naive_dense_moe(ctx, &h2, &gate_row, experts, config.d_ff, gate_scaling)?
            }
        };
        x = add_tensors(cfg, &x, &y);
        layer_traces.push(LayerTrace {
            attention: t1.since(&t0),
            gate: t2.since(&t1),
            moe,
        });
    }
    let total = ctx.mpc.stats().since(&s_start);
    Ok((x, ForwardTrace { layers: layer_traces, total, counters: ctx.mpc.counters }))
}

/// In-process end-to-end run: shares the input, runs both parties, and
/// reconstructs the output. Returns the client's trace and the session totals.
pub fn run_forward(
    store: &WeightStore,
    input: &FixedTensor,
    opts: HeOpts,
    seed: u64,
    protocol: MoeProtocol,
    gate_scaling: bool,
) -> Result<(FixedTensor, ForwardTrace, ChannelStats)> {
    let cfg = store.fixed;
    let (client_out, server_out, stats) = run_secure_pair(
        cfg,
        opts,
        seed,
        |ctx| secure_forward(ctx, &store.config, None, Some(input), protocol, gate_scaling),
        |ctx| secure_forward(ctx, &store.config, Some(store), None, protocol, gate_scaling),
    )?;
    let (xc, trace) = client_out;
    let (xs, _) = server_out;
    let out = add_tensors(cfg, &xc, &xs);
    Ok((out, trace, stats))
}

/// Exact cost model of a forward pass from one counting dry run: correlation
/// budget plus channel statistics, without touching real data.
pub fn estimate_forward(
    store: &WeightStore,
    opts: HeOpts,
    protocol: MoeProtocol,
    gate_scaling: bool,
) -> Result<(Budget, ChannelStats)> {
    let input = FixedTensor::zeros(store.config.seq_len, store.config.d_model);
    estimate_secure_pair(
        store.fixed,
        opts,
        |ctx| secure_forward(ctx, &store.config, None, Some(&input), protocol, gate_scaling),
        |ctx| secure_forward(ctx, &store.config, Some(store), None, protocol, gate_scaling),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: FixedConfig = FixedConfig::DEFAULT;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 8,
            num_heads: 2,
            num_layers: 2,
            n_experts: 3,
            k_experts: 1,
            seq_len: 3,
        }
    }

    fn random_tokens(cfg: FixedConfig, rows: usize, cols: usize, seed: u64) -> FixedTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..rows * cols)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect();
        FixedTensor::encode(cfg, rows, cols, &vals)
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::toy(8).validate().is_ok());
        let mut c = ModelConfig::toy(8);
        c.num_heads = 3;
        assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
        let mut c = ModelConfig::toy(8);
        c.k_experts = 2;
        assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
        let mut c = ModelConfig::toy(8);
        c.n_experts = 0;
        assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn protocol_names_parse() {
        assert_eq!("sparse".parse::<MoeProtocol>().unwrap(), MoeProtocol::Sparse);
        assert_eq!("secmoe".parse::<MoeProtocol>().unwrap(), MoeProtocol::Sparse);
        assert_eq!("dense".parse::<MoeProtocol>().unwrap(), MoeProtocol::Dense);
        assert!("moe".parse::<MoeProtocol>().is_err());
        assert_eq!(MoeProtocol::Sparse.to_string(), "sparse");
    }

    #[test]
    fn gen_weights_deterministic_and_bounded() {
        let config = ModelConfig::toy(4);
        let a = gen_weights(config, CFG, 7).unwrap();
        let b = gen_weights(config, CFG, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_weights(config, CFG, 8).unwrap();
        assert_ne!(a, c);

        assert_eq!(a.layers.len(), 2);
        for lw in &a.layers {
            assert_eq!(lw.experts.len(), 4);
            assert_eq!((lw.gate.rows, lw.gate.cols), (64, 4));
            assert_eq!((lw.experts[0].w1.rows, lw.experts[0].w1.cols), (64, 128));
            assert_eq!((lw.experts[0].w2.rows, lw.experts[0].w2.cols), (128, 64));
        }
        for &v in slot_data(&a).iter().flat_map(|s| s.iter()) {
            assert!(CFG.decode(v).abs() <= 0.1 + 1e-9, "weight out of range");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = gen_weights(small_config(), CFG, 11).unwrap();
        save_weights(&store, dir.path()).unwrap();
        let loaded = load_weights(dir.path()).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn truncated_blob_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let store = gen_weights(small_config(), CFG, 11).unwrap();
        save_weights(&store, dir.path()).unwrap();
        let victim = dir.path().join("layer0.wq.bin");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_weights(dir.path()),
            Err(Error::Malformed { what: "weight blob", .. })
        ));
    }

    #[test]
    fn edited_manifest_dims_mismatch_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let store = gen_weights(small_config(), CFG, 11).unwrap();
        save_weights(&store, dir.path()).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).unwrap().replace("d_ff=8", "d_ff=4");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(load_weights(dir.path()), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn broken_manifest_is_malformed_and_missing_blob_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let store = gen_weights(small_config(), CFG, 11).unwrap();
        save_weights(&store, dir.path()).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let good = fs::read_to_string(&manifest).unwrap();

        fs::write(&manifest, good.replace("seed=11", "seed eleven")).unwrap();
        assert!(matches!(
            load_weights(dir.path()),
            Err(Error::Malformed { what: "weight manifest", .. })
        ));

        fs::write(&manifest, good.replace("seed=11", "")).unwrap();
        assert!(matches!(
            load_weights(dir.path()),
            Err(Error::Malformed { what: "weight manifest", .. })
        ));

        fs::write(&manifest, good).unwrap();
        fs::remove_file(dir.path().join("layer1.expert2.w2.bin")).unwrap();
        assert!(matches!(load_weights(dir.path()), Err(Error::Io(_))));
    }

    #[test]
    fn plain_forward_shape_and_determinism() {
        let store = gen_weights(small_config(), CFG, 3).unwrap();
        let tokens = random_tokens(CFG, 3, 8, 1);
        let a = plain_forward(&store, &tokens, true).unwrap();
        let b = plain_forward(&store, &tokens, true).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.rows, a.cols), (3, 8));
        let bad = random_tokens(CFG, 4, 8, 1);
        assert!(matches!(plain_forward(&store, &bad, false), Err(Error::Shape(_))));
    }

    #[test]
    fn single_expert_ignores_gate_values() {
        let mut config = small_config();
        config.n_experts = 1;
        let store = gen_weights(config, CFG, 5).unwrap();
        let mut other = store.clone();
        for lw in &mut other.layers {
            for v in &mut lw.gate.data {
                *v = CFG.neg(*v);
            }
        }
        let tokens = random_tokens(CFG, 3, 8, 2);
        for scaling in [false, true] {
            let a = plain_forward(&store, &tokens, scaling).unwrap();
            let b = plain_forward(&other, &tokens, scaling).unwrap();
            assert_eq!(a, b, "gate values must not matter with one expert");
        }
    }

    /// With ln1 = 0 and zero attention weights the attention block contributes
    /// exactly zero; with ln2 scale 0 the MoE input is exactly the ln2 shift.
    /// Crafting the gate then forces any expert, and the layer output must be
    /// the direct evaluation of that expert on the known input.
    #[test]
    fn crafted_gate_forces_each_expert() {
        let config = ModelConfig {
            d_model: 4,
            d_ff: 8,
            num_heads: 2,
            num_layers: 1,
            n_experts: 4,
            k_experts: 1,
            seq_len: 3,
        };
        let base = gen_weights(config, CFG, 9).unwrap();
        let tokens = random_tokens(CFG, 3, 4, 4);
        let zero_d = vec![0u64; 4];
        let beta: Vec<u64> = vec![CFG.encode(0.1), 0, 0, 0];
        let mut outputs = Vec::new();
        for target in 0..4 {
            let mut store = base.clone();
            let lw = &mut store.layers[0];
            lw.attn = AttnWeights {
                wq: FixedTensor::zeros(4, 4),
                wk: FixedTensor::zeros(4, 4),
                wv: FixedTensor::zeros(4, 4),
                wo: FixedTensor::zeros(4, 4),
            };
            lw.ln1 = LnParams { gamma: zero_d.clone(), beta: zero_d.clone() };
            lw.ln2 = LnParams { gamma: zero_d.clone(), beta: beta.clone() };
            let mut gate = FixedTensor::zeros(4, 4);
            for e in 0..4 {
                gate.set(0, e, CFG.encode(if e == target { 0.1 } else { -0.1 }));
            }
            lw.gate = gate;

            let (out, routes) = plain_forward_routed(&store, &tokens, false).unwrap();
            assert_eq!(routes, vec![target]);

            // Direct evaluation: the MoE input is three copies of the shift.
            let mut h2 = FixedTensor::zeros(3, 4);
            for r in 0..3 {
                h2.data[r * 4..(r + 1) * 4].copy_from_slice(&beta);
            }
            let forced_row: Vec<u64> =
                (0..4).map(|e| CFG.encode(if e == target { 1.0 } else { -1.0 })).collect();
            let direct = sparse_moe_plain(CFG, &h2, &forced_row, &store.layers[0].experts, false);
            assert_eq!(out, add_tensors(CFG, &tokens, &direct));
            outputs.push(out);
        }
        for t in 1..4 {
            assert_ne!(outputs[0], outputs[t], "different experts must differ");
        }
    }

    #[test]
    fn float_shadow_tracks_fixed_point() {
        let store = gen_weights(ModelConfig::toy(4), CFG, 21).unwrap();
        let tokens = random_tokens(CFG, 8, 64, 6);
        for scaling in [false, true] {
            let fixed_out = plain_forward(&store, &tokens, scaling).unwrap().decode(CFG);
            let float_out = float_forward(&store, &tokens, scaling).unwrap();
            let max_div = fixed_out
                .iter()
                .zip(&float_out)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                max_div < 1.0 / 64.0,
                "scaling {scaling}: max divergence {max_div} vs float shadow"
            );
        }
    }

    #[test]
    fn secure_forward_matches_plain_exactly() {
        let store = gen_weights(small_config(), CFG, 13).unwrap();
        let tokens = random_tokens(CFG, 3, 8, 7);
        for (protocol, scaling) in [
            (MoeProtocol::Sparse, false),
            (MoeProtocol::Sparse, true),
            (MoeProtocol::Dense, true),
        ] {
            let expected = plain_forward(&store, &tokens, scaling).unwrap();
            let (out, trace, stats) =
                run_forward(&store, &tokens, HeOpts::DEFAULT, 99, protocol, scaling).unwrap();
            assert_eq!(out, expected, "{protocol} scaling={scaling}");
            assert_eq!(trace.layers.len(), 2);
            assert!(trace.total.payload_c_to_s > 0 && trace.total.payload_s_to_c > 0);
            assert!(stats.total_payload() >= trace.total.total_payload());
            for lt in &trace.layers {
                assert!(lt.attention.total_payload() > 0);
                assert!(lt.gate.total_payload() > 0);
                assert!(lt.moe.selection.total_payload() > 0);
                assert!(lt.moe.compute.total_payload() > 0);
            }
        }
    }

    #[test]
    fn secure_forward_rejects_misassigned_inputs() {
        let store = gen_weights(small_config(), CFG, 13).unwrap();
        let tokens = random_tokens(CFG, 3, 8, 7);
        let err = run_secure_pair(
            CFG,
            HeOpts::DEFAULT,
            1,
            |ctx| {
                secure_forward(
                    ctx,
                    &store.config,
                    Some(&store),
                    Some(&tokens),
                    MoeProtocol::Sparse,
                    false,
                )
            },
            |ctx| {
                secure_forward(ctx, &store.config, Some(&store), None, MoeProtocol::Sparse, false)
            },
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));

        let mut wrong = store.clone();
        wrong.config.n_experts = 2;
        let err = run_secure_pair(
            CFG,
            HeOpts::DEFAULT,
            1,
            |ctx| {
                secure_forward(ctx, &store.config, None, Some(&tokens), MoeProtocol::Sparse, false)
            },
            |ctx| {
                secure_forward(ctx, &store.config, Some(&wrong), None, MoeProtocol::Sparse, false)
            },
        );
        assert!(matches!(err, Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn estimate_matches_real_run() {
        let store = gen_weights(small_config(), CFG, 17).unwrap();
        let tokens = random_tokens(CFG, 3, 8, 8);
        for protocol in [MoeProtocol::Sparse, MoeProtocol::Dense] {
            let (_, _, stats) =
                run_forward(&store, &tokens, HeOpts::DEFAULT, 42, protocol, true).unwrap();
            let (budget, est) = estimate_forward(&store, HeOpts::DEFAULT, protocol, true).unwrap();
            assert_eq!(est, stats, "{protocol} estimate must be byte-exact");
            assert!(budget.beaver > 0 && budget.comp > 0);
        }
    }

    /// The sparse protocol's whole-network compute traffic must not depend on
    /// the expert count; the dense baseline's must grow with it.
    #[test]
    fn forward_traffic_flatness() {
        let moe_compute = |protocol: MoeProtocol, n_exp: usize| -> u64 {
            let mut config = small_config();
            config.n_experts = n_exp;
            let store = gen_weights(config, CFG, 23).unwrap();
            let tokens = random_tokens(CFG, 3, 8, 9);
            let (_, trace, _) =
                run_forward(&store, &tokens, HeOpts::DEFAULT, 5, protocol, false).unwrap();
            trace.layers.iter().map(|l| l.moe.compute.total_payload()).sum()
        };
        let sparse2 = moe_compute(MoeProtocol::Sparse, 2);
        let sparse8 = moe_compute(MoeProtocol::Sparse, 8);
        assert_eq!(sparse2, sparse8, "sparse compute traffic must be flat");

        let dense2 = moe_compute(MoeProtocol::Dense, 2);
        let dense8 = moe_compute(MoeProtocol::Dense, 8);
        assert!(dense8 >= dense2 * 3, "dense traffic must grow with experts");
    }
}
