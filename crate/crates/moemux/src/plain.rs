//! Plaintext reference pipeline: the approximation tables and the exact
//! fixed-point mirrors of every secure nonlinear protocol.
//!
//! The secure protocols reconstruct to deterministic functions of their
//! reconstructed inputs (multiplication, truncation, and comparison are all
//! exact in-ring), so each mirror here replays the identical op sequence —
//! same truncation points, same tables, same iteration counts — and serves
//! as the bit-level oracle. All numeric constants the secure side needs
//! (breakpoints, coefficient rows, scan ranges, iteration initializers)
//! live here and nowhere else.

use crate::fixed::{FixedConfig, FixedTensor};

/// Piecewise-quadratic spec: breakpoints plus zero-padded coefficient rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSpec {
    /// Strictly increasing segment boundaries b_1..b_{m−1}.
    pub breaks: &'static [f64],
    /// One row per segment, ascending order [constant, linear, quadratic].
    /// Row j covers (breaks[j−1], breaks[j]]; row 0 runs from −∞, the last
    /// row to +∞.
    pub rows: &'static [[f64; 3]],
}

/// GeLU approximation: 6 segments over breakpoints (−5, −3, −1, 1, 3),
/// zero clamp below, identity clamp above.
pub const GELU: PiecewiseSpec = PiecewiseSpec {
    breaks: &[-5.0, -3.0, -1.0, 1.0, 3.0],
    rows: &[
        [0.0, 0.0, 0.0],
        [-0.02986296, -0.01380208, -0.00158297],
        [-0.36497047, -0.23581369, -0.0384032],
        [0.00485947, 0.50000716, 0.3482604],
        [-0.36491015, 1.23575599, -0.03839009],
        [0.0, 1.0, 0.0],
    ],
};

/// Count of coefficient entries selected by MUX in the fused GeLU: the four
/// interior rows are fully dense; the clamp rows ride for free (zero row
/// skipped, identity row folded into the linear column as a converted bit).
pub const GELU_MUX_COUNT: usize = 12;

/// exp(x) for x ≤ 0 as (1 + x/2^EXP_LOG2_BASE)^(2^EXP_LOG2_BASE).
pub const EXP_LOG2_BASE: u32 = 6;
/// Inputs below this threshold clip to zero.
pub const EXP_CLIP: f64 = -13.0;

/// Reciprocal: scan the denominator's bin among [2^(k−1), 2^k) for k in
/// RECIP_SCAN, normalize into [0.5, 1), then Goldschmidt.
pub const RECIP_SCAN: std::ops::RangeInclusive<i32> = 1..=8;
pub const RECIP_ITERS: usize = 2;
/// Initial estimate w0 = RECIP_INIT − 2·x̂ for x̂ ∈ [0.5, 1).
pub const RECIP_INIT: f64 = 2.9142;

/// Inverse square root: same bin scan (wider range), Newton iteration
/// y ← y·(1.5 − 0.5·v̂·y²), then undo the normalization with 2^(−k/2).
pub const RSQRT_SCAN: std::ops::RangeInclusive<i32> = -11..=9;
pub const RSQRT_ITERS: usize = 3;
/// Secant initializer y0 = RSQRT_INIT_C − RSQRT_INIT_M·x̂ for x̂ ∈ [0.5, 1).
pub const RSQRT_INIT_C: f64 = 1.82843;
pub const RSQRT_INIT_M: f64 = 0.82843;

/// Variance floor 2^VAR_EPS_LOG2 added before the inverse square root.
pub const VAR_EPS_LOG2: i32 = -12;

/// True GeLU x·Φ(x).
pub fn gelu_true(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Segment index of `x` under half-open (b_i, b_{i+1}] membership:
/// boundary points take the left segment.
fn segment_real(spec: &PiecewiseSpec, x: f64) -> usize {
    spec.breaks.iter().position(|&b| x <= b).unwrap_or(spec.breaks.len())
}

/// Real-valued piecewise evaluation (approximation-quality oracle).
pub fn gelu_real(x: f64) -> f64 {
    let [c0, c1, c2] = GELU.rows[segment_real(&GELU, x)];
    c0 + c1 * x + c2 * x * x
}

/// Comparison thresholds for the fixed-point segment test: [x < encode(b)+1]
/// is exactly [x ≤ b] in-ring.
pub fn piecewise_thresholds(cfg: FixedConfig, spec: &PiecewiseSpec) -> Vec<u64> {
    spec.breaks.iter().map(|&b| cfg.add(cfg.encode(b), 1)).collect()
}

fn signed_lt(cfg: FixedConfig, a: u64, b: u64) -> bool {
    cfg.to_signed(a) < cfg.to_signed(b)
}

/// Fixed-point mirror of the fused secure GeLU: segment one-hot from
/// adjacent threshold comparisons, coefficient selection (identity row's
/// unit folded into the linear column), then x², two products, sum.
pub fn gelu_fixed(cfg: FixedConfig, x: u64) -> u64 {
    let thresholds = piecewise_thresholds(cfg, &GELU);
    let c: Vec<bool> = thresholds.iter().map(|&t| signed_lt(cfg, x, t)).collect();
    let rows: Vec<[u64; 3]> = GELU
        .rows
        .iter()
        .map(|r| [cfg.encode(r[0]), cfg.encode(r[1]), cfg.encode(r[2])])
        .collect();
    let mut sel = [0u64; 3];
    for j in 1..=4 {
        // Row j active on (b_{j−1}, b_j]: monotone chain makes AND an XOR.
        if c[j] != c[j - 1] {
            for (s, r) in sel.iter_mut().zip(rows[j]) {
                *s = cfg.add(*s, r);
            }
        }
    }
    if !c[4] {
        // Identity row: add encode(1) to the linear column.
        sel[1] = cfg.add(sel[1], cfg.one());
    }
    let x2 = cfg.mul_fixed(x, x);
    let quad = cfg.mul_fixed(x2, sel[2]);
    let lin = cfg.mul_fixed(x, sel[1]);
    cfg.add(cfg.add(quad, lin), sel[0])
}

/// Fixed-point mirror of secure exp for x ≤ 0: base 1 + x·2^−6, squared
/// six times, clipped to zero below EXP_CLIP.
pub fn exp_fixed(cfg: FixedConfig, x: u64) -> u64 {
    let mut y = cfg.add(cfg.one(), cfg.truncate_plain(x, EXP_LOG2_BASE));
    for _ in 0..EXP_LOG2_BASE {
        y = cfg.mul_fixed(y, y);
    }
    if signed_lt(cfg, x, cfg.encode(EXP_CLIP)) {
        0
    } else {
        y
    }
}

/// Power-of-two bin selector: returns Σ over bins of [v in bin k]·encode(f(k)).
fn bin_select(
    cfg: FixedConfig,
    v: u64,
    scan: std::ops::RangeInclusive<i32>,
    f: impl Fn(i32) -> f64,
) -> u64 {
    let mut prev = false;
    let mut sel = 0u64;
    for k in scan {
        let t = signed_lt(cfg, v, cfg.encode((k as f64).exp2()));
        if t != prev {
            sel = cfg.add(sel, cfg.encode(f(k)));
        }
        prev = t;
    }
    sel
}

/// Fixed-point mirror of the secure reciprocal for v ∈ [2^0, 2^8).
pub fn recip_fixed(cfg: FixedConfig, v: u64) -> u64 {
    let g = bin_select(cfg, v, RECIP_SCAN, |k| (-k as f64).exp2());
    let xh = cfg.mul_fixed(v, g);
    let mut w = cfg.sub(cfg.encode(RECIP_INIT), cfg.add(xh, xh));
    for _ in 0..RECIP_ITERS {
        let e = cfg.sub(cfg.encode(2.0), cfg.mul_fixed(xh, w));
        w = cfg.mul_fixed(w, e);
    }
    cfg.mul_fixed(w, g)
}

/// Fixed-point mirror of the secure inverse square root for
/// v ∈ [2^−12, 2^9).
pub fn rsqrt_fixed(cfg: FixedConfig, v: u64) -> u64 {
    let g = bin_select(cfg, v, RSQRT_SCAN, |k| (-k as f64).exp2());
    let f = bin_select(cfg, v, RSQRT_SCAN, |k| (-k as f64 / 2.0).exp2());
    let xh = cfg.mul_fixed(v, g);
    let hv = cfg.truncate_plain(xh, 1);
    let mut y = cfg.sub(
        cfg.encode(RSQRT_INIT_C),
        cfg.truncate_plain(cfg.mul(xh, cfg.encode(RSQRT_INIT_M)), cfg.frac),
    );
    for _ in 0..RSQRT_ITERS {
        let yy = cfg.mul_fixed(y, y);
        let p = cfg.mul_fixed(hv, yy);
        y = cfg.mul_fixed(y, cfg.sub(cfg.encode(1.5), p));
    }
    cfg.mul_fixed(y, f)
}

/// Max by signed value; ties keep the lowest index (tournament order).
pub fn argmax_fixed(cfg: FixedConfig, row: &[u64]) -> usize {
    assert!(!row.is_empty());
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if signed_lt(cfg, row[best], v) {
            best = i;
        }
    }
    best
}

/// Fixed-point mirror of secure softmax: max-subtract, exp, sum, reciprocal.
pub fn softmax_fixed(cfg: FixedConfig, row: &[u64]) -> Vec<u64> {
    let max = row[argmax_fixed(cfg, row)];
    let exps: Vec<u64> = row.iter().map(|&v| exp_fixed(cfg, cfg.sub(v, max))).collect();
    let sum = exps.iter().fold(0u64, |a, &b| cfg.add(a, b));
    let inv = recip_fixed(cfg, sum);
    exps.iter().map(|&e| cfg.mul_fixed(e, inv)).collect()
}

/// Fixed-point mirror of secure LayerNorm with mean-of-squares variance
/// and the ε floor.
pub fn layernorm_fixed(cfg: FixedConfig, x: &[u64], gamma: &[u64], beta: &[u64]) -> Vec<u64> {
    let d = x.len();
    assert!(d >= 2 && gamma.len() == d && beta.len() == d);
    let inv_d = cfg.encode(1.0 / d as f64);
    let sum = x.iter().fold(0u64, |a, &b| cfg.add(a, b));
    let mean = cfg.truncate_plain(cfg.mul(sum, inv_d), cfg.frac);
    let centered: Vec<u64> = x.iter().map(|&v| cfg.sub(v, mean)).collect();
    let sq_sum = centered.iter().fold(0u64, |a, &c| cfg.add(a, cfg.mul_fixed(c, c)));
    let var = cfg.truncate_plain(cfg.mul(sq_sum, inv_d), cfg.frac);
    let var_eps = cfg.add(var, cfg.encode((VAR_EPS_LOG2 as f64).exp2()));
    let inv_sigma = rsqrt_fixed(cfg, var_eps);
    centered
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&c, (&g, &b))| {
            let normed = cfg.mul_fixed(c, inv_sigma);
            cfg.add(cfg.truncate_plain(cfg.mul(normed, g), cfg.frac), b)
        })
        .collect()
}

/// Ring matmul followed by the scale-restoring truncation.
pub fn matmul_trunc(cfg: FixedConfig, a: &FixedTensor, b: &FixedTensor) -> FixedTensor {
    let mut out = a.matmul(cfg, b);
    for v in out.data.iter_mut() {
        *v = cfg.truncate_plain(*v, cfg.frac);
    }
    out
}
