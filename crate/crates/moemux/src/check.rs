//! Self-test suites shared by the CLI and the integration tests.
//!
//! Each suite checks one slice of the stack against an independent
//! reference: the fixed-point codec against f64 arithmetic, the GeLU and exp
//! approximations against their real-valued definitions, the share-algebra
//! subprotocols against plaintext oracles (multiplication and selection on
//! the full 64-bit ring; comparison and truncation on a 12-bit ring,
//! exhaustively over every value/threshold pair at the full level), the
//! HE-assisted matmul under both engines, and the dealer cache audit
//! including a corrupted-pool negative test.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dealer::{self, Budget};
use crate::error::Error;
use crate::fixed::{FixedConfig, FixedTensor};
use crate::he::{Engine, HeParams};
use crate::plain;
use crate::protocols::{run_secure_pair, secure_matmul_pt, HeOpts};
use crate::sharing::{run_pair, Bits, Mpc};
use crate::transport::{tag, Role};

/// Self-test depth: `Quick` favors speed, `Full` adds the exhaustive
/// comparison grid and more trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Level> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown self-test level {other:?} (expected quick or full)"
            ))),
        }
    }
}

/// Outcome of one suite: a case count and the first failure, if any.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: u64,
    pub error: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none()
    }
}

type SuiteRun = std::result::Result<u64, String>;

/// Run every suite at the given level, collecting per-suite outcomes.
pub fn run_suites(level: Level) -> Vec<SuiteOutcome> {
    let suites: &[(&'static str, fn(Level) -> SuiteRun)] = &[
        ("fixed-codec", suite_fixed_codec),
        ("gelu-approx", suite_gelu_approx),
        ("exp-oracle", suite_exp_oracle),
        ("mul-64bit", suite_mul),
        ("select-64bit", suite_select),
        ("comp-trunc-12bit", suite_comp_trunc),
        ("he-matmul", suite_he_matmul),
        ("dealer-audit", suite_dealer_audit),
    ];
    suites
        .iter()
        .map(|&(name, run)| match run(level) {
            Ok(cases) => SuiteOutcome { name, cases, error: None },
            Err(e) => SuiteOutcome { name, cases: 0, error: Some(e) },
        })
        .collect()
}

/// True when every outcome passed.
pub fn all_passed(outcomes: &[SuiteOutcome]) -> bool {
    outcomes.iter().all(SuiteOutcome::passed)
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

/// Encode/decode round-trips and fixed products against f64 arithmetic.
fn suite_fixed_codec(_level: Level) -> SuiteRun {
    let cfg = FixedConfig::DEFAULT;
    let step = (-(cfg.frac as f64)).exp2();
    let mut rng = ChaCha20Rng::seed_from_u64(0xC0DEC);
    let mut xs: Vec<f64> = (-64..=64).map(|i| i as f64 / 8.0).collect();
    for _ in 0..256 {
        xs.push(uniform(&mut rng, -8.0, 8.0));
    }
    let mut cases = 0;
    for &x in &xs {
        let v = cfg.encode(x);
        if (cfg.decode(v) - x).abs() > step {
            return Err(format!("round-trip of {x} gave {}", cfg.decode(v)));
        }
        if cfg.from_signed(cfg.to_signed(v)) != v {
            return Err(format!("signed reinterpretation broke at {x}"));
        }
        cases += 2;
    }
    for (i, &a) in xs.iter().enumerate() {
        let b = xs[(7 * i + 3) % xs.len()];
        let got = cfg.decode(cfg.mul_fixed(cfg.encode(a), cfg.encode(b)));
        if (got - a * b).abs() > (a.abs() + b.abs() + 2.0) * step {
            return Err(format!("{a} * {b} gave {got}"));
        }
        cases += 1;
    }
    Ok(cases)
}

/// Piecewise polynomial against x·Φ(x), then the fixed-point evaluator
/// against the same real-valued piecewise polynomial.
fn suite_gelu_approx(level: Level) -> SuiteRun {
    let n = match level {
        Level::Quick => 20_000,
        Level::Full => 100_000,
    };
    let mut max_e = 0.0f64;
    let mut sum_e = 0.0f64;
    for i in 0..n {
        let x = -5.0 + 8.0 * (i as f64 + 0.5) / n as f64;
        let e = (plain::gelu_real(x) - plain::gelu_true(x)).abs();
        max_e = max_e.max(e);
        sum_e += e;
    }
    let mean_e = sum_e / n as f64;
    if max_e > 1.3e-2 {
        return Err(format!("max error {max_e:.3e} exceeds 1.3e-2"));
    }
    if mean_e > 2.0e-3 {
        return Err(format!("mean error {mean_e:.3e} exceeds 2.0e-3"));
    }
    let cfg = FixedConfig::DEFAULT;
    let mut cases = n as u64;
    for i in -600..=600 {
        let x = i as f64 / 100.0;
        // Segment choice may legitimately flip within one encoding step of a
        // breakpoint; skip those inputs.
        if plain::GELU.breaks.iter().any(|&b| (x - b).abs() < 1e-5) {
            continue;
        }
        let got = cfg.decode(plain::gelu_fixed(cfg, cfg.encode(x)));
        if (got - plain::gelu_real(x)).abs() > 1e-4 {
            return Err(format!("fixed point diverges at {x}: {got}"));
        }
        cases += 1;
    }
    Ok(cases)
}

/// Fixed-point exp against an f64 shadow of the same computation: base
/// 1 + x·2^−6 squared six times, clipped to zero below the same threshold.
fn suite_exp_oracle(_level: Level) -> SuiteRun {
    let cfg = FixedConfig::DEFAULT;
    let base = (plain::EXP_LOG2_BASE as f64).exp2();
    let mut cases = 0;
    for i in -8960..=0 {
        let x = i as f64 / 640.0;
        let want = if x < plain::EXP_CLIP { 0.0 } else { (1.0 + x / base).powi(base as i32) };
        let got = cfg.decode(plain::exp_fixed(cfg, cfg.encode(x)));
        if (got - want).abs() > 1e-3 {
            return Err(format!("diverges at {x}: got {got}, want {want}"));
        }
        cases += 1;
    }
    Ok(cases)
}

const MUL_LANES: usize = 1024;
const MUL_K: usize = 4;
const MUL_M: usize = 5;
const MUL_N: usize = 3;

fn mul_script(mpc: &mut Mpc, vals: Option<(&[u64], &[u64])>) -> crate::Result<[Vec<u64>; 3]> {
    let (a, b) = match vals {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let sa = mpc.share_from(Role::Client, a, MUL_LANES)?;
    let sb = mpc.share_from(Role::Client, b, MUL_LANES)?;
    let prod = mpc.mul_raw(&sa, &sb)?;
    let prod = mpc.open_elems(tag::OPEN, &prod)?;
    let fixp = mpc.mul_fixed(&sa, &sb)?;
    let fixp = mpc.open_elems(tag::OPEN, &fixp)?;
    let mat = mpc.mul_mat(&sa[..MUL_K * MUL_M], &sb[..MUL_M * MUL_N], MUL_K, MUL_M, MUL_N)?;
    let mat = mpc.open_elems(tag::OPEN, &mat)?;
    Ok([prod, fixp, mat])
}

/// Shared multiplication — elementwise raw, fixed-point, and matrix — against
/// plaintext arithmetic over random full-width inputs.
fn suite_mul(_level: Level) -> SuiteRun {
    let cfg = FixedConfig::DEFAULT;
    let mut rng = ChaCha20Rng::seed_from_u64(0x4D55_4C31);
    let a: Vec<u64> = (0..MUL_LANES).map(|_| rng.next_u64()).collect();
    let b: Vec<u64> = (0..MUL_LANES).map(|_| rng.next_u64()).collect();
    let ([prod, fixp, mat], _, _) = run_pair(
        cfg,
        0x4D55,
        |mpc| mul_script(mpc, Some((&a, &b))),
        |mpc| mul_script(mpc, None).map(|_| ()),
    )
    .map_err(|e| e.to_string())?;
    let mut cases = 0;
    for i in 0..MUL_LANES {
        if prod[i] != cfg.mul(a[i], b[i]) {
            return Err(format!("raw product lane {i} mismatch"));
        }
        if fixp[i] != cfg.mul_fixed(a[i], b[i]) {
            return Err(format!("fixed product lane {i} mismatch"));
        }
        cases += 2;
    }
    for r in 0..MUL_K {
        for c in 0..MUL_N {
            let mut acc = 0u64;
            for t in 0..MUL_M {
                acc = cfg.add(acc, cfg.mul(a[r * MUL_M + t], b[t * MUL_N + c]));
            }
            if mat[r * MUL_N + c] != acc {
                return Err(format!("matrix product ({r},{c}) mismatch"));
            }
            cases += 1;
        }
    }
    Ok(cases)
}

const SEL_LANES: usize = 1024;

fn select_script(
    mpc: &mut Mpc,
    vals: Option<&[u64]>,
    sel_public: &Bits,
    consts: &[u64],
) -> crate::Result<[Vec<u64>; 3]> {
    let sv = mpc.share_from(Role::Client, vals, SEL_LANES)?;
    let sel = mpc.xor_const_bits(&Bits::zeros(SEL_LANES), sel_public);
    let m1 = mpc.mux_share(&sel, &sv)?;
    let m1 = mpc.open_elems(tag::OPEN, &m1)?;
    let m2 = mpc.mux_const(&sel, consts)?;
    let m2 = mpc.open_elems(tag::OPEN, &m2)?;
    let ba = mpc.b2a(&sel)?;
    let ba = mpc.open_elems(tag::OPEN, &ba)?;
    Ok([m1, m2, ba])
}

/// Oblivious selection and bit conversion against plaintext selection over
/// random full-width inputs.
fn suite_select(_level: Level) -> SuiteRun {
    let cfg = FixedConfig::DEFAULT;
    let mut rng = ChaCha20Rng::seed_from_u64(0x5E1E_C731);
    let v: Vec<u64> = (0..SEL_LANES).map(|_| rng.next_u64()).collect();
    let c: Vec<u64> = (0..SEL_LANES).map(|_| rng.next_u64()).collect();
    let words: Vec<u64> = (0..SEL_LANES.div_ceil(64)).map(|_| rng.next_u64()).collect();
    let sel = Bits::from_words(SEL_LANES, words);
    let ([m1, m2, ba], _, _) = run_pair(
        cfg,
        0x5E1E,
        |mpc| select_script(mpc, Some(&v), &sel, &c),
        |mpc| select_script(mpc, None, &sel, &c).map(|_| ()),
    )
    .map_err(|e| e.to_string())?;
    let mut cases = 0;
    for i in 0..SEL_LANES {
        let on = sel.get(i) == 1;
        if m1[i] != if on { v[i] } else { 0 } {
            return Err(format!("mux of shared value lane {i} mismatch"));
        }
        if m2[i] != if on { c[i] } else { 0 } {
            return Err(format!("mux of constant lane {i} mismatch"));
        }
        if ba[i] != sel.get(i) {
            return Err(format!("bit conversion lane {i} mismatch"));
        }
        cases += 3;
    }
    Ok(cases)
}

const COMP_ELL: u32 = 12;
const COMP_RING: u64 = 1 << COMP_ELL;
const COMP_CHUNK: u64 = 1 << 16;

fn comp_chunks(level: Level) -> u64 {
    match level {
        Level::Quick => 16,
        Level::Full => COMP_RING * COMP_RING / COMP_CHUNK,
    }
}

/// Lane values and per-lane public thresholds for one comparison chunk.
fn comp_lanes(cfg: FixedConfig, level: Level, chunk: u64) -> (Vec<u64>, Vec<u64>) {
    match level {
        Level::Quick => {
            const BS: [i64; 16] = [
                0, 1, -1, 2, -2, 37, -37, 100, -100, 512, -512, 1365, -1365, 2047, -2047, -2048,
            ];
            let xs: Vec<u64> = (0..COMP_RING).collect();
            let b = cfg.from_signed(BS[chunk as usize]);
            let bs = vec![b; xs.len()];
            (xs, bs)
        }
        Level::Full => {
            let mut xs = Vec::with_capacity(COMP_CHUNK as usize);
            let mut bs = Vec::with_capacity(COMP_CHUNK as usize);
            for i in 0..COMP_CHUNK {
                let idx = chunk * COMP_CHUNK + i;
                xs.push(idx & (COMP_RING - 1));
                bs.push(idx >> COMP_ELL);
            }
            (xs, bs)
        }
    }
}

/// Signed comparison and faithful truncation on a 12-bit ring. Inputs ride as
/// trivial shares (client holds the value, server zero), which is a valid
/// sharing and keeps the transcript small. Quick checks every ring value
/// against a threshold sample plus every shift; full is exhaustive over all
/// value/threshold pairs.
fn suite_comp_trunc(level: Level) -> SuiteRun {
    let cfg = FixedConfig::new(COMP_ELL, 4);
    let client = |mpc: &mut Mpc| {
        let mut bad = 0u64;
        for chunk in 0..comp_chunks(level) {
            let (xs, bs) = comp_lanes(cfg, level, chunk);
            let got = mpc.comp_lt(&xs, &bs)?;
            let got = mpc.open_bits(tag::OPEN, &got)?;
            for i in 0..xs.len() {
                if (got.get(i) == 1) != (cfg.to_signed(xs[i]) < cfg.to_signed(bs[i])) {
                    bad += 1;
                }
            }
        }
        for shift in 1..COMP_ELL {
            let xs: Vec<u64> = (0..COMP_RING).collect();
            let got = mpc.trunc(&xs, shift)?;
            let got = mpc.open_elems(tag::OPEN, &got)?;
            for (i, &x) in xs.iter().enumerate() {
                if got[i] != cfg.truncate_plain(x, shift) {
                    bad += 1;
                }
            }
        }
        Ok(bad)
    };
    let server = |mpc: &mut Mpc| {
        for chunk in 0..comp_chunks(level) {
            let (xs, bs) = comp_lanes(cfg, level, chunk);
            let got = mpc.comp_lt(&vec![0u64; xs.len()], &bs)?;
            mpc.open_bits(tag::OPEN, &got)?;
        }
        for shift in 1..COMP_ELL {
            let got = mpc.trunc(&vec![0u64; COMP_RING as usize], shift)?;
            mpc.open_elems(tag::OPEN, &got)?;
        }
        Ok(())
    };
    let (bad, _, _) = run_pair(cfg, 0xC03B, client, server).map_err(|e| e.to_string())?;
    if bad != 0 {
        return Err(format!("{bad} mismatches against the plaintext oracle"));
    }
    Ok(comp_chunks(level) * comp_lanes(cfg, level, 0).0.len() as u64
        + (COMP_ELL as u64 - 1) * COMP_RING)
}

fn split_tensor(
    rng: &mut ChaCha20Rng,
    cfg: FixedConfig,
    x: &FixedTensor,
) -> (FixedTensor, FixedTensor) {
    let mut c = FixedTensor::zeros(x.rows, x.cols);
    let mut s = FixedTensor::zeros(x.rows, x.cols);
    for i in 0..x.data.len() {
        let r = rng.next_u64() & cfg.mask();
        c.data[i] = r;
        s.data[i] = cfg.sub(x.data[i], r);
    }
    (c, s)
}

fn matmul_trial(cfg: FixedConfig, opts: HeOpts, rng: &mut ChaCha20Rng) -> SuiteRun {
    let k = 1 + (rng.next_u64() % 8) as usize;
    let m = 1 + (rng.next_u64() % 8) as usize;
    let n = 1 + (rng.next_u64() % 8) as usize;
    let xs: Vec<f64> = (0..k * m).map(|_| uniform(rng, -2.0, 2.0)).collect();
    let ws: Vec<f64> = (0..m * n).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let x = FixedTensor::encode(cfg, k, m, &xs);
    let w = FixedTensor::encode(cfg, m, n, &ws);
    let (xc, xsrv) = split_tensor(rng, cfg, &x);
    let want = plain::matmul_trunc(cfg, &x, &w);
    let (yc, ys, _) = run_secure_pair(
        cfg,
        opts,
        rng.next_u64(),
        |ctx| secure_matmul_pt(ctx, &xc, None, n),
        |ctx| secure_matmul_pt(ctx, &xsrv, Some(&w), n),
    )
    .map_err(|e| e.to_string())?;
    for i in 0..k * n {
        if cfg.add(yc.data[i], ys.data[i]) != want.data[i] {
            return Err(format!("mismatch at {i} for k={k} m={m} n={n}"));
        }
    }
    Ok((k * n) as u64)
}

/// HE-assisted matmul against the plain fixed-point product, under the
/// semantic engine on the production ring and the RLWE engine at a plaintext
/// width with noise headroom.
fn suite_he_matmul(level: Level) -> SuiteRun {
    let trials: u32 = match level {
        Level::Quick => 6,
        Level::Full => 30,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(0x4E34_0001);
    let mut cases = 0;
    for _ in 0..trials {
        cases += matmul_trial(FixedConfig::DEFAULT, HeOpts::DEFAULT, &mut rng)?;
    }
    let cfg = FixedConfig::new(16, 4);
    let opts = HeOpts {
        engine: Engine::Rlwe,
        params: HeParams { ring_n: 4096, pt_bits: 16, ..HeParams::DEFAULT },
    };
    for _ in 0..trials.div_ceil(2) {
        cases += matmul_trial(cfg, opts, &mut rng)?;
    }
    Ok(cases)
}

/// Pool cache write/audit/load round-trip plus a corrupted-pool negative:
/// after one flipped share bit, both the audit and the loader must refuse.
fn suite_dealer_audit(_level: Level) -> SuiteRun {
    let budget = Budget {
        beaver: 32,
        bool_words: 16,
        b2a: 16,
        mux: 16,
        comp: 16,
        trunc: BTreeMap::from([(3u32, 8u64)]),
        mat: BTreeMap::from([((2usize, 3usize, 2usize), 2u64)]),
    };
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let path = std::env::temp_dir()
        .join(format!("moemux-selftest-pool-{}-{nanos}.bin", std::process::id()));
    let run = || -> SuiteRun {
        dealer::write_cache(&path, 64, 0xD00D, &budget).map_err(|e| e.to_string())?;
        let report =
            dealer::audit_cache(&path).map_err(|e| format!("fresh cache failed audit: {e}"))?;
        dealer::load_cache(&path).map_err(|e| format!("fresh cache failed to load: {e}"))?;
        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        *bytes.last_mut().unwrap() ^= 1;
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        match dealer::audit_cache(&path) {
            Err(Error::PoolAudit(_)) => {}
            Err(e) => return Err(format!("corrupted cache failed with {e}, not an audit error")),
            Ok(_) => return Err("corrupted cache passed the audit".into()),
        }
        if dealer::load_cache(&path).is_ok() {
            return Err("corrupted cache loaded".into());
        }
        Ok(report.checked.values().sum::<u64>() + 2)
    };
    let out = run();
    let _ = std::fs::remove_file(&path);
    out
}
