//! One complete inference session per channel endpoint: config agreement,
//! correlated-randomness dealing, the secure forward pass, and the output
//! reveal toward the client. Both transports (in-process and TCP) drive the
//! same path, so their transcripts are identical by construction.
//!
//! Wire flow: the server opens with a [`SessionHello`] naming the
//! architecture, ring and HE geometry, run mode, session seed, and the exact
//! correlated-randomness budget (shape-derived, hence public); the client
//! checks the announcement, both sides deal their pool halves from the
//! shared seed, run the forward, and the server sends its output share to
//! the client.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::dealer::{self, Budget, PartyPool};
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, FixedTensor};
use crate::he::{Engine, HeParams};
use crate::model::{estimate_forward, secure_forward, ModelConfig, MoeProtocol, WeightStore};
use crate::protocols::{HeOpts, SecureCtx};
use crate::sharing::Mpc;
use crate::transport::{inproc, tag, Channel, ChannelStats, Role};

pub use crate::model::ForwardTrace;

/// Format marker leading every session announcement.
pub const HELLO_FORMAT: &str = "moemux-session-v1";

/// Server → client session announcement. Everything in it is public:
/// shapes, geometry, run mode, the session seed, and the shape-derived
/// randomness budget (maps flattened to pair lists to stay plain JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHello {
    pub format: String,
    pub config: ModelConfig,
    pub ell: u32,
    pub frac: u32,
    pub engine: Engine,
    pub ring_n: usize,
    pub eta: u32,
    pub protocol: MoeProtocol,
    pub gate_scaling: bool,
    pub seed: u64,
    pub beaver: u64,
    pub bool_words: u64,
    pub b2a: u64,
    pub mux: u64,
    pub comp: u64,
    pub trunc: Vec<(u32, u64)>,
    pub mat: Vec<(usize, usize, usize, u64)>,
}

impl SessionHello {
    fn new(
        store: &WeightStore,
        opts: HeOpts,
        protocol: MoeProtocol,
        gate_scaling: bool,
        seed: u64,
        budget: &Budget,
    ) -> SessionHello {
        SessionHello {
            format: HELLO_FORMAT.into(),
            config: store.config,
            ell: store.fixed.ell,
            frac: store.fixed.frac,
            engine: opts.engine,
            ring_n: opts.params.ring_n,
            eta: opts.params.eta,
            protocol,
            gate_scaling,
            seed,
            beaver: budget.beaver,
            bool_words: budget.bool_words,
            b2a: budget.b2a,
            mux: budget.mux,
            comp: budget.comp,
            trunc: budget.trunc.iter().map(|(&s, &c)| (s, c)).collect(),
            mat: budget.mat.iter().map(|(&(k, m, n), &c)| (k, m, n, c)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != HELLO_FORMAT {
            return Err(Error::malformed(
                "session hello",
                format!("unknown format {:?}", self.format),
            ));
        }
        if self.ell == 0 || self.ell > 64 || self.frac >= self.ell {
            return Err(Error::malformed(
                "session hello",
                format!("ring geometry ell={} frac={}", self.ell, self.frac),
            ));
        }
        if !self.ring_n.is_power_of_two() {
            return Err(Error::malformed(
                "session hello",
                format!("ring_n {} is not a power of two", self.ring_n),
            ));
        }
        self.config.validate()
    }

    pub fn fixed(&self) -> FixedConfig {
        FixedConfig::new(self.ell, self.frac)
    }

    pub fn he_opts(&self) -> HeOpts {
        HeOpts {
            engine: self.engine,
            params: HeParams {
                ring_n: self.ring_n,
                pt_bits: self.ell,
                eta: self.eta,
                ..HeParams::DEFAULT
            },
        }
    }

    pub fn budget(&self) -> Budget {
        Budget {
            beaver: self.beaver,
            bool_words: self.bool_words,
            b2a: self.b2a,
            mux: self.mux,
            comp: self.comp,
            trunc: self.trunc.iter().copied().collect(),
            mat: self.mat.iter().map(|&(k, m, n, c)| ((k, m, n), c)).collect(),
        }
    }
}

/// One endpoint's view of a finished session.
#[derive(Debug)]
pub struct SessionRun {
    pub hello: SessionHello,
    /// Reconstructed output tokens; present on the client endpoint only.
    pub output: Option<FixedTensor>,
    pub trace: ForwardTrace,
    pub stats: ChannelStats,
}

fn forward_party(
    ch: Box<dyn Channel>,
    pool: PartyPool,
    hello: &SessionHello,
    weights: Option<&WeightStore>,
    input: Option<&FixedTensor>,
) -> Result<SessionRun> {
    let mut mpc = Mpc::new(hello.fixed(), ch, pool, hello.seed);
    let mut ctx = SecureCtx::new(&mut mpc, hello.he_opts())?;
    let (share, trace) =
        secure_forward(&mut ctx, &hello.config, weights, input, hello.protocol, hello.gate_scaling)?;
    let output = ctx
        .mpc
        .reveal_to(Role::Client, &share.data)?
        .map(|data| FixedTensor::from_rows(share.rows, share.cols, data));
    // Closing barrier with the client as final sender: once the server sees
    // it, every booking of the session has landed, so both endpoints
    // snapshot the same totals.
    if mpc.is_client() {
        mpc.channel().send(tag::DONE, &[])?;
    } else {
        mpc.channel().recv(tag::DONE)?;
    }
    assert_eq!(
        mpc.pool_used(),
        hello.budget(),
        "session must consume the announced budget exactly"
    );
    Ok(SessionRun { hello: hello.clone(), output, trace, stats: mpc.stats() })
}

/// Server endpoint over an arbitrary channel: derive the budget from a
/// counting dry run, announce the session, deal this half of the pools, run
/// the forward, and send the output share to the client.
pub fn run_server(
    ch: Box<dyn Channel>,
    store: &WeightStore,
    opts: HeOpts,
    protocol: MoeProtocol,
    gate_scaling: bool,
    seed: u64,
) -> Result<SessionRun> {
    let mut ch = ch;
    let (budget, _) = estimate_forward(store, opts, protocol, gate_scaling)?;
    let hello = SessionHello::new(store, opts, protocol, gate_scaling, seed, &budget);
    ch.send(tag::HELLO, &serde_json::to_vec(&hello)?)?;
    let (_, pool) = dealer::deal(store.fixed.ell, seed, &budget);
    forward_party(ch, pool, &hello, Some(store), None)
}

/// Client endpoint over an arbitrary channel: receive and check the
/// announcement, deal this half of the pools, run the forward, and
/// reconstruct the output.
pub fn run_client(ch: Box<dyn Channel>, input: &FixedTensor) -> Result<SessionRun> {
    let mut ch = ch;
    let hello: SessionHello = serde_json::from_slice(&ch.recv(tag::HELLO)?)?;
    hello.validate()?;
    let (pool, _) = dealer::deal(hello.ell, hello.seed, &hello.budget());
    forward_party(ch, pool, &hello, None, Some(input))
}

/// Both endpoints over the in-process transport; returns the (client,
/// server) views.
pub fn run_local(
    store: &WeightStore,
    input: &FixedTensor,
    opts: HeOpts,
    protocol: MoeProtocol,
    gate_scaling: bool,
    seed: u64,
) -> Result<(SessionRun, SessionRun)> {
    let (ch_c, ch_s) = inproc::pair();
    let (res_c, res_s) = thread::scope(|scope| {
        let hc = scope.spawn(move || run_client(Box::new(ch_c), input));
        let hs = scope
            .spawn(move || run_server(Box::new(ch_s), store, opts, protocol, gate_scaling, seed));
        match (hc.join(), hs.join()) {
            (Ok(rc), Ok(rs)) => (rc, rs),
            (Err(p), _) | (_, Err(p)) => std::panic::resume_unwind(p),
        }
    });
    crate::error::join_party_results(res_c, res_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_weights, run_forward};
    use crate::transport::tcp;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::net::TcpListener;
    use std::time::Duration;

    const CFG: FixedConfig = FixedConfig::DEFAULT;

    fn small_setup() -> (WeightStore, FixedTensor) {
        let config = ModelConfig {
            d_model: 8,
            d_ff: 8,
            num_heads: 2,
            num_layers: 2,
            n_experts: 3,
            k_experts: 1,
            seq_len: 3,
        };
        let store = gen_weights(config, CFG, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let vals: Vec<f64> = (0..config.seq_len * config.d_model)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect();
        let input = FixedTensor::encode(CFG, config.seq_len, config.d_model, &vals);
        (store, input)
    }

    fn free_addr() -> String {
        // Bind to an ephemeral port, then release it for the test pair.
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap().to_string();
        drop(l);
        addr
    }

    #[test]
    fn local_session_matches_direct_run() {
        let (store, input) = small_setup();
        let (client, server) =
            run_local(&store, &input, HeOpts::DEFAULT, MoeProtocol::Sparse, true, 21).unwrap();
        let (want, want_trace, _) =
            run_forward(&store, &input, HeOpts::DEFAULT, 21, MoeProtocol::Sparse, true).unwrap();
        assert_eq!(client.output.as_ref().unwrap().data, want.data);
        assert!(server.output.is_none());
        assert_eq!(client.stats, server.stats);
        assert_eq!(client.hello, server.hello);
        // Phase traces are client-side measurements; the server's deltas are
        // timing-dependent and carry no meaning.
        assert_eq!(client.trace.total, want_trace.total);
        assert_eq!(client.trace.counters, want_trace.counters);
    }

    #[test]
    fn tcp_session_matches_inproc_exactly() {
        let (store, input) = small_setup();
        let (ic, is) =
            run_local(&store, &input, HeOpts::DEFAULT, MoeProtocol::Sparse, false, 9).unwrap();

        let addr = free_addr();
        let srv_addr = addr.clone();
        let (tc, ts) = thread::scope(|scope| {
            let hs = scope.spawn(move || {
                let ch = tcp::listen(&srv_addr, Duration::from_secs(10)).unwrap();
                run_server(Box::new(ch), &store, HeOpts::DEFAULT, MoeProtocol::Sparse, false, 9)
                    .unwrap()
            });
            let ch = tcp::connect(&addr, Duration::from_secs(10)).unwrap();
            let tc = run_client(Box::new(ch), &input).unwrap();
            (tc, hs.join().unwrap())
        });

        assert_eq!(tc.output.as_ref().unwrap().data, ic.output.as_ref().unwrap().data);
        assert_eq!(tc.stats, ic.stats, "client counters must not depend on transport");
        assert_eq!(ts.stats, is.stats, "server counters must not depend on transport");
        assert_eq!(tc.hello, ic.hello);
    }

    #[test]
    fn hello_survives_json_and_rebuilds_budget() {
        let (store, _) = small_setup();
        let (budget, _) =
            estimate_forward(&store, HeOpts::DEFAULT, MoeProtocol::Sparse, true).unwrap();
        let hello =
            SessionHello::new(&store, HeOpts::DEFAULT, MoeProtocol::Sparse, true, 3, &budget);
        let back: SessionHello =
            serde_json::from_slice(&serde_json::to_vec(&hello).unwrap()).unwrap();
        assert_eq!(back, hello);
        assert_eq!(back.budget(), budget);
        assert_eq!(back.fixed(), store.fixed);
        assert_eq!(back.he_opts(), HeOpts::DEFAULT);
        assert!(back.validate().is_ok());
    }

    #[test]
    fn client_rejects_malformed_hello() {
        let (store, input) = small_setup();
        let (budget, _) =
            estimate_forward(&store, HeOpts::DEFAULT, MoeProtocol::Sparse, true).unwrap();
        let mut hello =
            SessionHello::new(&store, HeOpts::DEFAULT, MoeProtocol::Sparse, true, 3, &budget);
        hello.format = "moemux-session-v0".into();
        assert!(matches!(hello.validate(), Err(Error::Malformed { .. })));
        hello = SessionHello::new(&store, HeOpts::DEFAULT, MoeProtocol::Sparse, true, 3, &budget);
        hello.frac = hello.ell;
        assert!(matches!(hello.validate(), Err(Error::Malformed { .. })));

        let (ch_c, ch_s) = inproc::pair();
        let (res_c, _) = thread::scope(|scope| {
            let hc = scope.spawn(move || run_client(Box::new(ch_c), &input));
            let hs = scope.spawn(move || {
                let mut ch = ch_s;
                ch.send(tag::HELLO, b"{\"format\":\"bogus\"}").unwrap();
            });
            (hc.join().unwrap(), hs.join().unwrap())
        });
        assert!(res_c.is_err());
    }
}
