//! Two-party secure computation engine for sparse mixture-of-experts
//! inference, built on additive secret sharing over Z_{2^ell} and additive
//! homomorphic encryption, with exact byte and round accounting.
//!
//! Layering, bottom up:
//!
//! * [`fixed`] — fixed-point encoding over the ring.
//! * [`transport`] — channels (in-process, TCP) with byte/round counters.
//! * [`dealer`] — trusted-dealer correlated randomness: Beaver triples,
//!   boolean triples, comparison masks, truncation pairs, mux and bit
//!   conversion records, matrix triples; streaming pools plus a file cache.
//! * [`sharing`] — the share algebra and core subprotocols: open, multiply,
//!   faithful truncation, comparison against public constants, oblivious
//!   selection (mux), bit conversion, top-1/one-hot.
//! * [`he`] — additive HE with two engines (a semantic reference and a real
//!   RLWE instantiation), matmul-friendly plaintext packings, and a shared
//!   wire format with a deterministic size model.
//! * [`plain`] — plaintext fixed-point reference implementations that the
//!   secure protocols must match.
//! * [`protocols`] — composite protocols: secure matmul, GeLU, exp/softmax,
//!   layernorm, attention, and the sparse/dense mixture-of-experts layers.
//! * [`model`] — the toy transformer: weight generation, storage, and the
//!   full plain/secure forward passes.
//! * [`session`] — one full inference session per channel endpoint (config
//!   agreement, pool dealing, forward, output reveal), transport-agnostic.
//! * [`report`] — run-report records serialized to JSON.
//! * [`check`] — self-test suites shared by the CLI and integration tests.

pub mod check;
pub mod dealer;
pub mod error;
pub mod fixed;
pub mod he;
pub mod model;
pub mod plain;
pub mod protocols;
pub mod report;
pub mod session;
pub mod sharing;
pub mod transport;

pub use error::{Error, Result};
pub use fixed::{FixedConfig, FixedTensor};
