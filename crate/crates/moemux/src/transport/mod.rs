//! Party-to-party channels with exact byte and round accounting.
//!
//! Every protocol message crosses a [`Channel`]. Channels count payload bytes
//! per direction, a fixed per-message framing overhead ([`FRAMING_BYTES`]),
//! message counts, and communication rounds. Rounds follow the
//! direction-reversal rule: the first message starts round one, and a new
//! round begins whenever traffic reverses direction. A bidirectional
//! [`Channel::exchange`] (both parties send, then both receive) costs exactly
//! one round regardless of transport. The in-process and TCP transports
//! produce identical counters for the same protocol script by construction.

pub mod inproc;
pub mod tcp;

use crate::error::{Error, Result};

/// Which of the two parties an endpoint belongs to. The client holds the
/// model input and the HE secret key; the server holds the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    Server,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Client => Role::Server,
            Role::Server => Role::Client,
        }
    }

    #[inline]
    pub fn is_client(self) -> bool {
        matches!(self, Role::Client)
    }

    /// Direction of a message sent by this role.
    #[inline]
    fn out_dir(self) -> Dir {
        match self {
            Role::Client => Dir::CToS,
            Role::Server => Dir::SToC,
        }
    }
}

/// Virtual framing charged per message: 8-byte length prefix + 2-byte tag.
/// The TCP transport puts exactly these on the wire; the in-process transport
/// charges the same amount so counters match across transports.
pub const FRAMING_BYTES: u64 = 10;

/// Message tags. A tag mismatch on receive means the parties are out of step
/// and surfaces as [`Error::Desync`].
pub mod tag {
    pub const HELLO: u16 = 0x0001;
    pub const INPUT_SHARE: u16 = 0x0002;
    pub const OUTPUT_SHARE: u16 = 0x0003;
    pub const DONE: u16 = 0x0004;
    pub const OPEN: u16 = 0x0010;
    pub const MUL_OPEN: u16 = 0x0011;
    pub const AND_OPEN: u16 = 0x0012;
    pub const MUX_OPEN: u16 = 0x0013;
    pub const B2A_OPEN: u16 = 0x0014;
    pub const COMP_OPEN: u16 = 0x0015;
    pub const TRUNC_OPEN: u16 = 0x0016;
    pub const MATMUL_OPEN: u16 = 0x0017;
    pub const HE_CT: u16 = 0x0020;
    pub const HE_RESP: u16 = 0x0021;
    pub const GATE_CT: u16 = 0x0022;
}

/// Traffic direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    CToS,
    SToC,
}

/// Cumulative per-channel counters, one shared truth for both directions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct ChannelStats {
    pub payload_c_to_s: u64,
    pub payload_s_to_c: u64,
    pub framing_c_to_s: u64,
    pub framing_s_to_c: u64,
    pub msgs_c_to_s: u64,
    pub msgs_s_to_c: u64,
    pub rounds: u64,
}

impl ChannelStats {
    pub fn total_payload(&self) -> u64 {
        self.payload_c_to_s + self.payload_s_to_c
    }

    pub fn total_framing(&self) -> u64 {
        self.framing_c_to_s + self.framing_s_to_c
    }

    /// Payload plus framing, both directions: the number fed to time models.
    pub fn total_bytes(&self) -> u64 {
        self.total_payload() + self.total_framing()
    }

    /// Counter delta since an earlier snapshot of the same channel.
    pub fn since(&self, earlier: &ChannelStats) -> ChannelStats {
        ChannelStats {
            payload_c_to_s: self.payload_c_to_s - earlier.payload_c_to_s,
            payload_s_to_c: self.payload_s_to_c - earlier.payload_s_to_c,
            framing_c_to_s: self.framing_c_to_s - earlier.framing_c_to_s,
            framing_s_to_c: self.framing_s_to_c - earlier.framing_s_to_c,
            msgs_c_to_s: self.msgs_c_to_s - earlier.msgs_c_to_s,
            msgs_s_to_c: self.msgs_s_to_c - earlier.msgs_s_to_c,
            rounds: self.rounds - earlier.rounds,
        }
    }
}

/// Mutable counter state plus the direction memory the round rule needs.
#[derive(Debug, Default)]
pub(crate) struct StatsInner {
    stats: ChannelStats,
    last_dir: Option<Dir>,
}

impl StatsInner {
    pub(crate) fn on_message(&mut self, dir: Dir, payload: usize) {
        if self.last_dir != Some(dir) {
            self.stats.rounds += 1;
            self.last_dir = Some(dir);
        }
        match dir {
            Dir::CToS => {
                self.stats.payload_c_to_s += payload as u64;
                self.stats.framing_c_to_s += FRAMING_BYTES;
                self.stats.msgs_c_to_s += 1;
            }
            Dir::SToC => {
                self.stats.payload_s_to_c += payload as u64;
                self.stats.framing_s_to_c += FRAMING_BYTES;
                self.stats.msgs_s_to_c += 1;
            }
        }
    }

    /// One simultaneous send from each side: a single round, after which
    /// neither direction is "open" (the next message starts a fresh round).
    pub(crate) fn on_exchange(&mut self, c_to_s_payload: usize, s_to_c_payload: usize) {
        self.stats.rounds += 1;
        self.last_dir = None;
        self.stats.payload_c_to_s += c_to_s_payload as u64;
        self.stats.framing_c_to_s += FRAMING_BYTES;
        self.stats.msgs_c_to_s += 1;
        self.stats.payload_s_to_c += s_to_c_payload as u64;
        self.stats.framing_s_to_c += FRAMING_BYTES;
        self.stats.msgs_s_to_c += 1;
    }

    pub(crate) fn snapshot(&self) -> ChannelStats {
        self.stats
    }
}

/// One party's end of the link.
pub trait Channel: Send {
    fn role(&self) -> Role;

    /// Send one tagged message.
    fn send(&mut self, tag: u16, payload: &[u8]) -> Result<()>;

    /// Receive one message, checking its tag.
    fn recv(&mut self, tag: u16) -> Result<Vec<u8>>;

    /// Both parties call this with their outbound payload; each gets the
    /// peer's. Counts as exactly one round.
    fn exchange(&mut self, tag: u16, payload: &[u8]) -> Result<Vec<u8>>;

    /// Snapshot of the counters as seen from this endpoint.
    fn stats(&self) -> ChannelStats;
}

pub(crate) fn check_tag(expected: u16, got: u16) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Desync { expected, got })
    }
}

/// Link characteristics for modeled wall-clock time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetProfile {
    pub name: &'static str,
    pub bandwidth_bits_per_s: f64,
    pub latency_s: f64,
}

impl NetProfile {
    pub const LAN: NetProfile = NetProfile {
        name: "lan",
        bandwidth_bits_per_s: 1.0e9,
        latency_s: 0.5e-3,
    };

    pub const WAN: NetProfile = NetProfile {
        name: "wan",
        bandwidth_bits_per_s: 400.0e6,
        latency_s: 4.0e-3,
    };

    /// `lan`/`wan` profiles; `none` disables time modeling.
    pub fn from_name(name: &str) -> Result<Option<NetProfile>> {
        match name {
            "lan" => Ok(Some(NetProfile::LAN)),
            "wan" => Ok(Some(NetProfile::WAN)),
            "none" => Ok(None),
            other => Err(Error::InvalidArgument(format!(
                "unknown net profile {other:?} (expected lan, wan, or none)"
            ))),
        }
    }

    /// rounds x latency + serialized bits / bandwidth.
    pub fn modeled_time_s(&self, stats: &ChannelStats) -> f64 {
        stats.rounds as f64 * self.latency_s
            + (stats.total_bytes() as f64 * 8.0) / self.bandwidth_bits_per_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_rule_direction_reversal() {
        let mut inner = StatsInner::default();
        inner.on_message(Dir::CToS, 100); // round 1
        inner.on_message(Dir::CToS, 50); // same direction, still round 1
        inner.on_message(Dir::SToC, 10); // round 2
        inner.on_message(Dir::CToS, 1); // round 3
        let s = inner.snapshot();
        assert_eq!(s.rounds, 3);
        assert_eq!(s.payload_c_to_s, 151);
        assert_eq!(s.payload_s_to_c, 10);
        assert_eq!(s.msgs_c_to_s, 3);
        assert_eq!(s.framing_c_to_s, 3 * FRAMING_BYTES);
    }

    #[test]
    fn exchange_is_one_round_and_resets_direction() {
        let mut inner = StatsInner::default();
        inner.on_exchange(8, 8); // round 1
        inner.on_exchange(8, 8); // round 2
        inner.on_message(Dir::CToS, 4); // round 3: no open direction after exchange
        let s = inner.snapshot();
        assert_eq!(s.rounds, 3);
        assert_eq!(s.payload_c_to_s, 20);
        assert_eq!(s.payload_s_to_c, 16);
    }

    #[test]
    fn modeled_time_pinned_examples() {
        let stats = ChannelStats {
            payload_c_to_s: 500_000,
            payload_s_to_c: 500_000,
            framing_c_to_s: 0,
            framing_s_to_c: 0,
            msgs_c_to_s: 0,
            msgs_s_to_c: 0,
            rounds: 10,
        };
        // LAN: 10 * 0.5ms + 8e6 bits / 1e9 bps = 5ms + 8ms
        let lan = NetProfile::LAN.modeled_time_s(&stats);
        assert!((lan - 0.013).abs() < 1e-12, "lan {lan}");
        // WAN: 10 * 4ms + 8e6 / 4e8 = 40ms + 20ms
        let wan = NetProfile::WAN.modeled_time_s(&stats);
        assert!((wan - 0.060).abs() < 1e-12, "wan {wan}");
    }

    #[test]
    fn profile_names() {
        assert_eq!(NetProfile::from_name("lan").unwrap().unwrap().name, "lan");
        assert_eq!(NetProfile::from_name("wan").unwrap().unwrap().latency_s, 4.0e-3);
        assert!(NetProfile::from_name("none").unwrap().is_none());
        assert!(NetProfile::from_name("dsl").is_err());
    }
}
