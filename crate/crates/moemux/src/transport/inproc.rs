//! In-process transport: two endpoints joined by message queues, sharing one
//! counter block so both parties observe identical statistics.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};

use super::{check_tag, Channel, ChannelStats, Role, StatsInner};

const RECV_TIMEOUT: Duration = Duration::from_secs(120);

pub struct InprocChannel {
    role: Role,
    tx: Sender<(u16, Vec<u8>)>,
    rx: Receiver<(u16, Vec<u8>)>,
    shared: Arc<Mutex<StatsInner>>,
}

/// Build a connected (client, server) endpoint pair.
pub fn pair() -> (InprocChannel, InprocChannel) {
    let (tx_c, rx_s) = channel();
    let (tx_s, rx_c) = channel();
    let shared = Arc::new(Mutex::new(StatsInner::default()));
    let client = InprocChannel {
        role: Role::Client,
        tx: tx_c,
        rx: rx_c,
        shared: Arc::clone(&shared),
    };
    let server = InprocChannel { role: Role::Server, tx: tx_s, rx: rx_s, shared };
    (client, server)
}

impl InprocChannel {
    fn push(&self, tag: u16, payload: &[u8]) -> Result<()> {
        self.tx
            .send((tag, payload.to_vec()))
            .map_err(|_| Error::Timeout("peer endpoint dropped".into()))
    }

    fn pull(&self, tag: u16) -> Result<Vec<u8>> {
        match self.rx.recv_timeout(RECV_TIMEOUT) {
            Ok((got, payload)) => {
                check_tag(tag, got)?;
                Ok(payload)
            }
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::Timeout(format!("no message with tag {tag:#06x} within {RECV_TIMEOUT:?}")))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Timeout("peer endpoint dropped".into()))
            }
        }
    }
}

impl Channel for InprocChannel {
    fn role(&self) -> Role {
        self.role
    }

    fn send(&mut self, tag: u16, payload: &[u8]) -> Result<()> {
        // Book before pushing so the receiver can never observe a message
        // whose bytes are not yet in the shared block.
        self.shared.lock().unwrap().on_message(self.role.out_dir(), payload.len());
        self.push(tag, payload)
    }

    fn recv(&mut self, tag: u16) -> Result<Vec<u8>> {
        // The sender already counted this message.
        self.pull(tag)
    }

    fn exchange(&mut self, tag: u16, payload: &[u8]) -> Result<Vec<u8>> {
        self.push(tag, payload)?;
        let theirs = self.pull(tag)?;
        // Exactly one side books the single shared round.
        if self.role.is_client() {
            self.shared.lock().unwrap().on_exchange(payload.len(), theirs.len());
        }
        Ok(theirs)
    }

    fn stats(&self) -> ChannelStats {
        self.shared.lock().unwrap().snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{tag, FRAMING_BYTES};
    use std::thread;

    #[test]
    fn sequential_and_exchange_counting() {
        let (mut c, mut s) = pair();
        let handle = thread::spawn(move || {
            let m = s.recv(tag::OPEN).unwrap();
            assert_eq!(m, vec![1, 2, 3]);
            s.send(tag::OPEN, &[9; 5]).unwrap();
            let e = s.exchange(tag::MUL_OPEN, &[7; 4]).unwrap();
            assert_eq!(e.len(), 2);
            s
        });
        c.send(tag::OPEN, &[1, 2, 3]).unwrap();
        let m = c.recv(tag::OPEN).unwrap();
        assert_eq!(m.len(), 5);
        let e = c.exchange(tag::MUL_OPEN, &[8; 2]).unwrap();
        assert_eq!(e, vec![7; 4]);
        // Snapshot only after both endpoints are quiescent: the client books
        // the exchange after its recv, which may race a server-side snapshot.
        let server_stats = handle.join().unwrap().stats();
        let stats = c.stats();
        assert_eq!(stats, server_stats, "both endpoints see the same counters");
        assert_eq!(stats.rounds, 3); // c->s, s->c, exchange
        assert_eq!(stats.payload_c_to_s, 3 + 2);
        assert_eq!(stats.payload_s_to_c, 5 + 4);
        assert_eq!(stats.msgs_c_to_s, 2);
        assert_eq!(stats.msgs_s_to_c, 2);
        assert_eq!(stats.total_framing(), 4 * FRAMING_BYTES);
    }

    #[test]
    fn tag_mismatch_is_desync() {
        let (mut c, mut s) = pair();
        c.send(tag::OPEN, &[0]).unwrap();
        let err = s.recv(tag::MUX_OPEN).unwrap_err();
        assert!(matches!(err, Error::Desync { expected: 0x0013, got: 0x0010 }), "{err}");
    }

    #[test]
    fn dropped_peer_is_timeout() {
        let (mut c, s) = pair();
        drop(s);
        assert!(matches!(c.send(tag::OPEN, &[0]), Err(Error::Timeout(_))));
    }
}
