//! TCP transport. Wire frame: 8-byte little-endian payload length, 2-byte
//! little-endian tag, payload. Each endpoint keeps its own counters; because
//! both parties run the same message script, the counters agree with each
//! other and with the in-process transport.
//!
//! `exchange` is realized as role-ordered send/recv (client writes first,
//! server reads first) so neither side can wedge on full socket buffers, but
//! it is still booked as a single simultaneous round.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::{check_tag, Channel, ChannelStats, Role, StatsInner};

const IO_TIMEOUT: Duration = Duration::from_secs(120);
const CONNECT_RETRY: Duration = Duration::from_millis(100);

#[derive(Debug)]
pub struct TcpChannel {
    role: Role,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    stats: StatsInner,
}

/// Server side: accept exactly one peer on `addr`.
pub fn listen(addr: &str, wait: Duration) -> Result<TcpChannel> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + wait;
    let stream = loop {
        match listener.accept() {
            Ok((stream, _)) => break stream,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Timeout(format!("no client connected to {addr} within {wait:?}")));
                }
                std::thread::sleep(CONNECT_RETRY);
            }
            Err(e) => return Err(e.into()),
        }
    };
    stream.set_nonblocking(false)?;
    TcpChannel::from_stream(Role::Server, stream)
}

/// Client side: connect to `addr`, retrying until `wait` elapses so the
/// server process may come up second.
pub fn connect(addr: &str, wait: Duration) -> Result<TcpChannel> {
    let deadline = Instant::now() + wait;
    let stream = loop {
        match TcpStream::connect(addr) {
            Ok(stream) => break stream,
            Err(_) if Instant::now() < deadline => std::thread::sleep(CONNECT_RETRY),
            Err(e) => {
                return Err(Error::Timeout(format!("could not reach server at {addr} within {wait:?}: {e}")));
            }
        }
    };
    TcpChannel::from_stream(Role::Client, stream)
}

impl TcpChannel {
    fn from_stream(role: Role, stream: TcpStream) -> Result<TcpChannel> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(TcpChannel { role, reader, writer, stats: StatsInner::default() })
    }

    fn write_frame(&mut self, tag: u16, payload: &[u8]) -> Result<()> {
        self.writer.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io_map)?;
        self.writer.write_all(&tag.to_le_bytes()).map_err(io_map)?;
        self.writer.write_all(payload).map_err(io_map)?;
        self.writer.flush().map_err(io_map)?;
        Ok(())
    }

    fn read_frame(&mut self, tag: u16) -> Result<Vec<u8>> {
        let mut len_buf = [0u8; 8];
        self.reader.read_exact(&mut len_buf).map_err(io_map)?;
        let mut tag_buf = [0u8; 2];
        self.reader.read_exact(&mut tag_buf).map_err(io_map)?;
        check_tag(tag, u16::from_le_bytes(tag_buf))?;
        let len = u64::from_le_bytes(len_buf) as usize;
        let mut payload = vec![0u8; len];
        self.reader.read_exact(&mut payload).map_err(io_map)?;
        Ok(payload)
    }
}

fn io_map(e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
            Error::Timeout("peer stopped responding".into())
        }
        std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::ConnectionReset => {
            Error::Timeout("peer closed the connection".into())
        }
        _ => Error::Io(e),
    }
}

impl Channel for TcpChannel {
    fn role(&self) -> Role {
        self.role
    }

    fn send(&mut self, tag: u16, payload: &[u8]) -> Result<()> {
        self.write_frame(tag, payload)?;
        self.stats.on_message(self.role.out_dir(), payload.len());
        Ok(())
    }

    fn recv(&mut self, tag: u16) -> Result<Vec<u8>> {
        let payload = self.read_frame(tag)?;
        self.stats.on_message(self.role.other().out_dir(), payload.len());
        Ok(payload)
    }

    fn exchange(&mut self, tag: u16, payload: &[u8]) -> Result<Vec<u8>> {
        let theirs = match self.role {
            Role::Client => {
                self.write_frame(tag, payload)?;
                self.read_frame(tag)?
            }
            Role::Server => {
                let theirs = self.read_frame(tag)?;
                self.write_frame(tag, payload)?;
                theirs
            }
        };
        let (c2s, s2c) = match self.role {
            Role::Client => (payload.len(), theirs.len()),
            Role::Server => (theirs.len(), payload.len()),
        };
        self.stats.on_exchange(c2s, s2c);
        Ok(theirs)
    }

    fn stats(&self) -> ChannelStats {
        self.stats.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{inproc, tag};
    use std::thread;

    fn free_addr() -> String {
        // Bind to an ephemeral port, then release it for the test pair.
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap().to_string();
        drop(l);
        addr
    }

    /// A fixed little message script run over any channel.
    fn run_script(ch: &mut dyn Channel) -> ChannelStats {
        match ch.role() {
            Role::Client => {
                ch.send(tag::OPEN, &[1; 100]).unwrap();
                let r = ch.recv(tag::OPEN).unwrap();
                assert_eq!(r, vec![2; 33]);
                let e = ch.exchange(tag::MUL_OPEN, &[3; 16]).unwrap();
                assert_eq!(e, vec![4; 16]);
                ch.send(tag::HE_CT, &[5; 7]).unwrap();
                ch.send(tag::HE_CT, &[5; 7]).unwrap();
            }
            Role::Server => {
                let r = ch.recv(tag::OPEN).unwrap();
                assert_eq!(r, vec![1; 100]);
                ch.send(tag::OPEN, &[2; 33]).unwrap();
                let e = ch.exchange(tag::MUL_OPEN, &[4; 16]).unwrap();
                assert_eq!(e, vec![3; 16]);
                assert_eq!(ch.recv(tag::HE_CT).unwrap().len(), 7);
                assert_eq!(ch.recv(tag::HE_CT).unwrap().len(), 7);
            }
        }
        ch.stats()
    }

    #[test]
    fn tcp_counters_match_inproc() {
        let addr = free_addr();
        let srv_addr = addr.clone();
        let server = thread::spawn(move || {
            let mut ch = listen(&srv_addr, Duration::from_secs(10)).unwrap();
            run_script(&mut ch)
        });
        let mut client = connect(&addr, Duration::from_secs(10)).unwrap();
        let tcp_client_stats = run_script(&mut client);
        let tcp_server_stats = server.join().unwrap();

        let (mut ic, mut is) = inproc::pair();
        let inproc_server = thread::spawn(move || run_script(&mut is));
        let inproc_stats = run_script(&mut ic);
        inproc_server.join().unwrap();

        assert_eq!(tcp_client_stats, inproc_stats, "tcp vs inproc");
        assert_eq!(tcp_server_stats, inproc_stats, "tcp server vs inproc");
        assert_eq!(tcp_client_stats.rounds, 4); // c->s, s->c, exchange, c->s x2
        assert_eq!(tcp_client_stats.payload_c_to_s, 100 + 16 + 14);
        assert_eq!(tcp_client_stats.payload_s_to_c, 33 + 16);
    }

    #[test]
    fn connect_timeout_when_no_server() {
        let addr = free_addr();
        let err = connect(&addr, Duration::from_millis(300)).unwrap_err();
        assert!(matches!(err, Error::Timeout(_)), "{err}");
    }

    #[test]
    fn listen_timeout_when_no_client() {
        let addr = free_addr();
        let err = listen(&addr, Duration::from_millis(300)).unwrap_err();
        assert!(matches!(err, Error::Timeout(_)), "{err}");
    }

    #[test]
    fn tag_mismatch_detected_over_tcp() {
        let addr = free_addr();
        let srv_addr = addr.clone();
        let server = thread::spawn(move || {
            let mut ch = listen(&srv_addr, Duration::from_secs(10)).unwrap();
            ch.recv(tag::MUX_OPEN)
        });
        let mut client = connect(&addr, Duration::from_secs(10)).unwrap();
        client.send(tag::OPEN, &[0]).unwrap();
        let err = server.join().unwrap().unwrap_err();
        assert!(matches!(err, Error::Desync { .. }), "{err}");
    }
}
