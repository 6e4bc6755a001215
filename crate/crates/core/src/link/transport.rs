use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// One datagram per call in each direction.
pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// `Ok(None)` when nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>>;
}

/// In-process datagram pipe; `pair` returns the two connected ends.
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemoryTransport {
    pub fn pair() -> (MemoryTransport, MemoryTransport) {
        let (a_tx, a_rx) = mpsc::channel();
        let (b_tx, b_rx) = mpsc::channel();
        (
            MemoryTransport { tx: a_tx, rx: b_rx },
            MemoryTransport { tx: b_tx, rx: a_rx },
        )
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        // A vanished peer looks like packet loss, as on UDP.
        let _ = self.tx.send(bytes.to_vec());
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        match self.rx.recv_timeout(timeout) {
            Ok(b) => Ok(Some(b)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

/// UDP socket whose receive side runs on its own thread and feeds a single
/// ordered queue.
pub struct UdpTransport {
    socket: UdpSocket,
    peer: SocketAddr,
    rx: Receiver<Vec<u8>>,
    stop: Arc<AtomicBool>,
    reader: Option<JoinHandle<()>>,
}

fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("cannot resolve `{addr}`")))
}

impl UdpTransport {
    pub fn bind(bind: &str, peer: &str) -> io::Result<Self> {
        let socket = UdpSocket::bind(resolve(bind)?)?;
        let peer = resolve(peer)?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let reader_socket = socket.try_clone()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let reader = std::thread::Builder::new()
            .name("udp-recv".into())
            .spawn(move || {
                let mut buf = vec![0u8; 65_536];
                while !stop_flag.load(Ordering::Relaxed) {
                    match reader_socket.recv_from(&mut buf) {
                        Ok((n, from)) if from == peer => {
                            if tx.send(buf[..n].to_vec()).is_err() {
                                break;
                            }
                        }
                        Ok(_) => {}
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                        // ICMP port-unreachable from an absent peer surfaces here.
                        Err(_) => std::thread::sleep(Duration::from_millis(5)),
                    }
                }
            })?;
        Ok(UdpTransport {
            socket,
            peer,
            rx,
            stop,
            reader: Some(reader),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self.socket.send_to(bytes, self.peer) {
            Ok(_) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        match self.rx.recv_timeout(timeout) {
            Ok(b) => Ok(Some(b)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(io::Error::other("udp receive thread stopped")),
        }
    }
}

impl Drop for UdpTransport {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_pair_delivers_in_order() {
        let (mut a, mut b) = MemoryTransport::pair();
        a.send(&[1]).unwrap();
        a.send(&[2, 3]).unwrap();
        assert_eq!(b.recv(Duration::from_millis(10)).unwrap(), Some(vec![1]));
        assert_eq!(b.recv(Duration::from_millis(10)).unwrap(), Some(vec![2, 3]));
        assert_eq!(b.recv(Duration::from_millis(1)).unwrap(), None);
    }

    #[test]
    fn udp_loopback() {
        let probe_a = UdpSocket::bind("127.0.0.1:0").unwrap();
        let probe_b = UdpSocket::bind("127.0.0.1:0").unwrap();
        let (pa, pb) = (probe_a.local_addr().unwrap(), probe_b.local_addr().unwrap());
        drop((probe_a, probe_b));
        let mut a = UdpTransport::bind(&pa.to_string(), &pb.to_string()).unwrap();
        let mut b = UdpTransport::bind(&pb.to_string(), &pa.to_string()).unwrap();
        a.send(b"ping").unwrap();
        assert_eq!(b.recv(Duration::from_secs(2)).unwrap(), Some(b"ping".to_vec()));
    }
}
