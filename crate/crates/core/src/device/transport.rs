//! Where the simulated UART byte stream goes: an in-memory buffer, one TCP
//! client, or a pseudo-terminal another program can open like a serial port.

use std::fs::File;
use std::io::{self, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

/// How long a pty write may wait for the peer to drain the line.
pub const PTY_STALL_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Mem,
    /// Listen on this address and stream to the first client.
    Tcp(String),
    Pty,
}

impl std::str::FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mem" => Ok(Transport::Mem),
            "tcp" => Ok(Transport::Tcp("127.0.0.1:0".into())),
            "pty" => Ok(Transport::Pty),
            s if s.starts_with("tcp:") => Ok(Transport::Tcp(s[4..].into())),
            other => Err(format!("unknown transport {other:?} (mem|tcp[:ADDR]|pty)")),
        }
    }
}

pub enum Link {
    Mem(Vec<u8>),
    Tcp(TcpStream),
    Pty {
        master: File,
        // held open so the peer sees a live line until we are done
        _slave: File,
    },
}

impl Transport {
    /// Opens the link. `announce` gets the address or device path a peer
    /// should connect to, before any blocking accept.
    pub fn open(&self, announce: impl FnOnce(&str)) -> io::Result<Link> {
        match self {
            Transport::Mem => Ok(Link::Mem(Vec::new())),
            Transport::Tcp(addr) => {
                let listener = TcpListener::bind(addr.as_str())?;
                announce(&listener.local_addr()?.to_string());
                let (stream, _) = listener.accept()?;
                stream.set_nodelay(true)?;
                Ok(Link::Tcp(stream))
            }
            Transport::Pty => {
                let (master, slave, path) = open_pty()?;
                announce(&path);
                Ok(Link::Pty { master, _slave: slave })
            }
        }
    }
}

impl Link {
    /// The buffered bytes of an in-memory link.
    pub fn into_mem(self) -> Option<Vec<u8>> {
        match self {
            Link::Mem(v) => Some(v),
            _ => None,
        }
    }
}

impl Write for Link {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Link::Mem(v) => v.write(buf),
            Link::Tcp(s) => s.write(buf),
            Link::Pty { master, .. } => pty_write(master, buf, PTY_STALL_TIMEOUT),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Link::Mem(_) => Ok(()),
            Link::Tcp(s) => s.flush(),
            Link::Pty { master, _slave } => {
                master.flush()?;
                pty_drain(_slave, PTY_STALL_TIMEOUT)
            }
        }
    }
}

/// Writes to a non-blocking pty master, waiting up to `stall` for room. With
/// nobody reading the slave the kernel queue fills and the write fails
/// instead of hanging.
#[cfg(unix)]
fn pty_write(master: &mut File, buf: &[u8], stall: Duration) -> io::Result<usize> {
    use std::os::fd::AsRawFd;
    loop {
        match master.write(buf) {
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                let mut pfd = libc::pollfd { fd: master.as_raw_fd(), events: libc::POLLOUT, revents: 0 };
                // SAFETY: one valid pollfd for the duration of the call
                let rc = unsafe { libc::poll(&mut pfd, 1, stall.as_millis().min(i32::MAX as u128) as libc::c_int) };
                match rc {
                    0 => {
                        return Err(io::Error::new(
                            io::ErrorKind::TimedOut,
                            format!("no reader drained the pty for {} s", stall.as_secs()),
                        ))
                    }
                    rc if rc < 0 && io::Error::last_os_error().kind() != io::ErrorKind::Interrupted => {
                        return Err(io::Error::last_os_error())
                    }
                    _ => {}
                }
            }
            other => return other,
        }
    }
}

/// Waits until the peer has read everything queued on the line; closing the
/// master earlier hangs up the line and discards the unread tail.
#[cfg(unix)]
fn pty_drain(slave: &File, stall: Duration) -> io::Result<()> {
    use std::os::fd::AsRawFd;
    let step = Duration::from_millis(5);
    let mut waited = Duration::ZERO;
    let mut last = usize::MAX;
    loop {
        let mut queued: libc::c_int = 0;
        // SAFETY: FIONREAD writes one int
        if unsafe { libc::ioctl(slave.as_raw_fd(), libc::FIONREAD, &mut queued) } < 0 {
            return Err(io::Error::last_os_error());
        }
        let queued = queued.max(0) as usize;
        if queued == 0 {
            return Ok(());
        }
        // the stall clock restarts whenever the reader makes progress
        if queued < last {
            waited = Duration::ZERO;
            last = queued;
        }
        if waited >= stall {
            return Err(io::Error::new(
                io::ErrorKind::TimedOut,
                format!("{queued} bytes still unread on the pty after {} s", stall.as_secs()),
            ));
        }
        std::thread::sleep(step);
        waited += step;
    }
}

#[cfg(not(unix))]
fn pty_drain(_slave: &File, _stall: Duration) -> io::Result<()> {
    Ok(())
}

#[cfg(not(unix))]
fn pty_write(master: &mut File, buf: &[u8], _stall: Duration) -> io::Result<usize> {
    master.write(buf)
}

#[cfg(unix)]
fn open_pty() -> io::Result<(File, File, String)> {
    use std::ffi::CStr;
    use std::os::fd::FromRawFd;

    fn check(rc: libc::c_int) -> io::Result<libc::c_int> {
        if rc < 0 {
            Err(io::Error::last_os_error())
        } else {
            Ok(rc)
        }
    }

    // SAFETY: plain libc calls on descriptors we own; every fd is wrapped in
    // a File right after it is created so it is closed on all paths.
    unsafe {
        let m = check(libc::posix_openpt(libc::O_RDWR | libc::O_NOCTTY))?;
        let master = File::from_raw_fd(m);
        let flags = check(libc::fcntl(m, libc::F_GETFL))?;
        check(libc::fcntl(m, libc::F_SETFL, flags | libc::O_NONBLOCK))?;
        check(libc::grantpt(m))?;
        check(libc::unlockpt(m))?;
        let mut name = [0 as libc::c_char; 128];
        if libc::ptsname_r(m, name.as_mut_ptr(), name.len()) != 0 {
            return Err(io::Error::last_os_error());
        }
        let path = CStr::from_ptr(name.as_ptr()).to_string_lossy().into_owned();
        let s = check(libc::open(name.as_ptr(), libc::O_RDWR | libc::O_NOCTTY))?;
        let slave = File::from_raw_fd(s);
        // binary-clean line: no echo, no CR/LF translation
        let mut tio: libc::termios = std::mem::zeroed();
        check(libc::tcgetattr(s, &mut tio))?;
        libc::cfmakeraw(&mut tio);
        check(libc::tcsetattr(s, libc::TCSANOW, &tio))?;
        Ok((master, slave, path))
    }
}

#[cfg(not(unix))]
fn open_pty() -> io::Result<(File, File, String)> {
    Err(io::Error::new(io::ErrorKind::Unsupported, "pseudo-terminals need a unix host"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::sync::mpsc;

    #[test]
    fn parse() {
        assert_eq!("mem".parse(), Ok(Transport::Mem));
        assert_eq!("tcp:0.0.0.0:9000".parse(), Ok(Transport::Tcp("0.0.0.0:9000".into())));
        assert!("uart".parse::<Transport>().is_err());
    }

    #[test]
    fn tcp_delivers_bytes() {
        let (tx, rx) = mpsc::channel();
        let server = std::thread::spawn(move || {
            let mut link = Transport::Tcp("127.0.0.1:0".into()).open(|a| tx.send(a.to_string()).unwrap()).unwrap();
            link.write_all(&[0xAA, 0x55, 1, 2, 3]).unwrap();
        });
        let addr = rx.recv().unwrap();
        let mut got = Vec::new();
        TcpStream::connect(addr).unwrap().read_to_end(&mut got).unwrap();
        server.join().unwrap();
        assert_eq!(got, [0xAA, 0x55, 1, 2, 3]);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn pty_is_binary_clean() {
        let Ok(mut link) = Transport::Pty.open(|_| {}) else { return };
        let Link::Pty { _slave: slave, .. } = &link else { unreachable!() };
        let mut reader = slave.try_clone().unwrap();
        let bytes: Vec<u8> = (0..=255).collect();
        link.write_all(&bytes).unwrap();
        let mut got = vec![0; bytes.len()];
        reader.read_exact(&mut got).unwrap();
        assert_eq!(got, bytes);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn pty_without_reader_times_out() {
        let Ok(Link::Pty { mut master, _slave }) = Transport::Pty.open(|_| {}) else { return };
        let chunk = vec![0u8; 4096];
        let err = loop {
            if let Err(e) = pty_write(&mut master, &chunk, Duration::from_millis(50)) {
                break e;
            }
        };
        assert_eq!(err.kind(), io::ErrorKind::TimedOut);
    }
}
