//! TCP transport: one thread per client, each owning its own session.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{encode_server, LiveSession, ServerMessage, DEFAULT_BROADCAST_RATE};
use crate::error::{invalid, Error, Result};
use crate::harness::config::SessionConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    pub broadcast_rate: f64,
    /// Session seconds per wall-clock second; 1 for real time.
    pub time_scale: f64,
    /// Directory for per-session recorder CSVs.
    pub record: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { broadcast_rate: DEFAULT_BROADCAST_RATE, time_scale: 1.0, record: None }
    }
}

pub struct Server {
    listener: TcpListener,
    defaults: Arc<SessionConfig>,
    opts: Arc<ServeOptions>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, defaults: SessionConfig, opts: ServeOptions) -> Result<Self> {
        defaults.validate()?;
        if !(opts.time_scale > 0.0 && opts.time_scale.is_finite()) {
            return Err(invalid("time_scale must be > 0"));
        }
        // Fail now rather than on the first connection.
        LiveSession::new(defaults.clone(), opts.broadcast_rate)?;
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, defaults: Arc::new(defaults), opts: Arc::new(opts), stop: Arc::new(AtomicBool::new(false)) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Setting the flag makes [`Server::run`] and every client loop return.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn run(self) -> Result<()> {
        self.listener.set_nonblocking(true)?;
        let ids = AtomicU64::new(0);
        let mut clients = Vec::new();
        while !self.stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let id = ids.fetch_add(1, Ordering::Relaxed);
                    let (defaults, opts, stop) = (self.defaults.clone(), self.opts.clone(), self.stop.clone());
                    log::info!("client {id} connected from {peer}");
                    clients.push(thread::spawn(move || {
                        if let Err(e) = client_loop(stream, id, &defaults, &opts, &stop) {
                            log::warn!("client {id}: {e}");
                        }
                        log::info!("client {id} closed");
                    }));
                    clients.retain(|h| !h.is_finished());
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(e.into()),
            }
        }
        for h in clients {
            let _ = h.join();
        }
        Ok(())
    }
}

/// Binds `port` on localhost and serves until the process stops.
pub fn serve(port: u16, defaults: SessionConfig, opts: ServeOptions) -> Result<()> {
    let server = Server::bind(("127.0.0.1", port), defaults, opts)?;
    log::info!("listening on {}", server.local_addr()?);
    server.run()
}

fn send(out: &mut impl Write, msgs: &[ServerMessage]) -> Result<()> {
    for m in msgs {
        out.write_all(encode_server(m)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn client_loop(stream: TcpStream, id: u64, defaults: &SessionConfig, opts: &ServeOptions, stop: &AtomicBool) -> Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let (tx, rx) = mpsc::channel::<String>();
    let reader_thread = thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let mut session = LiveSession::new(defaults.clone(), opts.broadcast_rate)?;
    if let Some(dir) = &opts.record {
        session.record_to(dir.clone(), format!("session-{id}"));
    }
    let mut out = BufWriter::new(stream.try_clone()?);
    let tick = Duration::from_secs_f64(defaults.robot.limits.dt() / opts.time_scale);
    let start = Instant::now();
    let mut result = send(&mut out, &[session.hello()]);
    while result.is_ok() && !stop.load(Ordering::Relaxed) {
        let mut replies = Vec::new();
        let mut closed = false;
        loop {
            match rx.try_recv() {
                Ok(line) if line.trim().is_empty() => {}
                Ok(line) => replies.extend(session.handle_line(&line)),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    closed = true;
                    break;
                }
            }
        }
        if closed {
            break;
        }
        let now = start.elapsed().as_secs_f64() * opts.time_scale;
        match session.advance(now) {
            Ok(msgs) => replies.extend(msgs),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
        result = send(&mut out, &replies);
        thread::sleep(tick);
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader_thread.join();
    let finished = session.finish();
    match (result, finished) {
        (Err(Error::Io(e)), Ok(_)) if is_disconnect(&e) => Ok(()),
        (Err(e), _) => Err(e),
        (Ok(()), r) => r.map(|_| ()),
    }
}

fn is_disconnect(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(e.kind(), BrokenPipe | ConnectionReset | ConnectionAborted)
}
