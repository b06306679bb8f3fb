//! TCP publish-subscribe fan-out for game-state messages.
//!
//! One producer feeds a bounded queue per subscriber; a writer thread drains
//! each queue onto its socket, so a slow or dead subscriber never blocks the
//! detection loop. When a queue is full the newest message is dropped for
//! that subscriber and counted. Message bytes are encoded once and shared
//! read-only across queues.

use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::wire::{decode_message, read_frame, write_frame, GameStateMessage, WireError};

/// Per-subscriber queue bound; overflow drops the newest message for that
/// subscriber only.
pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
const ACCEPT_POLL: Duration = Duration::from_millis(5);
const SHUTDOWN_DRAIN_DEADLINE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PubStats {
    pub subscribers: usize,
    pub dropped_messages: u64,
}

struct SubEntry {
    tx: SyncSender<Arc<Vec<u8>>>,
    dead: Arc<AtomicBool>,
}

struct Shared {
    subs: Mutex<Vec<SubEntry>>,
    drops: AtomicU64,
    shutdown: AtomicBool,
    active_writers: Arc<AtomicUsize>,
}

impl Shared {
    fn stats(&self) -> PubStats {
        let subs = self.subs.lock().unwrap();
        PubStats {
            subscribers: subs.iter().filter(|s| !s.dead.load(Ordering::Relaxed)).count(),
            dropped_messages: self.drops.load(Ordering::Relaxed),
        }
    }
}

/// Fan-out publisher bound to a TCP endpoint.
pub struct Publisher {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    accept_handle: Option<JoinHandle<()>>,
    stats_handle: Option<JoinHandle<()>>,
    stats_addr: Option<SocketAddr>,
}

fn spawn_accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    queue_capacity: usize,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        listener.set_nonblocking(true).ok();
        loop {
            if shared.shutdown.load(Ordering::Relaxed) {
                break;
            }
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nodelay(true).ok();
                    stream.set_write_timeout(Some(Duration::from_millis(500))).ok();
                    let (tx, rx) = sync_channel::<Arc<Vec<u8>>>(queue_capacity);
                    let dead = Arc::new(AtomicBool::new(false));
                    let dead_w = dead.clone();
                    let writers = shared.active_writers.clone();
                    writers.fetch_add(1, Ordering::SeqCst);
                    std::thread::spawn(move || {
                        let mut stream = stream;
                        for payload in rx {
                            if write_frame(&mut stream, &payload).is_err() {
                                dead_w.store(true, Ordering::Relaxed);
                                break;
                            }
                        }
                        let _ = stream.flush();
                        writers.fetch_sub(1, Ordering::SeqCst);
                    });
                    shared.subs.lock().unwrap().push(SubEntry { tx, dead });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(ACCEPT_POLL);
                }
                Err(_) => break,
            }
        }
    })
}

impl Publisher {
    pub fn bind<A: ToSocketAddrs>(endpoint: A) -> std::io::Result<Publisher> {
        Publisher::bind_with_capacity(endpoint, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn bind_with_capacity<A: ToSocketAddrs>(
        endpoint: A,
        queue_capacity: usize,
    ) -> std::io::Result<Publisher> {
        let listener = TcpListener::bind(endpoint)?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            subs: Mutex::new(Vec::new()),
            drops: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            active_writers: Arc::new(AtomicUsize::new(0)),
        });
        let accept_handle = Some(spawn_accept_loop(listener, shared.clone(), queue_capacity));
        Ok(Publisher { shared, local_addr, accept_handle, stats_handle: None, stats_addr: None })
    }

    /// Serve the line-oriented stats endpoint: each connection receives the
    /// current subscriber count and drop counter, then the socket closes.
    pub fn bind_stats<A: ToSocketAddrs>(&mut self, endpoint: A) -> std::io::Result<()> {
        let listener = TcpListener::bind(endpoint)?;
        self.stats_addr = Some(listener.local_addr()?);
        let shared = self.shared.clone();
        self.stats_handle = Some(std::thread::spawn(move || {
            listener.set_nonblocking(true).ok();
            loop {
                if shared.shutdown.load(Ordering::Relaxed) {
                    break;
                }
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        let stats = shared.stats();
                        let text = format!(
                            "subscribers {}\ndropped_messages {}\n",
                            stats.subscribers, stats.dropped_messages
                        );
                        let _ = stream.write_all(text.as_bytes());
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(ACCEPT_POLL);
                    }
                    Err(_) => break,
                }
            }
        }));
        Ok(())
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats_addr(&self) -> Option<SocketAddr> {
        self.stats_addr
    }

    /// Fan one payload out to every live subscriber. A full queue drops this
    /// message for that subscriber; a disconnected one is pruned.
    pub fn publish_bytes(&self, payload: &Arc<Vec<u8>>) {
        let mut subs = self.shared.subs.lock().unwrap();
        subs.retain(|sub| {
            if sub.dead.load(Ordering::Relaxed) {
                return false;
            }
            match sub.tx.try_send(payload.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    self.shared.drops.fetch_add(1, Ordering::Relaxed);
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
    }

    pub fn publish(&self, msg: &GameStateMessage) {
        self.publish_bytes(&Arc::new(crate::wire::encode_message(msg)));
    }

    pub fn stats(&self) -> PubStats {
        self.shared.stats()
    }

    /// Stop accepting, close queues and give writers up to one second to
    /// drain onto the wire.
    pub fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.subs.lock().unwrap().clear();
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.stats_handle.take() {
            let _ = h.join();
        }
        let deadline = Instant::now() + SHUTDOWN_DRAIN_DEADLINE;
        while self.shared.active_writers.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubscribeError {
    #[error("connection lost: {0}")]
    Io(#[from] std::io::Error),
    #[error("message decode failed: {0}")]
    Decode(#[from] WireError),
}

/// Client side: connects, filters by topic, decodes. On a dropped connection
/// it reconnects with exponential backoff when enabled, else surfaces the
/// error.
pub struct Subscriber {
    endpoint: String,
    topic: String,
    stream: Option<TcpStream>,
    reconnect: bool,
    max_reconnect_attempts: u32,
    read_timeout: Option<Duration>,
}

impl Subscriber {
    pub fn connect(endpoint: &str, topic: &str) -> std::io::Result<Subscriber> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true).ok();
        Ok(Subscriber {
            endpoint: endpoint.to_string(),
            topic: topic.to_string(),
            stream: Some(stream),
            reconnect: true,
            max_reconnect_attempts: 8,
            read_timeout: None,
        })
    }

    pub fn reconnect_on_drop(mut self, on: bool) -> Subscriber {
        self.reconnect = on;
        self
    }

    /// Bound each blocking read; a timeout surfaces as an io error from
    /// [`Subscriber::next_message`].
    pub fn with_read_timeout(mut self, timeout: Option<Duration>) -> Subscriber {
        self.read_timeout = timeout;
        if let Some(s) = &self.stream {
            s.set_read_timeout(timeout).ok();
        }
        self
    }

    fn ensure_stream(&mut self) -> std::io::Result<&mut TcpStream> {
        if self.stream.is_none() {
            let mut backoff = Duration::from_millis(25);
            let mut attempt = 0;
            loop {
                match TcpStream::connect(&self.endpoint) {
                    Ok(s) => {
                        s.set_nodelay(true).ok();
                        s.set_read_timeout(self.read_timeout).ok();
                        self.stream = Some(s);
                        break;
                    }
                    Err(e) => {
                        attempt += 1;
                        if attempt >= self.max_reconnect_attempts {
                            return Err(e);
                        }
                        std::thread::sleep(backoff);
                        backoff = (backoff * 2).min(Duration::from_secs(1));
                    }
                }
            }
        }
        Ok(self.stream.as_mut().unwrap())
    }

    /// Next message whose topic matches. Decode errors surface per message
    /// and the stream remains usable for the following call.
    pub fn next_message(&mut self) -> Result<GameStateMessage, SubscribeError> {
        loop {
            let reconnect = self.reconnect;
            let topic = self.topic.clone();
            let stream = self.ensure_stream()?;
            match read_frame(stream) {
                Ok(payload) => {
                    let prefix = payload.split(|&b| b == b' ').next().unwrap_or(&[]);
                    if prefix != topic.as_bytes() {
                        continue;
                    }
                    return Ok(decode_message(&payload)?);
                }
                Err(e) => {
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) {
                        // read timeout: the connection itself is fine
                        return Err(SubscribeError::Io(e));
                    }
                    self.stream = None;
                    if !reconnect {
                        return Err(SubscribeError::Io(e));
                    }
                }
            }
        }
    }
}
