//! Loopback TCP transport on the wall clock.
//!
//! Each device owns a listener; peers open one connection per sending pair and
//! write one encoded [`ProtocolMessage`] per line. Discovery goes through a
//! [`RegistryServer`] speaking the same line framing.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clock::{ClockMode, WallClock};
use super::wire::{fields, parse_f64, read_line, write_line};
use super::{Endpoint, Envelope, Registry, Transport, TransportError};
use crate::matching::{Position, ProviderAdvert};
use crate::protocol::ProtocolMessage;

fn error_line(e: &TransportError) -> String {
    let (code, detail) = match e {
        TransportError::DuplicateDevice(d) => ("DuplicateDevice", d.as_str()),
        TransportError::NotRegistered(d) => ("NotRegistered", d.as_str()),
        TransportError::PeerUnreachable(d) => ("PeerUnreachable", d.as_str()),
        _ => ("Frame", "bad request"),
    };
    format!("ERR {code} {detail}")
}

fn parse_error_line(line: &str) -> TransportError {
    let mut parts = line.splitn(3, ' ').skip(1);
    let code = parts.next().unwrap_or_default();
    let detail = parts.next().unwrap_or_default().to_string();
    match code {
        "DuplicateDevice" => TransportError::DuplicateDevice(detail),
        "NotRegistered" => TransportError::NotRegistered(detail),
        "PeerUnreachable" => TransportError::PeerUnreachable(detail),
        _ => TransportError::Frame(line.to_string()),
    }
}

fn advert_fields(a: &ProviderAdvert) -> String {
    format!(
        "x={} y={} level={} technology={} available={}",
        a.position.x, a.position.y, a.battery_level_pct, a.technology, a.available
    )
}

fn parse_advert(provider_id: &str, v: &[&str]) -> Result<ProviderAdvert, TransportError> {
    Ok(ProviderAdvert {
        provider_id: provider_id.to_string(),
        position: Position::new(parse_f64(v[0])?, parse_f64(v[1])?),
        battery_level_pct: parse_f64(v[2])?,
        technology: v[3]
            .parse()
            .map_err(|_| TransportError::Frame(format!("technology `{}`", v[3])))?,
        available: v[4]
            .parse()
            .map_err(|_| TransportError::Frame(format!("available `{}`", v[4])))?,
    })
}

const ADVERT_KEYS: [&str; 5] = ["x", "y", "level", "technology", "available"];

/// Accept loop that hands each connection to `handler` on its own thread.
pub(crate) struct Acceptor {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    handle: Option<JoinHandle<()>>,
}

impl Acceptor {
    pub(crate) fn spawn<F>(listener: TcpListener, handler: F) -> std::io::Result<Self>
    where
        F: Fn(TcpStream) + Send + Sync + 'static,
    {
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let handler = Arc::new(handler);
        let handle = {
            let shutdown = shutdown.clone();
            let connections = connections.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    if let Ok(copy) = stream.try_clone() {
                        connections.lock().expect("connections lock").push(copy);
                    }
                    let handler = handler.clone();
                    thread::spawn(move || handler(stream));
                }
            })
        };
        Ok(Self {
            addr,
            shutdown,
            connections,
            handle: Some(handle),
        })
    }

    pub(crate) fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub(crate) fn stop(&mut self) {
        if self.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        for c in self.connections.lock().expect("connections lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Acceptor {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Shared device directory served over TCP.
pub struct RegistryServer {
    registry: Arc<RwLock<Registry>>,
    acceptor: Acceptor,
}

impl RegistryServer {
    pub fn bind(addr: &str) -> Result<Self, TransportError> {
        let listener = TcpListener::bind(addr)?;
        let registry: Arc<RwLock<Registry>> = Arc::default();
        let shared = registry.clone();
        let acceptor = Acceptor::spawn(listener, move |stream| serve_registry(&shared, stream))?;
        Ok(Self { registry, acceptor })
    }

    pub fn addr(&self) -> SocketAddr {
        self.acceptor.addr
    }

    pub fn snapshot(&self) -> Registry {
        self.registry.read().expect("registry lock").clone()
    }

    pub fn shutdown(mut self) {
        self.acceptor.stop();
    }
}

fn serve_registry(registry: &RwLock<Registry>, stream: TcpStream) {
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut writer = std::io::BufWriter::new(write_half);
    let mut reader = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut reader) {
        let reply = handle_registry_line(registry, &line);
        let result = reply.iter().try_for_each(|l| {
            writer.write_all(l.as_bytes())?;
            writer.write_all(b"\n")
        });
        if result.and_then(|_| writer.flush()).is_err() {
            break;
        }
    }
}

fn handle_registry_line(registry: &RwLock<Registry>, line: &str) -> Vec<String> {
    let head = line.split(' ').next().unwrap_or_default();
    let result: Result<Vec<String>, TransportError> = (|| match head {
        "REGISTER" => {
            let v = fields(line, &["device_id", "address"])?;
            registry
                .write()
                .expect("registry lock")
                .register(&Endpoint::new(v[0], v[1]))?;
            Ok(vec!["OK".to_string()])
        }
        "DEREGISTER" => {
            let v = fields(line, &["device_id"])?;
            registry.write().expect("registry lock").deregister(v[0]);
            Ok(vec!["OK".to_string()])
        }
        "ADVERTISE" => {
            let mut keys = vec!["device_id", "address"];
            keys.extend(ADVERT_KEYS);
            let v = fields(line, &keys)?;
            let advert = parse_advert(v[0], &v[2..])?;
            registry
                .write()
                .expect("registry lock")
                .advertise(&Endpoint::new(v[0], v[1]), advert)?;
            Ok(vec!["OK".to_string()])
        }
        "DISCOVER" => {
            fields(line, &[])?;
            // one read guard for the whole listing: a concurrent advertise is
            // either fully visible or not at all
            let adverts = registry.read().expect("registry lock").discover();
            let mut out: Vec<String> = adverts
                .iter()
                .map(|a| format!("ADVERT provider_id={} {}", a.provider_id, advert_fields(a)))
                .collect();
            out.push("END".to_string());
            Ok(out)
        }
        "LOOKUP" => {
            let v = fields(line, &["device_id"])?;
            let ep = registry.read().expect("registry lock").lookup(v[0])?;
            Ok(vec![format!(
                "ENDPOINT device_id={} address={}",
                ep.device_id, ep.address
            )])
        }
        _ => Err(TransportError::Frame(format!("unknown command `{head}`"))),
    })();
    result.unwrap_or_else(|e| vec![error_line(&e)])
}

/// Request/response client for a [`RegistryServer`].
pub struct RegistryClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl RegistryClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    fn call(&mut self, line: &str) -> Result<String, TransportError> {
        write_line(&mut self.writer, line)?;
        let reply = read_line(&mut self.reader)?
            .ok_or_else(|| TransportError::Io("registry closed the connection".into()))?;
        if reply.starts_with("ERR ") {
            return Err(parse_error_line(&reply));
        }
        Ok(reply)
    }

    pub fn register(&mut self, endpoint: &Endpoint) -> Result<(), TransportError> {
        self.call(&format!(
            "REGISTER device_id={} address={}",
            endpoint.device_id, endpoint.address
        ))
        .map(drop)
    }

    pub fn deregister(&mut self, device_id: &str) -> Result<(), TransportError> {
        self.call(&format!("DEREGISTER device_id={device_id}"))
            .map(drop)
    }

    pub fn advertise(
        &mut self,
        endpoint: &Endpoint,
        advert: &ProviderAdvert,
    ) -> Result<(), TransportError> {
        self.call(&format!(
            "ADVERTISE device_id={} address={} {}",
            endpoint.device_id,
            endpoint.address,
            advert_fields(advert)
        ))
        .map(drop)
    }

    pub fn discover(&mut self) -> Result<Vec<ProviderAdvert>, TransportError> {
        let mut line = self.call("DISCOVER")?;
        let mut out = Vec::new();
        while line != "END" {
            let mut keys = vec!["provider_id"];
            keys.extend(ADVERT_KEYS);
            let v = fields(&line, &keys)?;
            out.push(parse_advert(v[0], &v[1..])?);
            line = read_line(&mut self.reader)?
                .ok_or_else(|| TransportError::Io("registry closed mid-listing".into()))?;
        }
        Ok(out)
    }

    pub fn lookup(&mut self, device_id: &str) -> Result<Endpoint, TransportError> {
        let line = self.call(&format!("LOOKUP device_id={device_id}"))?;
        let v = fields(&line, &["device_id", "address"])?;
        Ok(Endpoint::new(v[0], v[1]))
    }
}

/// One device's TCP endpoint.
pub struct TcpTransport {
    endpoint: Endpoint,
    clock: WallClock,
    registry: RegistryClient,
    inbox: Receiver<Envelope>,
    outgoing: HashMap<String, TcpStream>,
    acceptor: Acceptor,
    drop_probability: f64,
    rng: ChaCha8Rng,
}

impl TcpTransport {
    /// Binds a loopback listener for `device_id` and connects to the registry.
    /// The device still has to [`Transport::register`] itself.
    pub fn bind(
        device_id: &str,
        registry: SocketAddr,
        clock: WallClock,
        drop_probability: f64,
        seed: u64,
    ) -> Result<Self, TransportError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let (tx, inbox) = mpsc::channel();
        let acceptor = Acceptor::spawn(listener, move |stream| {
            read_messages(stream, clock, tx.clone())
        })?;
        Ok(Self {
            endpoint: Endpoint::new(device_id, acceptor.addr.to_string()),
            clock,
            registry: RegistryClient::connect(registry)?,
            inbox,
            outgoing: HashMap::new(),
            acceptor,
            drop_probability,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn clock(&self) -> WallClock {
        self.clock
    }

    /// Blocks until a message arrives or the clock reaches `deadline_s`.
    pub fn recv_until(&mut self, deadline_s: f64) -> Result<Option<Envelope>, TransportError> {
        match self.inbox.recv_timeout(self.clock.real_until(deadline_s)) {
            Ok(env) => Ok(Some(env)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportError::Io("listener stopped".into()))
            }
        }
    }

    fn check_self(&self, endpoint: &Endpoint) -> Result<(), TransportError> {
        if endpoint != &self.endpoint {
            return Err(TransportError::NotRegistered(endpoint.device_id.clone()));
        }
        Ok(())
    }

    fn write_to(&mut self, address: &str, line: &str) -> std::io::Result<()> {
        let stream = match self.outgoing.get_mut(address) {
            Some(s) => s,
            None => {
                let s = TcpStream::connect(address)?;
                s.set_nodelay(true)?;
                self.outgoing.entry(address.to_string()).or_insert(s)
            }
        };
        let result = write_line(stream, line);
        if result.is_err() {
            self.outgoing.remove(address);
        }
        result
    }
}

fn read_messages(stream: TcpStream, clock: WallClock, tx: Sender<Envelope>) {
    let mut reader = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut reader) {
        // undecodable lines are dropped; the protocol layer times out on loss
        let Ok(msg) = ProtocolMessage::decode(&line) else {
            continue;
        };
        let env = Envelope {
            msg,
            received_at_s: clock.now_s(),
        };
        if tx.send(env).is_err() {
            break;
        }
    }
}

impl Transport for TcpTransport {
    fn mode(&self) -> ClockMode {
        ClockMode::Wall
    }

    fn now_s(&self) -> f64 {
        self.clock.now_s()
    }

    fn register(&mut self, endpoint: &Endpoint) -> Result<(), TransportError> {
        self.check_self(endpoint)?;
        self.registry.register(endpoint)
    }

    fn deregister(&mut self, device_id: &str) -> Result<(), TransportError> {
        self.registry.deregister(device_id)?;
        if device_id == self.endpoint.device_id {
            self.acceptor.stop();
        }
        Ok(())
    }

    fn advertise(
        &mut self,
        endpoint: &Endpoint,
        advert: ProviderAdvert,
    ) -> Result<(), TransportError> {
        self.registry.advertise(endpoint, &advert)
    }

    fn discover(&mut self, endpoint: &Endpoint) -> Result<Vec<ProviderAdvert>, TransportError> {
        self.check_self(endpoint)?;
        self.registry.discover()
    }

    fn lookup(&mut self, device_id: &str) -> Result<Endpoint, TransportError> {
        self.registry.lookup(device_id)
    }

    fn send(
        &mut self,
        from: &Endpoint,
        to: &Endpoint,
        msg: &ProtocolMessage,
    ) -> Result<(), TransportError> {
        self.check_self(from)?;
        let current = self.registry.lookup(&to.device_id)?;
        if current.address != to.address {
            return Err(TransportError::PeerUnreachable(to.device_id.clone()));
        }
        if self.drop_probability > 0.0 && self.rng.gen::<f64>() < self.drop_probability {
            return Ok(());
        }
        let line = msg.encode();
        for _ in 0..2 {
            if self.write_to(&to.address, &line).is_ok() {
                return Ok(());
            }
        }
        Err(TransportError::PeerUnreachable(to.device_id.clone()))
    }

    fn recv(&mut self, at: &Endpoint) -> Result<Option<Envelope>, TransportError> {
        self.check_self(at)?;
        match self.inbox.try_recv() {
            Ok(env) => Ok(Some(env)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::Io("listener stopped".into())),
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for (_, s) in self.outgoing.drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.acceptor.stop();
    }
}
