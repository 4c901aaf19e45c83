//! TCP transport: exposes a component's provided ports over the
//! length-prefixed frame protocol (see docs/wire-format.md) and a remote
//! client endpoint speaking it. Cross-process use runs on the real clock;
//! all pattern semantics tests use the in-process reference transport.

use super::{ClientPort, CommObject, ComponentRt, EventMode, PatternError, TypeTable};
use crate::clock::Clock;
use crate::model::{Direction, Pattern, ServicePortSpec};
use crate::wire::{decode_payload, encode_payload, Frame, MessageKind, Opcode, WireError};
use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

fn write_frame(stream: &Mutex<TcpStream>, frame: &Frame) -> Result<(), WireError> {
    let mut s = stream.lock().unwrap();
    s.write_all(&frame.encode())?;
    Ok(())
}

fn error_frame(opcode: Opcode, correlation: u64, msg: &str) -> Frame {
    Frame {
        opcode,
        kind: MessageKind::Control,
        correlation,
        type_name: "error".into(),
        payload: msg.as_bytes().to_vec(),
    }
}

/// Serve one component's provided ports. Each connection is bound to one
/// port by a Control handshake frame carrying the port name.
pub struct TcpServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl TcpServer {
    pub fn serve(component: Arc<ComponentRt>, bind: &str) -> Result<TcpServer, WireError> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let component = component.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(component, conn) {
                        log::debug!("tcp connection ended: {e}");
                    }
                });
            }
        });
        Ok(TcpServer { addr, stop })
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect(self.addr);
    }
}

fn mirrored_required(spec: &ServicePortSpec) -> ServicePortSpec {
    let mut s = spec.clone();
    s.direction = Direction::Required;
    s
}

fn serve_connection(component: Arc<ComponentRt>, conn: TcpStream) -> Result<(), WireError> {
    let mut reader = conn.try_clone()?;
    let writer = Arc::new(Mutex::new(conn));
    let hello = Frame::read_from(&mut reader)?;
    if hello.kind != MessageKind::Control {
        return Err(WireError::Malformed("expected handshake control frame".into()));
    }
    let port_name = hello.type_name.clone();
    let server = component.server(&port_name).cloned().ok_or_else(|| {
        let _ = write_frame(&writer, &error_frame(hello.opcode, 0, "unknown port"));
        WireError::Malformed(format!("unknown provided port {port_name}"))
    })?;
    let types = server_types(&server);
    // hidden local requestor bridging this connection onto the port
    let client = ClientPort::new(
        "tcp-bridge",
        mirrored_required(server.spec()),
        component.clock.clone(),
        types.clone(),
        component.counters.clone(),
    );
    client.wire(&server);
    write_frame(
        &writer,
        &Frame {
            opcode: hello.opcode,
            kind: MessageKind::Ack,
            correlation: 0,
            type_name: port_name,
            payload: Vec::new(),
        },
    )?;

    // push patterns: forward every update to the remote subscriber
    if matches!(server.spec().pattern, Pattern::PushNewest | Pattern::PushTimed) {
        let c = client.clone();
        let w = writer.clone();
        let opcode = Opcode::from_pattern(server.spec().pattern);
        let tname = server.spec().answer_type.clone().unwrap_or_default();
        std::thread::spawn(move || loop {
            match c.get_update(true) {
                Ok(Some(v)) => {
                    let frame = Frame {
                        opcode,
                        kind: MessageKind::Update,
                        correlation: 0,
                        type_name: tname.clone(),
                        payload: encode_payload(&v),
                    };
                    if write_frame(&w, &frame).is_err() {
                        return;
                    }
                }
                Ok(None) => {}
                Err(_) => return,
            }
        });
    }

    let spec = server.spec().clone();
    let mut activations: HashMap<u64, super::ActivationId> = HashMap::new();
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(f) => f,
            Err(_) => break,
        };
        match (frame.opcode, frame.kind) {
            (Opcode::Send, MessageKind::Request) => {
                let req_type = spec.request_type.as_deref().unwrap_or("");
                let result = decode_payload(req_type, &frame.payload, &types)
                    .map_err(|e| PatternError::TypeMismatch(e.to_string()))
                    .and_then(|msg| client.send(msg));
                let reply = match result {
                    Ok(()) => Frame {
                        opcode: Opcode::Send,
                        kind: MessageKind::Ack,
                        correlation: frame.correlation,
                        type_name: String::new(),
                        payload: Vec::new(),
                    },
                    Err(e) => error_frame(Opcode::Send, frame.correlation, &e.to_string()),
                };
                write_frame(&writer, &reply)?;
            }
            (Opcode::Query, MessageKind::Request) => {
                let req_type = spec.request_type.as_deref().unwrap_or("");
                match decode_payload(req_type, &frame.payload, &types) {
                    Ok(req) => {
                        let c = client.clone();
                        let w = writer.clone();
                        let correlation = frame.correlation;
                        std::thread::spawn(move || {
                            let reply = match c.query_with_timeout(req, None) {
                                Ok(ans) => Frame {
                                    opcode: Opcode::Query,
                                    kind: MessageKind::Answer,
                                    correlation,
                                    type_name: ans.type_name.clone(),
                                    payload: encode_payload(&ans),
                                },
                                Err(e) => {
                                    error_frame(Opcode::Query, correlation, &e.to_string())
                                }
                            };
                            let _ = write_frame(&w, &reply);
                        });
                    }
                    Err(e) => write_frame(
                        &writer,
                        &error_frame(Opcode::Query, frame.correlation, &e.to_string()),
                    )?,
                }
            }
            (Opcode::Event, MessageKind::Request) => {
                // payload: 1 mode byte, then the activation parameter
                if frame.payload.is_empty() {
                    write_frame(
                        &writer,
                        &error_frame(Opcode::Event, frame.correlation, "empty activation"),
                    )?;
                    continue;
                }
                let mode = if frame.payload[0] == 0 { EventMode::Single } else { EventMode::Continuous };
                let req_type = spec.request_type.as_deref().unwrap_or("");
                match decode_payload(req_type, &frame.payload[1..], &types)
                    .map_err(|e| PatternError::TypeMismatch(e.to_string()))
                    .and_then(|param| client.event_activate(param, mode))
                {
                    Ok(id) => {
                        activations.insert(frame.correlation, id);
                        let c = client.clone();
                        let w = writer.clone();
                        let correlation = frame.correlation;
                        std::thread::spawn(move || loop {
                            match c.event_get(id, true) {
                                Ok(Some(n)) => {
                                    let f = Frame {
                                        opcode: Opcode::Event,
                                        kind: MessageKind::Event,
                                        correlation,
                                        type_name: n.type_name.clone(),
                                        payload: encode_payload(&n),
                                    };
                                    if write_frame(&w, &f).is_err() {
                                        return;
                                    }
                                }
                                Ok(None) => {}
                                Err(_) => return,
                            }
                        });
                        write_frame(
                            &writer,
                            &Frame {
                                opcode: Opcode::Event,
                                kind: MessageKind::Ack,
                                correlation: frame.correlation,
                                type_name: String::new(),
                                payload: Vec::new(),
                            },
                        )?;
                    }
                    Err(e) => write_frame(
                        &writer,
                        &error_frame(Opcode::Event, frame.correlation, &e.to_string()),
                    )?,
                }
            }
            (Opcode::Event, MessageKind::Control) if frame.type_name == "deactivate" => {
                if let Some(id) = activations.remove(&frame.correlation) {
                    let _ = client.event_deactivate(id);
                }
            }
            _ => {
                write_frame(
                    &writer,
                    &error_frame(frame.opcode, frame.correlation, "unsupported frame"),
                )?;
            }
        }
    }
    // connection closed: housekeeping unblocks everything we started
    client.disconnect();
    Ok(())
}

fn server_types(server: &super::ServerPort) -> Arc<TypeTable> {
    server.types()
}

struct RemoteShared {
    pending: Mutex<HashMap<u64, Arc<super::WaitCell<CommObject>>>>,
    latest: Mutex<(u64, u64, Option<CommObject>)>, // (delivered seq, read seq, value)
    latest_cv: Condvar,
    events: Mutex<HashMap<u64, VecDeque<CommObject>>>,
    events_cv: Condvar,
    closed: AtomicBool,
}

/// Client endpoint for one remote provided port over TCP.
pub struct RemotePort {
    spec: ServicePortSpec,
    stream: Arc<Mutex<TcpStream>>,
    shared: Arc<RemoteShared>,
    next_id: AtomicU64,
    clock: Clock,
    types: Arc<TypeTable>,
}

impl RemotePort {
    pub fn spec(&self) -> &ServicePortSpec {
        &self.spec
    }

    /// Connect and bind this connection to `port_name` on the remote
    /// component. `spec` is the local (required) port specification.
    pub fn connect(
        addr: impl ToSocketAddrs,
        port_name: &str,
        spec: ServicePortSpec,
        types: Arc<TypeTable>,
    ) -> Result<RemotePort, WireError> {
        let stream = TcpStream::connect(addr)?;
        let mut reader = stream.try_clone()?;
        let stream = Arc::new(Mutex::new(stream));
        let hello = Frame {
            opcode: Opcode::from_pattern(spec.pattern),
            kind: MessageKind::Control,
            correlation: 0,
            type_name: port_name.to_string(),
            payload: Vec::new(),
        };
        write_frame(&stream, &hello)?;
        let ack = Frame::read_from(&mut reader)?;
        if ack.kind != MessageKind::Ack {
            let msg = String::from_utf8_lossy(&ack.payload).into_owned();
            return Err(WireError::Malformed(format!("handshake rejected: {msg}")));
        }
        let shared = Arc::new(RemoteShared {
            pending: Mutex::new(HashMap::new()),
            latest: Mutex::new((0, 0, None)),
            latest_cv: Condvar::new(),
            events: Mutex::new(HashMap::new()),
            events_cv: Condvar::new(),
            closed: AtomicBool::new(false),
        });
        let port = RemotePort {
            spec,
            stream,
            shared: shared.clone(),
            next_id: AtomicU64::new(1),
            clock: Clock::real(),
            types: types.clone(),
        };
        let clock = port.clock.clone();
        std::thread::spawn(move || {
            loop {
                let frame = match Frame::read_from(&mut reader) {
                    Ok(f) => f,
                    Err(_) => break,
                };
                match frame.kind {
                    MessageKind::Answer | MessageKind::Ack => {
                        let cell = shared.pending.lock().unwrap().remove(&frame.correlation);
                        if let Some(cell) = cell {
                            let result = if frame.kind == MessageKind::Ack {
                                Ok(CommObject { type_name: String::new(), fields: Vec::new() })
                            } else {
                                decode_payload(&frame.type_name, &frame.payload, &types)
                                    .map_err(|e| PatternError::Transport(e.to_string()))
                            };
                            cell.post(&clock, result);
                        }
                    }
                    MessageKind::Update => {
                        if let Ok(v) = decode_payload(&frame.type_name, &frame.payload, &types) {
                            let mut latest = shared.latest.lock().unwrap();
                            latest.0 += 1;
                            latest.2 = Some(v);
                            shared.latest_cv.notify_all();
                        }
                    }
                    MessageKind::Event => {
                        if let Ok(v) = decode_payload(&frame.type_name, &frame.payload, &types) {
                            let mut events = shared.events.lock().unwrap();
                            events.entry(frame.correlation).or_default().push_back(v);
                            shared.events_cv.notify_all();
                        }
                    }
                    MessageKind::Control => {
                        let cell = shared.pending.lock().unwrap().remove(&frame.correlation);
                        if let Some(cell) = cell {
                            let msg = String::from_utf8_lossy(&frame.payload).into_owned();
                            cell.post(&clock, Err(PatternError::Transport(msg)));
                        }
                    }
                    MessageKind::Request => {}
                }
            }
            shared.closed.store(true, Ordering::SeqCst);
            shared.latest_cv.notify_all();
            shared.events_cv.notify_all();
            let pending: Vec<_> = shared.pending.lock().unwrap().drain().collect();
            for (_, cell) in pending {
                cell.post(&clock, Err(PatternError::Disconnected));
            }
        });
        Ok(port)
    }

    fn roundtrip(
        &self,
        frame: Frame,
        timeout_ms: Option<u64>,
    ) -> Result<CommObject, PatternError> {
        let cell: Arc<super::WaitCell<CommObject>> = super::WaitCell::new();
        self.shared
            .pending
            .lock()
            .unwrap()
            .insert(frame.correlation, cell.clone());
        write_frame(&self.stream, &frame)
            .map_err(|e| PatternError::Transport(e.to_string()))?;
        let deadline = timeout_ms.map(|t| self.clock.now_ms() + t);
        let r = cell.wait(&self.clock, deadline);
        self.shared.pending.lock().unwrap().remove(&frame.correlation);
        r
    }

    fn check_request_type(&self, msg: &CommObject) -> Result<(), PatternError> {
        let expected = self.spec.request_type.as_deref().unwrap_or("");
        if msg.type_name != expected {
            return Err(PatternError::TypeMismatch(format!(
                "port {} expects {expected}, got {}",
                self.spec.name, msg.type_name
            )));
        }
        self.types.check(msg)
    }

    pub fn send(&self, msg: CommObject) -> Result<(), PatternError> {
        self.check_request_type(&msg)?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let frame = Frame {
            opcode: Opcode::Send,
            kind: MessageKind::Request,
            correlation: id,
            type_name: msg.type_name.clone(),
            payload: encode_payload(&msg),
        };
        self.roundtrip(frame, Some(5000)).map(|_| ())
    }

    pub fn query(
        &self,
        request: CommObject,
        timeout_ms: Option<u64>,
    ) -> Result<CommObject, PatternError> {
        self.check_request_type(&request)?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let frame = Frame {
            opcode: Opcode::Query,
            kind: MessageKind::Request,
            correlation: id,
            type_name: request.type_name.clone(),
            payload: encode_payload(&request),
        };
        self.roundtrip(frame, timeout_ms)
    }

    /// Latest-wins read of the remote push stream.
    pub fn get_update(&self, wait: bool) -> Result<Option<CommObject>, PatternError> {
        let mut latest = self.shared.latest.lock().unwrap();
        loop {
            if latest.0 > latest.1 {
                latest.1 = latest.0;
                return Ok(latest.2.clone());
            }
            if self.shared.closed.load(Ordering::SeqCst) {
                return Err(PatternError::Disconnected);
            }
            if !wait {
                return Ok(None);
            }
            latest = self.shared.latest_cv.wait(latest).unwrap();
        }
    }

    pub fn event_activate(
        &self,
        param: CommObject,
        mode: EventMode,
    ) -> Result<u64, PatternError> {
        self.check_request_type(&param)?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let mut payload = vec![match mode {
            EventMode::Single => 0u8,
            EventMode::Continuous => 1u8,
        }];
        payload.extend(encode_payload(&param));
        let frame = Frame {
            opcode: Opcode::Event,
            kind: MessageKind::Request,
            correlation: id,
            type_name: param.type_name.clone(),
            payload,
        };
        self.shared.events.lock().unwrap().insert(id, VecDeque::new());
        self.roundtrip(frame, Some(5000))?;
        Ok(id)
    }

    pub fn event_get(&self, id: u64, wait: bool) -> Result<Option<CommObject>, PatternError> {
        let mut events = self.shared.events.lock().unwrap();
        loop {
            let Some(queue) = events.get_mut(&id) else {
                return Err(PatternError::UnknownId);
            };
            if let Some(n) = queue.pop_front() {
                return Ok(Some(n));
            }
            if self.shared.closed.load(Ordering::SeqCst) {
                return Err(PatternError::Disconnected);
            }
            if !wait {
                return Ok(None);
            }
            events = self.shared.events_cv.wait(events).unwrap();
        }
    }

    pub fn event_deactivate(&self, id: u64) -> Result<(), PatternError> {
        self.shared
            .events
            .lock()
            .unwrap()
            .remove(&id)
            .ok_or(PatternError::UnknownId)?;
        let frame = Frame {
            opcode: Opcode::Event,
            kind: MessageKind::Control,
            correlation: id,
            type_name: "deactivate".into(),
            payload: Vec::new(),
        };
        write_frame(&self.stream, &frame).map_err(|e| PatternError::Transport(e.to_string()))
    }
}
