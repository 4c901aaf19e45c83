//! Client (required) and server (provided) endpoints for the five
//! data-communication patterns.

use super::sync::WaitCell;
use super::{CommObject, Counters, Executor, PatternError, TypeTable};
use crate::clock::{Clock, TimerId};
use crate::model::{Pattern, ServicePortSpec, Timeout};
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, Weak};

/// Bounded request FIFO depth for send/query providers.
pub const DEFAULT_QUEUE_DEPTH: usize = 16;

/// Opaque token for one pending asynchronous query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryId(u64);

/// Opaque token for one event activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActivationId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventMode {
    Single,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiveResult {
    Answer(CommObject),
    Pending,
}

type QueryHandler = Arc<dyn Fn(CommObject) -> Result<CommObject, String> + Send + Sync>;
type SendHandler = Arc<dyn Fn(CommObject) + Send + Sync>;
type EventTest = Arc<dyn Fn(&CommObject, &CommObject) -> Option<CommObject> + Send + Sync>;

struct Activation {
    client: Weak<ClientCore>,
    id: u64,
    param: CommObject,
    mode: EventMode,
}

struct PushState {
    seq: u64,
    current: Option<CommObject>,
    subscribers: Vec<Weak<ClientCore>>,
}

pub(crate) struct ServerCore {
    instance: String,
    spec: ServicePortSpec,
    clock: Clock,
    types: Arc<TypeTable>,
    counters: Arc<Counters>,
    executor: Arc<Executor>,
    active: AtomicBool,
    query_handler: Mutex<Option<QueryHandler>>,
    send_handler: Mutex<Option<SendHandler>>,
    event_test: Mutex<Option<EventTest>>,
    activations: Mutex<Vec<Activation>>,
    push: Mutex<PushState>,
    /// Answer cells for queries currently being handled, failed with
    /// `ServiceDeactivated` when the port is gated off.
    inflight: Mutex<Vec<Weak<WaitCell<CommObject>>>>,
    pending_jobs: AtomicUsize,
    queue_depth: usize,
    timed: Mutex<Option<TimerId>>,
}

struct Mailbox {
    seq: u64,
    last_read: u64,
    value: Option<CommObject>,
}

enum Wired {
    No,
    Yes(Arc<ServerCore>),
}

pub(crate) struct ClientCore {
    instance: String,
    spec: ServicePortSpec,
    clock: Clock,
    types: Arc<TypeTable>,
    counters: Arc<Counters>,
    active: AtomicBool,
    wired: Mutex<Wired>,
    timeout_override_ms: Mutex<Option<u64>>,
    next_id: AtomicU64,
    pending: Mutex<HashMap<u64, Arc<WaitCell<CommObject>>>>,
    mailbox: Mutex<Mailbox>,
    update_waiters: Mutex<Vec<Arc<WaitCell<CommObject>>>>,
    events: Mutex<HashMap<u64, EventQueue>>,
}

struct EventQueue {
    queue: VecDeque<CommObject>,
    waiters: Vec<Arc<WaitCell<CommObject>>>,
}

/// Handle to a started push-timed distribution loop.
pub struct TimedTicket {
    timer: TimerId,
    server: Arc<ServerCore>,
}

#[derive(Clone)]
pub struct ServerPort {
    core: Arc<ServerCore>,
}

#[derive(Clone)]
pub struct ClientPort {
    core: Arc<ClientCore>,
}

impl ServerCore {
    fn deliver_current_to_all(self: &Arc<Self>, pattern_key: &str) {
        let (value, seq, subs) = {
            let mut push = self.push.lock().unwrap();
            let Some(v) = push.current.clone() else { return };
            push.seq += 1;
            let seq = push.seq;
            push.subscribers.retain(|w| w.strong_count() > 0);
            (v, seq, push.subscribers.clone())
        };
        for sub in subs.iter().filter_map(|w| w.upgrade()) {
            sub.deliver_update(value.clone(), seq);
            self.counters.inc(pattern_key);
            self.counters
                .inc(&format!("port.{}.{}", sub.instance, sub.spec.name));
        }
    }
}

impl ServerPort {
    pub(crate) fn new(
        instance: &str,
        spec: ServicePortSpec,
        clock: Clock,
        types: Arc<TypeTable>,
        counters: Arc<Counters>,
        executor: Arc<Executor>,
    ) -> Self {
        ServerPort {
            core: Arc::new(ServerCore {
                instance: instance.to_string(),
                spec,
                clock,
                types,
                counters,
                executor,
                active: AtomicBool::new(true),
                query_handler: Mutex::new(None),
                send_handler: Mutex::new(None),
                event_test: Mutex::new(None),
                activations: Mutex::new(Vec::new()),
                push: Mutex::new(PushState { seq: 0, current: None, subscribers: Vec::new() }),
                inflight: Mutex::new(Vec::new()),
                pending_jobs: AtomicUsize::new(0),
                queue_depth: DEFAULT_QUEUE_DEPTH,
                timed: Mutex::new(None),
            }),
        }
    }

    pub fn spec(&self) -> &ServicePortSpec {
        &self.core.spec
    }

    pub(crate) fn types(&self) -> Arc<TypeTable> {
        self.core.types.clone()
    }

    pub(crate) fn set_active(&self, active: bool) {
        self.core.active.store(active, Ordering::SeqCst);
        if !active {
            let cells: Vec<_> = self.core.inflight.lock().unwrap().drain(..).collect();
            for cell in cells.iter().filter_map(|w| w.upgrade()) {
                cell.post(&self.core.clock, Err(PatternError::ServiceDeactivated));
            }
        }
    }

    pub fn register_query_handler(
        &self,
        handler: impl Fn(CommObject) -> Result<CommObject, String> + Send + Sync + 'static,
    ) -> Result<(), PatternError> {
        let mut h = self.core.query_handler.lock().unwrap();
        if h.is_some() {
            return Err(PatternError::HandlerAlreadyRegistered);
        }
        *h = Some(Arc::new(handler));
        Ok(())
    }

    pub fn register_send_handler(
        &self,
        handler: impl Fn(CommObject) + Send + Sync + 'static,
    ) -> Result<(), PatternError> {
        let mut h = self.core.send_handler.lock().unwrap();
        if h.is_some() {
            return Err(PatternError::HandlerAlreadyRegistered);
        }
        *h = Some(Arc::new(handler));
        Ok(())
    }

    /// Register the event test function: evaluated against each activation's
    /// parameter on every state change; `Some(notification)` fires.
    pub fn register_event_test(
        &self,
        test: impl Fn(&CommObject, &CommObject) -> Option<CommObject> + Send + Sync + 'static,
    ) -> Result<(), PatternError> {
        let mut h = self.core.event_test.lock().unwrap();
        if h.is_some() {
            return Err(PatternError::HandlerAlreadyRegistered);
        }
        *h = Some(Arc::new(test));
        Ok(())
    }

    /// Publish a new value. Push newest distributes immediately; push timed
    /// stores it for the next cycle tick.
    pub fn publish(&self, value: CommObject) -> Result<(), PatternError> {
        let expected = self.core.spec.answer_type.as_deref().unwrap_or("");
        if value.type_name != expected {
            return Err(PatternError::TypeMismatch(format!(
                "publish expects {expected}, got {}",
                value.type_name
            )));
        }
        self.core.types.check(&value)?;
        match self.core.spec.pattern {
            Pattern::PushNewest => {
                {
                    let mut push = self.core.push.lock().unwrap();
                    push.current = Some(value);
                }
                self.core.deliver_current_to_all("pattern.pushnewest");
                Ok(())
            }
            Pattern::PushTimed => {
                let mut push = self.core.push.lock().unwrap();
                push.current = Some(value);
                Ok(())
            }
            _ => Err(PatternError::TypeMismatch(format!(
                "publish is not valid on a {} port",
                self.core.spec.pattern
            ))),
        }
    }

    /// Start the push-timed distribution loop on the given clock. At every
    /// multiple of the declared cycle time the current value (if any) is
    /// re-distributed to all subscribers.
    pub fn start_timed(&self) -> Result<TimedTicket, PatternError> {
        let Some(cycle) = self.core.spec.qos.cycle_time_ms.filter(|c| *c > 0) else {
            return Err(PatternError::NoCycleTime);
        };
        let mut timed = self.core.timed.lock().unwrap();
        if timed.is_some() {
            return Err(PatternError::AlreadyStarted);
        }
        let core = self.core.clone();
        let now = self.core.clock.now_ms();
        let first = (now / cycle + 1) * cycle;
        let id = self.core.clock.schedule(
            first,
            Box::new(move |clk| {
                core.deliver_current_to_all("pattern.pushtimed");
                Some(clk.now_ms() + cycle)
            }),
        );
        *timed = Some(id);
        Ok(TimedTicket { timer: id, server: self.core.clone() })
    }

    pub fn stop_timed(&self, ticket: TimedTicket) {
        self.core.clock.cancel(ticket.timer);
        let mut timed = ticket.server.timed.lock().unwrap();
        *timed = None;
    }

    /// Record a server-side state change and evaluate all activations'
    /// test functions against it.
    pub fn update_event_state(&self, state: CommObject) -> Result<(), PatternError> {
        let expected = self.core.spec.answer_type.as_deref().unwrap_or("");
        // the state object is middleware-internal; conformance is only
        // required of the produced notifications
        let test = self.core.event_test.lock().unwrap().clone();
        let Some(test) = test else { return Ok(()) };
        let mut fired: Vec<(Arc<ClientCore>, u64, CommObject)> = Vec::new();
        {
            let mut acts = self.core.activations.lock().unwrap();
            acts.retain(|a| a.client.strong_count() > 0);
            let mut deactivate = Vec::new();
            for a in acts.iter() {
                let Some(client) = a.client.upgrade() else { continue };
                if let Some(notif) = test(&a.param, &state) {
                    if notif.type_name != expected {
                        log::warn!(
                            "event notification type {} does not match {expected}; dropped",
                            notif.type_name
                        );
                        continue;
                    }
                    fired.push((client, a.id, notif));
                    if a.mode == EventMode::Single {
                        deactivate.push(a.id);
                    }
                }
            }
            acts.retain(|a| !deactivate.contains(&a.id));
        }
        for (client, id, notif) in fired {
            self.core.types.check(&notif)?;
            client.deliver_event(id, notif);
            self.core.counters.inc("pattern.event");
        }
        Ok(())
    }
}

impl ClientCore {
    fn effective_timeout(&self, per_call: Option<Option<u64>>) -> Option<u64> {
        if let Some(t) = per_call {
            return t;
        }
        if let Some(t) = *self.timeout_override_ms.lock().unwrap() {
            return Some(t);
        }
        match self.spec.qos.timeout_ms {
            Some(Timeout::Ms(t)) => Some(t),
            Some(Timeout::Unbounded) | None => None,
        }
    }

    fn gate(&self) -> Result<Arc<ServerCore>, PatternError> {
        if !self.active.load(Ordering::SeqCst) {
            return Err(PatternError::ServiceDeactivated);
        }
        match &*self.wired.lock().unwrap() {
            Wired::No => Err(PatternError::NotWired),
            Wired::Yes(s) => Ok(s.clone()),
        }
    }

    fn deliver_update(self: &Arc<Self>, value: CommObject, seq: u64) {
        let waiters: Vec<_> = {
            let mut mb = self.mailbox.lock().unwrap();
            if seq <= mb.seq {
                return; // stale: a fresher value was already delivered
            }
            mb.seq = seq;
            mb.value = Some(value.clone());
            let ws = std::mem::take(&mut *self.update_waiters.lock().unwrap());
            if !ws.is_empty() {
                // blocked readers consume this delivery
                mb.last_read = seq;
            }
            ws
        };
        for cell in waiters {
            cell.post(&self.clock, Ok(value.clone()));
        }
    }

    fn deliver_event(self: &Arc<Self>, id: u64, notif: CommObject) {
        let mut events = self.events.lock().unwrap();
        let Some(entry) = events.get_mut(&id) else { return };
        if let Some(cell) = entry.waiters.pop() {
            cell.post(&self.clock, Ok(notif));
        } else {
            entry.queue.push_back(notif);
        }
    }

    fn cancel_all_blocked(&self, err: PatternError) {
        let pending: Vec<_> = self.pending.lock().unwrap().values().cloned().collect();
        for cell in pending {
            cell.post(&self.clock, Err(err.clone()));
        }
        let waiters: Vec<_> = std::mem::take(&mut *self.update_waiters.lock().unwrap());
        for cell in waiters {
            cell.post(&self.clock, Err(err.clone()));
        }
        let mut events = self.events.lock().unwrap();
        for entry in events.values_mut() {
            for cell in entry.waiters.drain(..) {
                cell.post(&self.clock, Err(err.clone()));
            }
        }
    }
}

impl ClientPort {
    pub(crate) fn new(
        instance: &str,
        spec: ServicePortSpec,
        clock: Clock,
        types: Arc<TypeTable>,
        counters: Arc<Counters>,
    ) -> Self {
        ClientPort {
            core: Arc::new(ClientCore {
                instance: instance.to_string(),
                spec,
                clock,
                types,
                counters,
                active: AtomicBool::new(true),
                wired: Mutex::new(Wired::No),
                timeout_override_ms: Mutex::new(None),
                next_id: AtomicU64::new(1),
                pending: Mutex::new(HashMap::new()),
                mailbox: Mutex::new(Mailbox { seq: 0, last_read: 0, value: None }),
                update_waiters: Mutex::new(Vec::new()),
                events: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn spec(&self) -> &ServicePortSpec {
        &self.core.spec
    }

    pub fn is_wired(&self) -> bool {
        matches!(&*self.core.wired.lock().unwrap(), Wired::Yes(_))
    }

    pub fn set_timeout_override(&self, timeout_ms: Option<u64>) {
        *self.core.timeout_override_ms.lock().unwrap() = timeout_ms;
    }

    pub(crate) fn set_active(&self, active: bool) {
        self.core.active.store(active, Ordering::SeqCst);
        if !active {
            self.core.cancel_all_blocked(PatternError::ServiceDeactivated);
        }
    }

    pub(crate) fn cancel_blocked(&self, err: PatternError) {
        self.core.cancel_all_blocked(err);
    }

    /// Wire this requestor to a provider. Implicit disconnect housekeeping
    /// runs first if the requestor is live; push-pattern requestors are
    /// subscribed to the new provider.
    pub(crate) fn wire(&self, server: &ServerPort) {
        self.disconnect();
        {
            let mut w = self.core.wired.lock().unwrap();
            *w = Wired::Yes(server.core.clone());
        }
        if matches!(self.core.spec.pattern, Pattern::PushNewest | Pattern::PushTimed) {
            let _ = self.subscribe();
        }
    }

    /// Housekeeping: unwire and unblock every pending call with
    /// `Disconnected`. Idempotent.
    pub fn disconnect(&self) {
        let previous = {
            let mut w = self.core.wired.lock().unwrap();
            std::mem::replace(&mut *w, Wired::No)
        };
        if let Wired::Yes(server) = previous {
            let me = Arc::downgrade(&self.core);
            let mut push = server.push.lock().unwrap();
            push.subscribers
                .retain(|w| !w.ptr_eq(&me) && w.strong_count() > 0);
            drop(push);
            let mut acts = server.activations.lock().unwrap();
            acts.retain(|a| !a.client.ptr_eq(&me));
        }
        self.core.cancel_all_blocked(PatternError::Disconnected);
    }

    /// One-way send: returns after local hand-off to the provider's queue.
    pub fn send(&self, msg: CommObject) -> Result<(), PatternError> {
        let server = self.core.gate()?;
        let expected = self.core.spec.request_type.as_deref().unwrap_or("");
        if msg.type_name != expected {
            return Err(PatternError::TypeMismatch(format!(
                "send expects {expected}, got {}",
                msg.type_name
            )));
        }
        self.core.types.check(&msg)?;
        if !server.active.load(Ordering::SeqCst) {
            return Err(PatternError::ServiceDeactivated);
        }
        if server.pending_jobs.fetch_add(1, Ordering::SeqCst) >= server.queue_depth {
            server.pending_jobs.fetch_sub(1, Ordering::SeqCst);
            return Err(PatternError::QueueFull);
        }
        let srv = server.clone();
        server.executor.enqueue(move || {
            srv.pending_jobs.fetch_sub(1, Ordering::SeqCst);
            let handler = srv.send_handler.lock().unwrap().clone();
            match handler {
                Some(h) => {
                    srv.counters.inc("pattern.send");
                    srv.counters
                        .inc(&format!("port.{}.{}", srv.instance, srv.spec.name));
                    h(msg);
                }
                None => log::warn!(
                    "send to {}.{} dropped: no handler registered",
                    srv.instance,
                    srv.spec.name
                ),
            }
        });
        Ok(())
    }

    fn dispatch_query(&self, request: CommObject) -> Result<u64, PatternError> {
        let server = self.core.gate()?;
        let expected = self.core.spec.request_type.as_deref().unwrap_or("");
        if request.type_name != expected {
            return Err(PatternError::TypeMismatch(format!(
                "query expects {expected}, got {}",
                request.type_name
            )));
        }
        self.core.types.check(&request)?;
        if !server.active.load(Ordering::SeqCst) {
            return Err(PatternError::ServiceDeactivated);
        }
        if server.pending_jobs.fetch_add(1, Ordering::SeqCst) >= server.queue_depth {
            server.pending_jobs.fetch_sub(1, Ordering::SeqCst);
            return Err(PatternError::QueueFull);
        }
        let id = self.core.next_id.fetch_add(1, Ordering::SeqCst);
        let cell: Arc<WaitCell<CommObject>> = WaitCell::new();
        self.core.pending.lock().unwrap().insert(id, cell.clone());
        server.inflight.lock().unwrap().push(Arc::downgrade(&cell));
        let srv = server.clone();
        server.executor.enqueue(move || {
            srv.pending_jobs.fetch_sub(1, Ordering::SeqCst);
            let handler = srv.query_handler.lock().unwrap().clone();
            match handler {
                None => log::warn!(
                    "query to {}.{} unanswered: no handler registered",
                    srv.instance,
                    srv.spec.name
                ),
                Some(h) => match h(request) {
                    Ok(answer) => {
                        let type_ok = srv
                            .spec
                            .answer_type
                            .as_deref()
                            .is_some_and(|t| t == answer.type_name)
                            && srv.types.check(&answer).is_ok();
                        if type_ok {
                            srv.counters.inc("pattern.query");
                            srv.counters
                                .inc(&format!("port.{}.{}", srv.instance, srv.spec.name));
                            cell.post(&srv.clock, Ok(answer));
                        } else {
                            log::warn!(
                                "query answer from {}.{} has wrong type; suppressed",
                                srv.instance,
                                srv.spec.name
                            );
                        }
                    }
                    Err(fault) => {
                        // handler faults never cross the component boundary
                        log::warn!(
                            "query handler fault in {}.{}: {fault}",
                            srv.instance,
                            srv.spec.name
                        );
                    }
                },
            }
            srv.inflight.lock().unwrap().retain(|w| w.strong_count() > 0);
        });
        Ok(id)
    }

    fn await_answer(
        &self,
        id: u64,
        timeout: Option<u64>,
    ) -> Result<CommObject, PatternError> {
        let cell = self
            .core
            .pending
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(PatternError::UnknownId)?;
        let deadline = timeout.map(|t| self.core.clock.now_ms() + t);
        if let Some(d) = deadline {
            cell.arm_timeout(&self.core.clock, d);
        }
        let result = cell.wait(&self.core.clock, deadline);
        match &result {
            // timed-out ids stay outstanding; the answer may still arrive
            Err(PatternError::Timeout) => {}
            _ => {
                self.core.pending.lock().unwrap().remove(&id);
            }
        }
        result
    }

    /// Blocking two-way request under the port's effective timeout.
    pub fn query(&self, request: CommObject) -> Result<CommObject, PatternError> {
        self.query_with_timeout(request, self.core.effective_timeout(None))
    }

    pub fn query_with_timeout(
        &self,
        request: CommObject,
        timeout_ms: Option<u64>,
    ) -> Result<CommObject, PatternError> {
        let id = self.dispatch_query(request)?;
        let r = self.await_answer(id, timeout_ms);
        if matches!(r, Err(PatternError::Timeout)) {
            // a blocking query abandons its id on timeout
            self.core.pending.lock().unwrap().remove(&id);
        }
        r
    }

    /// Fire-and-collect-later request; the id must be consumed by
    /// [`ClientPort::query_receive`].
    pub fn query_async(&self, request: CommObject) -> Result<QueryId, PatternError> {
        self.dispatch_query(request).map(QueryId)
    }

    pub fn query_receive(
        &self,
        id: QueryId,
        wait: bool,
    ) -> Result<ReceiveResult, PatternError> {
        if !wait {
            let mut pending = self.core.pending.lock().unwrap();
            let cell = pending.get(&id.0).cloned().ok_or(PatternError::UnknownId)?;
            return match cell.try_take() {
                Some(Ok(ans)) => {
                    pending.remove(&id.0);
                    Ok(ReceiveResult::Answer(ans))
                }
                Some(Err(e)) => {
                    pending.remove(&id.0);
                    Err(e)
                }
                None => Ok(ReceiveResult::Pending),
            };
        }
        self.await_answer(id.0, self.core.effective_timeout(None))
            .map(ReceiveResult::Answer)
    }

    /// Register with the wired publisher. Push newest hands the current
    /// value over immediately if one exists.
    pub fn subscribe(&self) -> Result<(), PatternError> {
        let server = self.core.gate()?;
        let me = Arc::downgrade(&self.core);
        let initial = {
            let mut push = server.push.lock().unwrap();
            if !push.subscribers.iter().any(|w| w.ptr_eq(&me)) {
                push.subscribers.push(me);
            }
            match (&server.spec.pattern, push.current.clone()) {
                (Pattern::PushNewest, Some(v)) => {
                    push.seq += 1;
                    Some((v, push.seq))
                }
                _ => None,
            }
        };
        if let Some((v, seq)) = initial {
            self.core.deliver_update(v, seq);
            self.core.counters.inc("pattern.pushnewest");
        }
        Ok(())
    }

    /// Read the freshest value. `wait=false` returns `Ok(None)` when nothing
    /// newer than the last read exists.
    pub fn get_update(&self, wait: bool) -> Result<Option<CommObject>, PatternError> {
        self.core.gate()?;
        {
            let mut mb = self.core.mailbox.lock().unwrap();
            if mb.seq > mb.last_read {
                mb.last_read = mb.seq;
                return Ok(mb.value.clone());
            }
        }
        if !wait {
            return Ok(None);
        }
        let cell: Arc<WaitCell<CommObject>> = WaitCell::new();
        {
            // re-check under the waiter lock so a concurrent delivery is not lost
            let mut mb = self.core.mailbox.lock().unwrap();
            if mb.seq > mb.last_read {
                mb.last_read = mb.seq;
                return Ok(mb.value.clone());
            }
            self.core.update_waiters.lock().unwrap().push(cell.clone());
        }
        cell.wait(&self.core.clock, None).map(Some)
    }

    /// Activate the event with a parameter; the server evaluates its test
    /// function against it on every state change.
    pub fn event_activate(
        &self,
        param: CommObject,
        mode: EventMode,
    ) -> Result<ActivationId, PatternError> {
        let server = self.core.gate()?;
        let expected = self.core.spec.request_type.as_deref().unwrap_or("");
        if param.type_name != expected {
            return Err(PatternError::TypeMismatch(format!(
                "event activation expects {expected}, got {}",
                param.type_name
            )));
        }
        self.core.types.check(&param)?;
        let id = self.core.next_id.fetch_add(1, Ordering::SeqCst);
        self.core
            .events
            .lock()
            .unwrap()
            .insert(id, EventQueue { queue: VecDeque::new(), waiters: Vec::new() });
        server.activations.lock().unwrap().push(Activation {
            client: Arc::downgrade(&self.core),
            id,
            param,
            mode,
        });
        Ok(ActivationId(id))
    }

    /// Fetch the next queued notification. `wait=false` returns `Ok(None)`
    /// when the queue is empty.
    pub fn event_get(
        &self,
        id: ActivationId,
        wait: bool,
    ) -> Result<Option<CommObject>, PatternError> {
        self.core.gate()?;
        let cell: Arc<WaitCell<CommObject>> = WaitCell::new();
        {
            let mut events = self.core.events.lock().unwrap();
            let entry = events.get_mut(&id.0).ok_or(PatternError::UnknownId)?;
            if let Some(n) = entry.queue.pop_front() {
                return Ok(Some(n));
            }
            if !wait {
                return Ok(None);
            }
            entry.waiters.push(cell.clone());
        }
        let deadline = self
            .core
            .effective_timeout(None)
            .map(|t| self.core.clock.now_ms() + t);
        if let Some(d) = deadline {
            cell.arm_timeout(&self.core.clock, d);
        }
        cell.wait(&self.core.clock, deadline).map(Some)
    }

    /// Deactivate; later `event_get` calls on this id return `UnknownId`.
    pub fn event_deactivate(&self, id: ActivationId) -> Result<(), PatternError> {
        let entry = self.core.events.lock().unwrap().remove(&id.0);
        let Some(entry) = entry else {
            return Err(PatternError::UnknownId);
        };
        for cell in entry.waiters {
            cell.post(&self.core.clock, Err(PatternError::Disconnected));
        }
        if let Wired::Yes(server) = &*self.core.wired.lock().unwrap() {
            server.activations.lock().unwrap().retain(|a| a.id != id.0);
        }
        Ok(())
    }
}
