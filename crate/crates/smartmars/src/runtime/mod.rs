//! Executable semantics of the interaction patterns (send, query, push
//! newest, push timed, event) plus the management patterns (state, wiring,
//! param) over the in-process reference transport.

mod executor;
mod port;
mod state;
mod sync;
pub mod tcp;

pub use executor::Executor;
pub use port::{ActivationId, ClientPort, EventMode, QueryId, ReceiveResult, ServerPort, TimedTicket};
pub use state::{StateAutomaton, NEUTRAL};
pub use sync::WaitCell;

use crate::clock::Clock;
use crate::model::{
    CommObjectType, ComponentModel, Direction, FieldType, ModelFile, ParamType,
    ServicePortSpec,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("endpoint is not wired")]
    NotWired,
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("timeout")]
    Timeout,
    #[error("disconnected")]
    Disconnected,
    #[error("unknown id")]
    UnknownId,
    #[error("request queue full")]
    QueueFull,
    #[error("handler already registered")]
    HandlerAlreadyRegistered,
    #[error("service deactivated")]
    ServiceDeactivated,
    #[error("push timed publisher already started")]
    AlreadyStarted,
    #[error("no cycle time declared")]
    NoCycleTime,
    #[error("unknown endpoint: {0}")]
    UnknownEndpoint(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("unknown state: {0}")]
    UnknownState(String),
    #[error("unknown parameter key: {0}")]
    UnknownKey(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// A runtime value carried in a communication object field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    Object(CommObject),
    List(Vec<Value>),
}

/// A typed payload instance transmitted by the patterns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommObject {
    pub type_name: String,
    pub fields: Vec<(String, Value)>,
}

impl CommObject {
    pub fn new(type_name: impl Into<String>, fields: Vec<(&str, Value)>) -> Self {
        CommObject {
            type_name: type_name.into(),
            fields: fields.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        }
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.fields.iter().find(|(n, _)| n == field).map(|(_, v)| v)
    }

    pub fn int(&self, field: &str) -> Option<i64> {
        match self.get(field) {
            Some(Value::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn float(&self, field: &str) -> Option<f64> {
        match self.get(field) {
            Some(Value::Float(v)) => Some(*v),
            _ => None,
        }
    }
}

/// Communication-object type table used for payload conformance checks.
#[derive(Debug, Default, Clone)]
pub struct TypeTable {
    types: BTreeMap<String, CommObjectType>,
}

impl TypeTable {
    pub fn from_model(model: &ModelFile) -> Self {
        TypeTable {
            types: model
                .comm_objects
                .iter()
                .map(|c| (c.name.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn insert(&mut self, t: CommObjectType) {
        self.types.insert(t.name.clone(), t);
    }

    pub fn get(&self, name: &str) -> Option<&CommObjectType> {
        self.types.get(name)
    }

    fn check_value(&self, v: &Value, t: &FieldType, path: &str) -> Result<(), PatternError> {
        let ok = match (v, t) {
            (Value::Bool(_), FieldType::Bool)
            | (Value::Int(_), FieldType::Int64)
            | (Value::Float(_), FieldType::Float64)
            | (Value::Str(_), FieldType::Str)
            | (Value::Bytes(_), FieldType::Bytes) => true,
            (Value::Object(o), FieldType::Object(name)) => {
                if &o.type_name != name {
                    return Err(PatternError::TypeMismatch(format!(
                        "{path}: expected {name}, got {}",
                        o.type_name
                    )));
                }
                self.check(o)?;
                true
            }
            (Value::List(items), FieldType::List(inner)) => {
                for (i, item) in items.iter().enumerate() {
                    self.check_value(item, inner, &format!("{path}[{i}]"))?;
                }
                true
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(PatternError::TypeMismatch(format!("{path}: expected {t}")))
        }
    }

    /// Check that `obj` conforms to its declared type: field names, order
    /// and primitive kinds.
    pub fn check(&self, obj: &CommObject) -> Result<(), PatternError> {
        let ty = self.types.get(&obj.type_name).ok_or_else(|| {
            PatternError::TypeMismatch(format!("unknown type {}", obj.type_name))
        })?;
        if obj.fields.len() != ty.fields.len() {
            return Err(PatternError::TypeMismatch(format!(
                "{}: expected {} fields, got {}",
                obj.type_name,
                ty.fields.len(),
                obj.fields.len()
            )));
        }
        for ((fname, fval), (tname, ftype)) in obj.fields.iter().zip(&ty.fields) {
            if fname != tname {
                return Err(PatternError::TypeMismatch(format!(
                    "{}: expected field '{tname}', got '{fname}'",
                    obj.type_name
                )));
            }
            self.check_value(fval, ftype, &format!("{}.{fname}", obj.type_name))?;
        }
        Ok(())
    }
}

/// Reason a required/provided pair cannot be wired, if any.
pub fn compatibility_error(
    required: &ServicePortSpec,
    provided: &ServicePortSpec,
) -> Option<String> {
    if required.pattern != provided.pattern {
        return Some(format!(
            "pattern mismatch: {} vs {}",
            required.pattern, provided.pattern
        ));
    }
    if required.request_type != provided.request_type
        || required.answer_type != provided.answer_type
    {
        return Some("communication object mismatch".to_string());
    }
    None
}

/// True iff the two port specs use the same pattern and communication
/// object types.
pub fn check_compatibility(required: &ServicePortSpec, provided: &ServicePortSpec) -> bool {
    compatibility_error(required, provided).is_none()
}

/// Monotonic named counters for deliveries, transitions and housekeeping.
#[derive(Default)]
pub struct Counters {
    map: Mutex<BTreeMap<String, u64>>,
}

impl Counters {
    pub fn inc(&self, key: &str) {
        *self.map.lock().unwrap().entry(key.to_string()).or_insert(0) += 1;
    }

    pub fn get(&self, key: &str) -> u64 {
        self.map.lock().unwrap().get(key).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.map.lock().unwrap().clone()
    }
}

/// One component instance at run time: executor, endpoints, state automaton
/// and parameter set.
pub struct ComponentRt {
    pub instance: String,
    pub model: ComponentModel,
    pub executor: Arc<Executor>,
    clients: BTreeMap<String, ClientPort>,
    servers: BTreeMap<String, ServerPort>,
    state: Mutex<StateAutomaton>,
    params: Mutex<BTreeMap<String, Value>>,
    param_hook: Mutex<Option<Arc<dyn Fn(&str, &Value) + Send + Sync>>>,
    clock: Clock,
    counters: Arc<Counters>,
}

impl ComponentRt {
    pub fn client(&self, port: &str) -> Option<&ClientPort> {
        self.clients.get(port)
    }

    pub fn server(&self, port: &str) -> Option<&ServerPort> {
        self.servers.get(port)
    }

    pub fn param(&self, key: &str) -> Option<Value> {
        self.params.lock().unwrap().get(key).cloned()
    }

    pub fn set_param_hook(&self, hook: impl Fn(&str, &Value) + Send + Sync + 'static) {
        *self.param_hook.lock().unwrap() = Some(Arc::new(hook));
    }

    /// Configure the state automaton (states, port bindings, hooks).
    pub fn configure_state(&self, f: impl FnOnce(&mut StateAutomaton)) {
        let mut st = self.state.lock().unwrap();
        f(&mut st);
        // newly bound ports must honour the current (possibly Neutral) state
        self.apply_port_gates(&st);
    }

    pub fn current_state(&self) -> String {
        self.state.lock().unwrap().current().to_string()
    }

    pub fn state_counts(&self, state: &str) -> (u64, u64) {
        self.state.lock().unwrap().counts(state)
    }

    fn apply_port_gates(&self, st: &StateAutomaton) {
        for (name, server) in &self.servers {
            let active = st.port_active(name);
            server.set_active(active);
        }
        for (name, client) in &self.clients {
            let active = st.port_active(name);
            client.set_active(active);
        }
    }

    /// Serialized state transition: exit action of the current state, then
    /// entry action of the target, then port gate recomputation.
    pub fn set_state(self: &Arc<Self>, target: &str) -> Result<(), PatternError> {
        {
            let st = self.state.lock().unwrap();
            if !st.has_state(target) {
                return Err(PatternError::UnknownState(target.to_string()));
            }
        }
        let ack: Arc<WaitCell<()>> = WaitCell::new();
        let this = self.clone();
        let target = target.to_string();
        let cell = ack.clone();
        self.executor.enqueue(move || {
            {
                let mut st = this.state.lock().unwrap();
                st.transition(&target);
                this.apply_port_gates(&st);
            }
            this.counters.inc("state.transitions");
            cell.post(&this.clock, Ok(()));
        });
        ack.wait(&self.clock, None)
    }

    /// Update one parameter; the registered hook observes the new value.
    pub fn set_param(&self, key: &str, value: Value) -> Result<(), PatternError> {
        let Some((_, vt)) = self.model.param_schema.iter().find(|(k, _)| k == key) else {
            return Err(PatternError::UnknownKey(key.to_string()));
        };
        let ok = matches!(
            (&value, vt),
            (Value::Bool(_), ParamType::Bool)
                | (Value::Int(_), ParamType::Int64)
                | (Value::Float(_), ParamType::Float64)
                | (Value::Str(_), ParamType::Str)
        );
        if !ok {
            return Err(PatternError::TypeMismatch(format!(
                "parameter '{key}' expects {vt}"
            )));
        }
        self.params.lock().unwrap().insert(key.to_string(), value.clone());
        self.counters.inc("param.sets");
        let hook = self.param_hook.lock().unwrap().clone();
        if let Some(h) = hook {
            h(key, &value);
        }
        Ok(())
    }

    fn disconnect_all(&self) {
        for client in self.clients.values() {
            client.disconnect();
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.counters
    }

    /// Unblock every pending call on this component's requestor ports with
    /// `Disconnected`, without changing the wiring. Used by cooperative
    /// task cancellation.
    pub fn cancel_blocked_calls(&self) {
        for client in self.clients.values() {
            client.cancel_blocked(PatternError::Disconnected);
        }
    }
}

/// The in-process world: components, wiring master and shared clock.
pub struct Runtime {
    pub clock: Clock,
    pub types: Arc<TypeTable>,
    pub counters: Arc<Counters>,
    components: Mutex<BTreeMap<String, Arc<ComponentRt>>>,
}

impl Runtime {
    pub fn new(clock: Clock, types: TypeTable) -> Arc<Self> {
        Arc::new(Runtime {
            clock,
            types: Arc::new(types),
            counters: Arc::new(Counters::default()),
            components: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn add_component(&self, instance: &str, model: &ComponentModel) -> Arc<ComponentRt> {
        let executor = Executor::new(instance, self.clock.clone());
        let mut clients = BTreeMap::new();
        let mut servers = BTreeMap::new();
        for spec in &model.ports {
            match spec.direction {
                Direction::Required => {
                    clients.insert(
                        spec.name.clone(),
                        ClientPort::new(
                            instance,
                            spec.clone(),
                            self.clock.clone(),
                            self.types.clone(),
                            self.counters.clone(),
                        ),
                    );
                }
                Direction::Provided => {
                    servers.insert(
                        spec.name.clone(),
                        ServerPort::new(
                            instance,
                            spec.clone(),
                            self.clock.clone(),
                            self.types.clone(),
                            self.counters.clone(),
                            executor.clone(),
                        ),
                    );
                }
            }
        }
        let comp = Arc::new(ComponentRt {
            instance: instance.to_string(),
            model: model.clone(),
            executor,
            clients,
            servers,
            state: Mutex::new(StateAutomaton::new()),
            params: Mutex::new(BTreeMap::new()),
            param_hook: Mutex::new(None),
            clock: self.clock.clone(),
            counters: self.counters.clone(),
        });
        self.components
            .lock()
            .unwrap()
            .insert(instance.to_string(), comp.clone());
        comp
    }

    pub fn component(&self, instance: &str) -> Option<Arc<ComponentRt>> {
        self.components.lock().unwrap().get(instance).cloned()
    }

    pub fn instances(&self) -> Vec<String> {
        self.components.lock().unwrap().keys().cloned().collect()
    }

    fn endpoint_client(&self, instance: &str, port: &str) -> Result<ClientPort, PatternError> {
        self.component(instance)
            .and_then(|c| c.client(port).cloned())
            .ok_or_else(|| PatternError::UnknownEndpoint(format!("{instance}.{port}")))
    }

    fn endpoint_server(&self, instance: &str, port: &str) -> Result<ServerPort, PatternError> {
        self.component(instance)
            .and_then(|c| c.server(port).cloned())
            .ok_or_else(|| PatternError::UnknownEndpoint(format!("{instance}.{port}")))
    }

    /// Wiring-master connect. Compatibility is checked first; re-wiring a
    /// live requestor runs implicit disconnect housekeeping.
    pub fn connect(
        &self,
        from: (&str, &str),
        to: (&str, &str),
    ) -> Result<(), PatternError> {
        let client = self.endpoint_client(from.0, from.1)?;
        let server = self.endpoint_server(to.0, to.1)?;
        if let Some(reason) = compatibility_error(client.spec(), server.spec()) {
            return Err(PatternError::Incompatible(reason));
        }
        client.wire(&server);
        self.counters.inc("wiring.connect");
        Ok(())
    }

    /// Wiring-master disconnect: idempotent, unblocks all pending calls on
    /// the requestor.
    pub fn disconnect(&self, from: (&str, &str)) -> Result<(), PatternError> {
        let client = self.endpoint_client(from.0, from.1)?;
        client.disconnect();
        self.counters.inc("wiring.disconnect");
        Ok(())
    }

    pub fn set_state(&self, instance: &str, target: &str) -> Result<(), PatternError> {
        let comp = self
            .component(instance)
            .ok_or_else(|| PatternError::UnknownEndpoint(instance.to_string()))?;
        comp.set_state(target)
    }

    pub fn set_param(&self, instance: &str, key: &str, value: Value) -> Result<(), PatternError> {
        let comp = self
            .component(instance)
            .ok_or_else(|| PatternError::UnknownEndpoint(instance.to_string()))?;
        comp.set_param(key, value)
    }

    /// Drive the virtual clock to `t`, firing timers and waiting for
    /// quiescence between fires.
    pub fn run_until(&self, t: u64) {
        self.clock.advance_to(t);
    }

    /// Tear the world down: stop timers, unblock everything, join executors.
    pub fn shutdown(&self) {
        self.clock.stop();
        let comps: Vec<_> = self.components.lock().unwrap().values().cloned().collect();
        for c in &comps {
            c.disconnect_all();
        }
        for c in &comps {
            c.executor.shutdown();
        }
    }
}
