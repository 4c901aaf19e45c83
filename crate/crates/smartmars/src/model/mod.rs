//! Platform-independent model (PIM), platform description model (PDM) and
//! deployment model: domain types, canonical text format and validation.

mod parse;
mod serialize;
mod validate;

pub use parse::{parse_model, parse_model_partial, resolve_references, ModelError};
pub use serialize::serialize_model;
pub use validate::{validate_component, validate_model, Violation};

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

/// Primitive and composite field types carried by communication objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FieldType {
    Bool,
    Int64,
    Float64,
    Str,
    Bytes,
    /// Reference to another communication object type by name.
    Object(String),
    List(Box<FieldType>),
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldType::Bool => write!(f, "bool"),
            FieldType::Int64 => write!(f, "int64"),
            FieldType::Float64 => write!(f, "float64"),
            FieldType::Str => write!(f, "string"),
            FieldType::Bytes => write!(f, "bytes"),
            FieldType::Object(n) => write!(f, "{n}"),
            FieldType::List(t) => write!(f, "list<{t}>"),
        }
    }
}

/// A named, typed payload structure transmitted by the interaction patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommObjectType {
    pub name: String,
    pub fields: Vec<(String, FieldType)>,
}

/// The five data-communication pattern kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Pattern {
    Send,
    Query,
    PushNewest,
    PushTimed,
    Event,
}

impl Pattern {
    pub fn keyword(self) -> &'static str {
        match self {
            Pattern::Send => "send",
            Pattern::Query => "query",
            Pattern::PushNewest => "pushnewest",
            Pattern::PushTimed => "pushtimed",
            Pattern::Event => "event",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Provided,
    Required,
}

/// Declared timeout for query/event ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Timeout {
    Unbounded,
    Ms(u64),
}

/// QoS attributes of a service port. `cycle_time_ms` applies to push timed,
/// `timeout_ms` to query and event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct QosParams {
    pub cycle_time_ms: Option<u64>,
    pub timeout_ms: Option<Timeout>,
}

/// A provided or required service port with its pattern kind, communication
/// object types and QoS parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServicePortSpec {
    pub name: String,
    pub pattern: Pattern,
    pub direction: Direction,
    /// Send/Query request type; Event activation parameter type.
    pub request_type: Option<String>,
    /// Query answer, push payload or event notification type.
    pub answer_type: Option<String>,
    pub qos: QosParams,
    /// Optional declared minimum handling time of a provider, used for the
    /// deployment-time QoS cross-check against requestor timeouts.
    pub min_handling_ms: Option<u64>,
}

/// Platform-independent task attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskSpec {
    pub name: String,
    pub is_realtime: bool,
    pub is_periodic: bool,
    pub period_ms: Option<u64>,
    pub wcet_ms: Option<u64>,
    /// Larger value = more urgent.
    pub priority: i64,
}

/// User-code constraint tags checked against platform capabilities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ConstraintTag {
    RequiresRealtime,
    RequiresDevice { class: String, count: u64 },
    RequiresMemoryMb(u64),
}

/// Value types allowed in a component's parameter schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamType {
    Bool,
    Int64,
    Float64,
    Str,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamType::Bool => write!(f, "bool"),
            ParamType::Int64 => write!(f, "int64"),
            ParamType::Float64 => write!(f, "float64"),
            ParamType::Str => write!(f, "string"),
        }
    }
}

/// PIM-level description of a component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentModel {
    pub name: String,
    pub ports: Vec<ServicePortSpec>,
    pub tasks: Vec<TaskSpec>,
    pub param_schema: Vec<(String, ParamType)>,
    pub constraints: Vec<ConstraintTag>,
}

impl ComponentModel {
    pub fn port(&self, name: &str) -> Option<&ServicePortSpec> {
        self.ports.iter().find(|p| p.name == name)
    }
}

/// Capabilities of a target platform (PDM).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformDescription {
    pub name: String,
    pub supports_realtime: bool,
    pub memory_mb: u64,
    /// Device class -> available count.
    pub devices: BTreeMap<String, u64>,
    /// Reserved; analysis treats each platform as single-processor.
    pub cpu_count: u32,
}

/// One component instance placed on a platform.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub name: String,
    pub component: String,
    pub platform: String,
}

/// One initial-wiring entry: requestor -> provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Wire {
    pub from_instance: String,
    pub from_port: String,
    pub to_instance: String,
    pub to_port: String,
    /// Deployment-level timeout override (the only QoS parameter assignable
    /// at deployment time).
    pub timeout_override_ms: Option<u64>,
}

/// Component instances, placement and initial wiring.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DeploymentModel {
    pub instances: Vec<Instance>,
    pub wiring: Vec<Wire>,
}

impl DeploymentModel {
    pub fn instance(&self, name: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.name == name)
    }
}

/// Everything declared in one model file (or a merge of several).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ModelFile {
    pub comm_objects: Vec<CommObjectType>,
    pub components: Vec<ComponentModel>,
    pub platforms: Vec<PlatformDescription>,
    pub deployment: Option<DeploymentModel>,
}

impl ModelFile {
    pub fn comm_object(&self, name: &str) -> Option<&CommObjectType> {
        self.comm_objects.iter().find(|c| c.name == name)
    }

    pub fn component(&self, name: &str) -> Option<&ComponentModel> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn platform(&self, name: &str) -> Option<&PlatformDescription> {
        self.platforms.iter().find(|p| p.name == name)
    }

    /// Merge another file into this one. Duplicate top-level names are
    /// reported as an error.
    pub fn merge(&mut self, other: ModelFile) -> Result<(), ModelError> {
        for c in other.comm_objects {
            if self.comm_object(&c.name).is_some() {
                return Err(ModelError::DuplicateName(c.name));
            }
            self.comm_objects.push(c);
        }
        for c in other.components {
            if self.component(&c.name).is_some() {
                return Err(ModelError::DuplicateName(c.name));
            }
            self.components.push(c);
        }
        for p in other.platforms {
            if self.platform(&p.name).is_some() {
                return Err(ModelError::DuplicateName(p.name));
            }
            self.platforms.push(p);
        }
        if let Some(d) = other.deployment {
            if self.deployment.is_some() {
                return Err(ModelError::DuplicateName("deployment".into()));
            }
            self.deployment = Some(d);
        }
        Ok(())
    }
}
