//! Parser for the canonical model text format (see docs/model-format.md).

use super::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
    Arrow,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

type Spanned = (Tok, u32, u32);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = *self.src.get(self.pos)?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn err(&self, msg: impl Into<String>) -> ModelError {
        ModelError::Syntax { line: self.line, col: self.col, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ModelError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c == b'#' {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else { break };
            if c.is_ascii_alphabetic() || c == b'_' {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), line, col));
            } else if c.is_ascii_digit() || c == b'-' {
                let mut s = String::new();
                if c == b'-' {
                    s.push('-');
                    self.bump();
                    if self.peek() == Some(b'>') {
                        self.bump();
                        out.push((Tok::Arrow, line, col));
                        continue;
                    }
                    if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(self.err("expected digit or '>' after '-'"));
                    }
                }
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                let v: i64 = s
                    .parse()
                    .map_err(|_| self.err(format!("integer out of range: {s}")))?;
                out.push((Tok::Int(v), line, col));
            } else if b"{}:;.<>=".contains(&c) {
                self.bump();
                out.push((Tok::Punct(c as char), line, col));
            } else {
                return Err(self.err(format!("unexpected character {:?}", c as char)));
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn span(&self) -> (u32, u32) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| (t.1, t.2))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ModelError {
        let (line, col) = self.span();
        ModelError::Syntax { line, col, msg: msg.into() }
    }

    fn next(&mut self) -> Result<Tok, ModelError> {
        let t = self
            .toks
            .get(self.pos)
            .map(|t| t.0.clone())
            .ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn ident(&mut self) -> Result<String, ModelError> {
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            t => {
                self.pos -= 1;
                Err(self.err(format!("expected identifier, found {t:?}")))
            }
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ModelError> {
        match self.next()? {
            Tok::Punct(p) if p == c => Ok(()),
            t => {
                self.pos -= 1;
                Err(self.err(format!("expected '{c}', found {t:?}")))
            }
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn uint(&mut self) -> Result<u64, ModelError> {
        match self.next()? {
            Tok::Int(v) if v >= 0 => Ok(v as u64),
            t => {
                self.pos -= 1;
                Err(self.err(format!("expected non-negative integer, found {t:?}")))
            }
        }
    }

    fn int(&mut self) -> Result<i64, ModelError> {
        match self.next()? {
            Tok::Int(v) => Ok(v),
            t => {
                self.pos -= 1;
                Err(self.err(format!("expected integer, found {t:?}")))
            }
        }
    }

    fn boolean(&mut self) -> Result<bool, ModelError> {
        match self.next()? {
            Tok::Ident(s) if s == "true" => Ok(true),
            Tok::Ident(s) if s == "false" => Ok(false),
            t => {
                self.pos -= 1;
                Err(self.err(format!("expected 'true' or 'false', found {t:?}")))
            }
        }
    }

    fn field_type(&mut self) -> Result<FieldType, ModelError> {
        let name = self.ident()?;
        Ok(match name.as_str() {
            "bool" => FieldType::Bool,
            "int64" => FieldType::Int64,
            "float64" => FieldType::Float64,
            "string" => FieldType::Str,
            "bytes" => FieldType::Bytes,
            "list" => {
                self.punct('<')?;
                let inner = self.field_type()?;
                self.punct('>')?;
                FieldType::List(Box::new(inner))
            }
            _ => FieldType::Object(name),
        })
    }

    fn param_type(&mut self) -> Result<ParamType, ModelError> {
        let name = self.ident()?;
        match name.as_str() {
            "bool" => Ok(ParamType::Bool),
            "int64" => Ok(ParamType::Int64),
            "float64" => Ok(ParamType::Float64),
            "string" => Ok(ParamType::Str),
            _ => {
                self.pos -= 1;
                Err(self.err(format!("invalid parameter type '{name}'")))
            }
        }
    }

    fn comm_object(&mut self) -> Result<CommObjectType, ModelError> {
        let name = self.ident()?;
        self.punct('{')?;
        let mut fields = Vec::new();
        while !self.eat_punct('}') {
            let fname = self.ident()?;
            self.punct(':')?;
            let ftype = self.field_type()?;
            self.punct(';')?;
            fields.push((fname, ftype));
        }
        Ok(CommObjectType { name, fields })
    }

    fn port(&mut self) -> Result<ServicePortSpec, ModelError> {
        let name = self.ident()?;
        self.punct(':')?;
        let pat = self.ident()?;
        let pattern = match pat.as_str() {
            "send" => Pattern::Send,
            "query" => Pattern::Query,
            "pushnewest" => Pattern::PushNewest,
            "pushtimed" => Pattern::PushTimed,
            "event" => Pattern::Event,
            _ => {
                self.pos -= 1;
                return Err(self.err(format!("unknown pattern '{pat}'")));
            }
        };
        let dir = self.ident()?;
        let direction = match dir.as_str() {
            "provided" => Direction::Provided,
            "required" => Direction::Required,
            _ => {
                self.pos -= 1;
                return Err(self.err(format!("expected 'provided' or 'required', found '{dir}'")));
            }
        };
        let mut spec = ServicePortSpec {
            name,
            pattern,
            direction,
            request_type: None,
            answer_type: None,
            qos: QosParams::default(),
            min_handling_ms: None,
        };
        while !self.eat_punct(';') {
            let key = self.ident()?;
            self.punct('=')?;
            match key.as_str() {
                "req" => spec.request_type = Some(self.ident()?),
                "ans" => spec.answer_type = Some(self.ident()?),
                "cycleMs" => spec.qos.cycle_time_ms = Some(self.uint()?),
                "timeoutMs" => {
                    if self.peek() == Some(&Tok::Ident("none".into())) {
                        self.pos += 1;
                        spec.qos.timeout_ms = Some(Timeout::Unbounded);
                    } else {
                        spec.qos.timeout_ms = Some(Timeout::Ms(self.uint()?));
                    }
                }
                "minHandlingMs" => spec.min_handling_ms = Some(self.uint()?),
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown port attribute '{key}'")));
                }
            }
        }
        Ok(spec)
    }

    fn task(&mut self) -> Result<TaskSpec, ModelError> {
        let name = self.ident()?;
        let mut spec = TaskSpec {
            name,
            is_realtime: false,
            is_periodic: false,
            period_ms: None,
            wcet_ms: None,
            priority: 0,
        };
        while !self.eat_punct(';') {
            let key = self.ident()?;
            self.punct('=')?;
            match key.as_str() {
                "realtime" => spec.is_realtime = self.boolean()?,
                "periodic" => spec.is_periodic = self.boolean()?,
                "periodMs" => spec.period_ms = Some(self.uint()?),
                "wcetMs" => spec.wcet_ms = Some(self.uint()?),
                "priority" => spec.priority = self.int()?,
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown task attribute '{key}'")));
                }
            }
        }
        Ok(spec)
    }

    fn device_count(&mut self) -> Result<u64, ModelError> {
        // A count is written `x<n>`, lexed as one identifier.
        let tok = self.ident()?;
        let digits = tok.strip_prefix('x').unwrap_or("");
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            self.pos -= 1;
            return Err(self.err(format!("expected device count 'x<n>', found '{tok}'")));
        }
        digits.parse().map_err(|_| self.err("device count out of range"))
    }

    fn requires(&mut self) -> Result<ConstraintTag, ModelError> {
        let kind = self.ident()?;
        let tag = match kind.as_str() {
            "realtime" => ConstraintTag::RequiresRealtime,
            "device" => {
                let class = self.ident()?;
                let count = self.device_count()?;
                ConstraintTag::RequiresDevice { class, count }
            }
            "memoryMB" => ConstraintTag::RequiresMemoryMb(self.uint()?),
            _ => {
                self.pos -= 1;
                return Err(self.err(format!("unknown constraint tag '{kind}'")));
            }
        };
        self.punct(';')?;
        Ok(tag)
    }

    fn component(&mut self) -> Result<ComponentModel, ModelError> {
        let name = self.ident()?;
        self.punct('{')?;
        let mut comp = ComponentModel {
            name,
            ports: Vec::new(),
            tasks: Vec::new(),
            param_schema: Vec::new(),
            constraints: Vec::new(),
        };
        while !self.eat_punct('}') {
            let kw = self.ident()?;
            match kw.as_str() {
                "port" => comp.ports.push(self.port()?),
                "task" => comp.tasks.push(self.task()?),
                "requires" => comp.constraints.push(self.requires()?),
                "param" => {
                    let key = self.ident()?;
                    self.punct(':')?;
                    let vt = self.param_type()?;
                    self.punct(';')?;
                    comp.param_schema.push((key, vt));
                }
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown component declaration '{kw}'")));
                }
            }
        }
        Ok(comp)
    }

    fn platform(&mut self) -> Result<PlatformDescription, ModelError> {
        let name = self.ident()?;
        self.punct('{')?;
        let mut plat = PlatformDescription {
            name,
            supports_realtime: false,
            memory_mb: 0,
            devices: BTreeMap::new(),
            cpu_count: 1,
        };
        while !self.eat_punct('}') {
            let key = self.ident()?;
            match key.as_str() {
                "realtime" => {
                    self.punct('=')?;
                    plat.supports_realtime = self.boolean()?;
                    self.punct(';')?;
                }
                "memoryMB" => {
                    self.punct('=')?;
                    plat.memory_mb = self.uint()?;
                    self.punct(';')?;
                }
                "cpuCount" => {
                    self.punct('=')?;
                    plat.cpu_count = self.uint()? as u32;
                    self.punct(';')?;
                }
                "device" => {
                    let class = self.ident()?;
                    let count = self.device_count()?;
                    self.punct(';')?;
                    *plat.devices.entry(class).or_insert(0) += count;
                }
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown platform attribute '{key}'")));
                }
            }
        }
        Ok(plat)
    }

    fn deployment(&mut self) -> Result<DeploymentModel, ModelError> {
        self.punct('{')?;
        let mut dep = DeploymentModel::default();
        while !self.eat_punct('}') {
            let kw = self.ident()?;
            match kw.as_str() {
                "instance" => {
                    let name = self.ident()?;
                    self.punct(':')?;
                    let component = self.ident()?;
                    let on = self.ident()?;
                    if on != "on" {
                        self.pos -= 1;
                        return Err(self.err("expected 'on'"));
                    }
                    let platform = self.ident()?;
                    self.punct(';')?;
                    dep.instances.push(Instance { name, component, platform });
                }
                "wire" => {
                    let from_instance = self.ident()?;
                    self.punct('.')?;
                    let from_port = self.ident()?;
                    match self.next()? {
                        Tok::Arrow => {}
                        _ => {
                            self.pos -= 1;
                            return Err(self.err("expected '->'"));
                        }
                    }
                    let to_instance = self.ident()?;
                    self.punct('.')?;
                    let to_port = self.ident()?;
                    let mut timeout_override_ms = None;
                    if !self.eat_punct(';') {
                        let key = self.ident()?;
                        if key != "timeoutMs" {
                            self.pos -= 1;
                            return Err(self.err(format!(
                                "only timeoutMs may be overridden at deployment, found '{key}'"
                            )));
                        }
                        self.punct('=')?;
                        timeout_override_ms = Some(self.uint()?);
                        self.punct(';')?;
                    }
                    dep.wiring.push(Wire {
                        from_instance,
                        from_port,
                        to_instance,
                        to_port,
                        timeout_override_ms,
                    });
                }
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown deployment declaration '{kw}'")));
                }
            }
        }
        Ok(dep)
    }

    fn file(&mut self) -> Result<ModelFile, ModelError> {
        let mut out = ModelFile::default();
        while self.peek().is_some() {
            let kw = self.ident()?;
            match kw.as_str() {
                "commobject" => out.comm_objects.push(self.comm_object()?),
                "component" => out.components.push(self.component()?),
                "platform" => out.platforms.push(self.platform()?),
                "deployment" => {
                    if out.deployment.is_some() {
                        return Err(ModelError::DuplicateName("deployment".into()));
                    }
                    out.deployment = Some(self.deployment()?);
                }
                _ => {
                    self.pos -= 1;
                    return Err(self.err(format!("unknown top-level block '{kw}'")));
                }
            }
        }
        Ok(out)
    }
}

fn check_duplicates(file: &ModelFile) -> Result<(), ModelError> {
    let mut seen = std::collections::HashSet::new();
    for n in file.comm_objects.iter().map(|c| &c.name) {
        if !seen.insert(format!("commobject {n}")) {
            return Err(ModelError::DuplicateName(n.clone()));
        }
    }
    for n in file.components.iter().map(|c| &c.name) {
        if !seen.insert(format!("component {n}")) {
            return Err(ModelError::DuplicateName(n.clone()));
        }
    }
    for n in file.platforms.iter().map(|p| &p.name) {
        if !seen.insert(format!("platform {n}")) {
            return Err(ModelError::DuplicateName(n.clone()));
        }
    }
    if let Some(dep) = &file.deployment {
        let mut inst = std::collections::HashSet::new();
        for i in &dep.instances {
            if !inst.insert(&i.name) {
                return Err(ModelError::DuplicateName(i.name.clone()));
            }
        }
    }
    Ok(())
}

fn type_refs(t: &FieldType, out: &mut Vec<String>) {
    match t {
        FieldType::Object(n) => out.push(n.clone()),
        FieldType::List(inner) => type_refs(inner, out),
        _ => {}
    }
}

/// Check that every cross-reference in `file` resolves within `file`.
pub fn resolve_references(file: &ModelFile) -> Result<(), ModelError> {
    for co in &file.comm_objects {
        for (_, ft) in &co.fields {
            let mut refs = Vec::new();
            type_refs(ft, &mut refs);
            for r in refs {
                if file.comm_object(&r).is_none() {
                    return Err(ModelError::UnresolvedReference(r));
                }
            }
        }
    }
    for comp in &file.components {
        for port in &comp.ports {
            for tname in [&port.request_type, &port.answer_type].into_iter().flatten() {
                if file.comm_object(tname).is_none() {
                    return Err(ModelError::UnresolvedReference(tname.clone()));
                }
            }
        }
    }
    if let Some(dep) = &file.deployment {
        for inst in &dep.instances {
            if file.component(&inst.component).is_none() {
                return Err(ModelError::UnresolvedReference(inst.component.clone()));
            }
            if file.platform(&inst.platform).is_none() {
                return Err(ModelError::UnresolvedReference(inst.platform.clone()));
            }
        }
        for w in &dep.wiring {
            for (iname, pname) in
                [(&w.from_instance, &w.from_port), (&w.to_instance, &w.to_port)]
            {
                let Some(inst) = dep.instance(iname) else {
                    return Err(ModelError::UnresolvedReference(iname.clone()));
                };
                let Some(comp) = file.component(&inst.component) else {
                    return Err(ModelError::UnresolvedReference(inst.component.clone()));
                };
                if comp.port(pname).is_none() {
                    return Err(ModelError::UnresolvedReference(format!("{iname}.{pname}")));
                }
            }
        }
    }
    Ok(())
}

/// Parse one model file and resolve all cross-references within it.
pub fn parse_model(text: &str) -> Result<ModelFile, ModelError> {
    let file = parse_model_partial(text)?;
    resolve_references(&file)?;
    Ok(file)
}

/// Parse without reference resolution, for merging multiple files before a
/// single [`resolve_references`] pass.
pub fn parse_model_partial(text: &str) -> Result<ModelFile, ModelError> {
    let toks = Lexer::new(text).tokens()?;
    let mut parser = Parser { toks, pos: 0 };
    let file = parser.file()?;
    check_duplicates(&file)?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_component() {
        let src = "commobject Cmd { v: int64; }\ncomponent C { port in1: send provided req=Cmd; }";
        let m = parse_model(src).unwrap();
        let c = m.component("C").unwrap();
        assert_eq!(c.ports.len(), 1);
        assert_eq!(c.tasks.len(), 0);
        assert_eq!(c.ports[0].pattern, Pattern::Send);
        assert_eq!(c.ports[0].request_type.as_deref(), Some("Cmd"));
    }

    #[test]
    fn unresolved_comm_object() {
        let src = "component C { port in1: send provided req=Missing; }";
        assert_eq!(
            parse_model(src),
            Err(ModelError::UnresolvedReference("Missing".into()))
        );
    }

    #[test]
    fn syntax_error_carries_position() {
        let src = "component C {\n  port p send;\n}";
        match parse_model(src) {
            Err(ModelError::Syntax { line: 2, .. }) => {}
            other => panic!("expected syntax error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_component_name() {
        let src = "component C { }\ncomponent C { }";
        assert_eq!(parse_model(src), Err(ModelError::DuplicateName("C".into())));
    }

    #[test]
    fn full_deployment_parses() {
        let src = r#"
# navigation-style snippet
commobject Pose { x: float64; y: float64; }
component Base {
  port basestate: pushtimed provided ans=Pose cycleMs=100;
  task sense realtime=true periodic=true periodMs=100 wcetMs=5 priority=2;
  requires realtime;
  requires device serial x1;
  requires memoryMB 64;
  param maxSpeed: float64;
}
component Viewer {
  port basestate: pushtimed required ans=Pose;
}
platform Robot { realtime=true; memoryMB=1024; device serial x2; }
deployment {
  instance base: Base on Robot;
  instance viewer: Viewer on Robot;
  wire viewer.basestate -> base.basestate;
}
"#;
        let m = parse_model(src).unwrap();
        assert_eq!(m.component("Base").unwrap().ports[0].qos.cycle_time_ms, Some(100));
        assert_eq!(m.platform("Robot").unwrap().devices["serial"], 2);
        let dep = m.deployment.as_ref().unwrap();
        assert_eq!(dep.instances.len(), 2);
        assert_eq!(dep.wiring.len(), 1);
    }

    #[test]
    fn wire_timeout_override() {
        let src = r#"
commobject A { v: int64; }
component P { port q: query provided req=A ans=A; }
component R { port q: query required req=A ans=A timeoutMs=none; }
deployment {
  instance p: P on X;
  instance r: R on X;
  wire r.q -> p.q timeoutMs=500;
}
platform X { memoryMB=1; }
"#;
        let m = parse_model(src).unwrap();
        assert_eq!(m.deployment.as_ref().unwrap().wiring[0].timeout_override_ms, Some(500));
        assert_eq!(
            m.component("R").unwrap().ports[0].qos.timeout_ms,
            Some(Timeout::Unbounded)
        );
    }
}
