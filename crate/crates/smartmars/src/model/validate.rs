//! PIM/PDM/deployment invariant checks. Violations are data, not errors;
//! the returned list is sorted so it is stable under declaration reordering.

use super::*;
use serde::Serialize;
use std::collections::{HashMap, HashSet};

/// One broken invariant, naming exactly one model element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl Violation {
    pub fn new(element: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { element: element.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

fn check_comm_objects(model: &ModelFile, out: &mut Vec<Violation>) {
    for co in &model.comm_objects {
        let mut seen = HashSet::new();
        for (fname, _) in &co.fields {
            if !seen.insert(fname) {
                out.push(Violation::new(
                    format!("commobject {}", co.name),
                    format!("duplicate field name '{fname}'"),
                ));
            }
        }
    }
    // the type graph must be a DAG (no recursive nesting)
    let index: HashMap<&str, &CommObjectType> =
        model.comm_objects.iter().map(|c| (c.name.as_str(), c)).collect();
    fn visit<'a>(
        name: &'a str,
        index: &HashMap<&'a str, &'a CommObjectType>,
        stack: &mut Vec<&'a str>,
        done: &mut HashSet<&'a str>,
        out: &mut Vec<Violation>,
    ) {
        if done.contains(name) {
            return;
        }
        if stack.contains(&name) {
            out.push(Violation::new(
                format!("commobject {name}"),
                "recursive nesting (type graph must be a DAG)",
            ));
            return;
        }
        let Some(co) = index.get(name) else { return };
        stack.push(name);
        for (_, ft) in &co.fields {
            let mut t = ft;
            loop {
                match t {
                    FieldType::Object(n) => {
                        visit(n, index, stack, done, out);
                        break;
                    }
                    FieldType::List(inner) => t = inner,
                    _ => break,
                }
            }
        }
        stack.pop();
        done.insert(name);
    }
    let mut done = HashSet::new();
    for co in &model.comm_objects {
        visit(&co.name, &index, &mut Vec::new(), &mut done, out);
    }
}

fn check_port(comp: &str, p: &ServicePortSpec, out: &mut Vec<Violation>) {
    let elem = format!("port {comp}.{}", p.name);
    let mut v = |msg: String| out.push(Violation::new(elem.clone(), msg));
    match p.pattern {
        Pattern::Send => {
            if p.request_type.is_none() {
                v("send requires a request type".into());
            }
            if p.answer_type.is_some() {
                v("send is one-way; it must not declare an answer type".into());
            }
        }
        Pattern::Query | Pattern::Event => {
            if p.request_type.is_none() || p.answer_type.is_none() {
                v(format!("{} requires both request and answer types", p.pattern));
            }
        }
        Pattern::PushNewest | Pattern::PushTimed => {
            if p.answer_type.is_none() {
                v(format!("{} requires an answer (payload) type", p.pattern));
            }
            if p.request_type.is_some() {
                v(format!("{} must not declare a request type", p.pattern));
            }
        }
    }
    match (p.pattern, p.qos.cycle_time_ms) {
        (Pattern::PushTimed, None) => v("push timed requires cycleMs".into()),
        (Pattern::PushTimed, Some(0)) => v("cycleMs must be positive".into()),
        (Pattern::PushTimed, Some(_)) => {}
        (_, Some(_)) => v("cycleMs applies only to push timed".into()),
        (_, None) => {}
    }
    match (p.pattern, p.qos.timeout_ms) {
        (Pattern::Query | Pattern::Event, Some(Timeout::Ms(0))) => {
            v("timeoutMs must be positive when bounded".into())
        }
        (Pattern::Query | Pattern::Event, _) => {}
        (_, Some(_)) => v("timeoutMs applies only to query and event".into()),
        (_, None) => {}
    }
    if p.min_handling_ms.is_some() && p.direction != Direction::Provided {
        v("minHandlingMs applies only to provided ports".into());
    }
}

fn check_task(comp: &str, t: &TaskSpec, out: &mut Vec<Violation>) {
    let elem = format!("task {comp}.{}", t.name);
    let mut v = |msg: &str| out.push(Violation::new(elem.clone(), msg));
    if t.is_periodic {
        match t.period_ms {
            None => v("periodic task must declare periodMs"),
            Some(0) => v("periodMs must be positive"),
            Some(_) => {}
        }
    }
    if t.is_realtime {
        if !t.is_periodic {
            v("realtime task must be periodic");
        }
        match t.wcet_ms {
            None => v("realtime task must declare wcetMs"),
            Some(0) => v("wcetMs must be positive"),
            Some(w) => {
                if let Some(p) = t.period_ms {
                    if w > p {
                        v("wcetMs must not exceed periodMs");
                    }
                }
            }
        }
    }
}

/// Check all PIM invariants of one component against the model's type table.
pub fn validate_component(comp: &ComponentModel, model: &ModelFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for p in &comp.ports {
        if !names.insert(&p.name) {
            out.push(Violation::new(
                format!("component {}", comp.name),
                format!("duplicate port name '{}'", p.name),
            ));
        }
        check_port(&comp.name, p, &mut out);
        for tname in [&p.request_type, &p.answer_type].into_iter().flatten() {
            if model.comm_object(tname).is_none() {
                out.push(Violation::new(
                    format!("port {}.{}", comp.name, p.name),
                    format!("unknown communication object type '{tname}'"),
                ));
            }
        }
    }
    let mut tnames = HashSet::new();
    for t in &comp.tasks {
        if !tnames.insert(&t.name) {
            out.push(Violation::new(
                format!("component {}", comp.name),
                format!("duplicate task name '{}'", t.name),
            ));
        }
        check_task(&comp.name, t, &mut out);
    }
    let mut pnames = HashSet::new();
    for (key, _) in &comp.param_schema {
        if !pnames.insert(key) {
            out.push(Violation::new(
                format!("component {}", comp.name),
                format!("duplicate parameter key '{key}'"),
            ));
        }
    }
    for tag in &comp.constraints {
        match tag {
            ConstraintTag::RequiresDevice { class, count } if *count == 0 => {
                out.push(Violation::new(
                    format!("component {}", comp.name),
                    format!("device constraint '{class}' must request a positive count"),
                ));
            }
            ConstraintTag::RequiresMemoryMb(0) => out.push(Violation::new(
                format!("component {}", comp.name),
                "memory constraint must be positive",
            )),
            _ => {}
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Validate every element of a (merged) model file.
pub fn validate_model(model: &ModelFile) -> Vec<Violation> {
    let mut out = Vec::new();
    check_comm_objects(model, &mut out);
    for comp in &model.components {
        out.extend(validate_component(comp, model));
    }
    for plat in &model.platforms {
        if plat.memory_mb == 0 {
            out.push(Violation::new(
                format!("platform {}", plat.name),
                "memoryMB must be positive",
            ));
        }
        if plat.cpu_count != 1 {
            out.push(Violation::new(
                format!("platform {}", plat.name),
                "cpuCount is reserved and must be 1",
            ));
        }
    }
    if let Some(dep) = &model.deployment {
        for w in &dep.wiring {
            let elem = format!("wire {}.{}", w.from_instance, w.from_port);
            let port_of = |iname: &str, pname: &str| -> Option<ServicePortSpec> {
                let inst = dep.instance(iname)?;
                model.component(&inst.component)?.port(pname).cloned()
            };
            if let Some(from) = port_of(&w.from_instance, &w.from_port) {
                if from.direction != Direction::Required {
                    out.push(Violation::new(elem.clone(), "wire source must be a required port"));
                }
            }
            if let Some(to) = port_of(&w.to_instance, &w.to_port) {
                if to.direction != Direction::Provided {
                    out.push(Violation::new(elem.clone(), "wire target must be a provided port"));
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_model;
    use super::*;

    fn model(src: &str) -> ModelFile {
        parse_model(src).unwrap()
    }

    #[test]
    fn realtime_task_must_be_periodic() {
        let m = model(
            "component C { task t realtime=true periodic=false wcetMs=1 priority=1; }",
        );
        let v = validate_model(&m);
        assert!(
            v.iter().any(|v| v.message.contains("realtime task must be periodic")),
            "{v:?}"
        );
    }

    #[test]
    fn send_is_one_way() {
        let m = model(
            "commobject A { v: int64; }\ncomponent C { port p: send provided req=A ans=A; }",
        );
        let v = validate_model(&m);
        assert!(v.iter().any(|v| v.message.contains("one-way")), "{v:?}");
        assert!(v.iter().all(|v| v.element == "port C.p"));
    }

    #[test]
    fn valid_model_is_clean() {
        let m = model(
            r#"
commobject Map { cells: list<int64>; }
commobject Goal { x: float64; y: float64; }
component Planner {
  port map: query required req=Goal ans=Map timeoutMs=500;
  port cmd: send required req=Goal;
  task plan realtime=false periodic=true periodMs=200 priority=3;
}
"#,
        );
        assert_eq!(validate_model(&m), vec![]);
    }

    #[test]
    fn violations_stable_under_reordering() {
        let a = model(
            "component C { task a realtime=true periodic=false priority=1; task b periodic=true priority=2; }",
        );
        let b = model(
            "component C { task b periodic=true priority=2; task a realtime=true periodic=false priority=1; }",
        );
        assert_eq!(validate_model(&a), validate_model(&b));
        assert!(!validate_model(&a).is_empty());
    }

    #[test]
    fn recursive_comm_object_rejected() {
        let m = model("commobject A { next: B; }\ncommobject B { back: list<A>; }");
        let v = validate_model(&m);
        assert!(v.iter().any(|v| v.message.contains("recursive")), "{v:?}");
    }

    #[test]
    fn wcet_exceeding_period_rejected() {
        let m = model(
            "component C { task t realtime=true periodic=true periodMs=10 wcetMs=11 priority=1; }",
        );
        assert!(validate_model(&m)
            .iter()
            .any(|v| v.message.contains("wcetMs must not exceed")));
    }
}
