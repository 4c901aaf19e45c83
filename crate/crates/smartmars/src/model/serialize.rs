//! Canonical serializer. `parse_model(serialize_model(m))` is structurally
//! equal to `m`; output is byte-stable for identical input.

use super::*;
use std::fmt::Write;

fn write_port(out: &mut String, p: &ServicePortSpec) {
    let dir = match p.direction {
        Direction::Provided => "provided",
        Direction::Required => "required",
    };
    write!(out, "  port {}: {} {}", p.name, p.pattern.keyword(), dir).unwrap();
    if let Some(t) = &p.request_type {
        write!(out, " req={t}").unwrap();
    }
    if let Some(t) = &p.answer_type {
        write!(out, " ans={t}").unwrap();
    }
    if let Some(c) = p.qos.cycle_time_ms {
        write!(out, " cycleMs={c}").unwrap();
    }
    match p.qos.timeout_ms {
        Some(Timeout::Ms(t)) => write!(out, " timeoutMs={t}").unwrap(),
        Some(Timeout::Unbounded) => write!(out, " timeoutMs=none").unwrap(),
        None => {}
    }
    if let Some(h) = p.min_handling_ms {
        write!(out, " minHandlingMs={h}").unwrap();
    }
    out.push_str(";\n");
}

fn write_task(out: &mut String, t: &TaskSpec) {
    write!(
        out,
        "  task {} realtime={} periodic={}",
        t.name, t.is_realtime, t.is_periodic
    )
    .unwrap();
    if let Some(p) = t.period_ms {
        write!(out, " periodMs={p}").unwrap();
    }
    if let Some(w) = t.wcet_ms {
        write!(out, " wcetMs={w}").unwrap();
    }
    writeln!(out, " priority={};", t.priority).unwrap();
}

pub fn serialize_model(model: &ModelFile) -> String {
    let mut out = String::new();
    for co in &model.comm_objects {
        writeln!(out, "commobject {} {{", co.name).unwrap();
        for (fname, ftype) in &co.fields {
            writeln!(out, "  {fname}: {ftype};").unwrap();
        }
        out.push_str("}\n");
    }
    for c in &model.components {
        writeln!(out, "component {} {{", c.name).unwrap();
        for p in &c.ports {
            write_port(&mut out, p);
        }
        for t in &c.tasks {
            write_task(&mut out, t);
        }
        for (key, vt) in &c.param_schema {
            writeln!(out, "  param {key}: {vt};").unwrap();
        }
        for tag in &c.constraints {
            match tag {
                ConstraintTag::RequiresRealtime => out.push_str("  requires realtime;\n"),
                ConstraintTag::RequiresDevice { class, count } => {
                    writeln!(out, "  requires device {class} x{count};").unwrap()
                }
                ConstraintTag::RequiresMemoryMb(mb) => {
                    writeln!(out, "  requires memoryMB {mb};").unwrap()
                }
            }
        }
        out.push_str("}\n");
    }
    for p in &model.platforms {
        writeln!(out, "platform {} {{", p.name).unwrap();
        writeln!(out, "  realtime={};", p.supports_realtime).unwrap();
        writeln!(out, "  memoryMB={};", p.memory_mb).unwrap();
        if p.cpu_count != 1 {
            writeln!(out, "  cpuCount={};", p.cpu_count).unwrap();
        }
        for (class, count) in &p.devices {
            writeln!(out, "  device {class} x{count};").unwrap();
        }
        out.push_str("}\n");
    }
    if let Some(dep) = &model.deployment {
        out.push_str("deployment {\n");
        for i in &dep.instances {
            writeln!(out, "  instance {}: {} on {};", i.name, i.component, i.platform).unwrap();
        }
        for w in &dep.wiring {
            write!(
                out,
                "  wire {}.{} -> {}.{}",
                w.from_instance, w.from_port, w.to_instance, w.to_port
            )
            .unwrap();
            if let Some(t) = w.timeout_override_ms {
                write!(out, " timeoutMs={t}").unwrap();
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_model;
    use super::*;

    #[test]
    fn empty_deployment_canonical() {
        let model = ModelFile {
            deployment: Some(DeploymentModel::default()),
            ..Default::default()
        };
        assert_eq!(serialize_model(&model), "deployment {\n}\n");
    }

    #[test]
    fn round_trip_identity() {
        let src = r#"
commobject Scan { ranges: list<float64>; stamp: int64; }
commobject Wrapped { inner: Scan; note: string; raw: bytes; ok: bool; }
component C {
  port a: send required req=Scan;
  port b: query provided req=Scan ans=Wrapped timeoutMs=250 minHandlingMs=10;
  port c: pushnewest provided ans=Scan;
  port d: pushtimed provided ans=Scan cycleMs=50;
  port e: event required req=Scan ans=Wrapped timeoutMs=none;
  task t1 realtime=true periodic=true periodMs=20 wcetMs=3 priority=7;
  task t2 realtime=false periodic=false priority=-1;
  param gain: float64;
  requires realtime;
  requires device laser x1;
  requires memoryMB 128;
}
platform P { realtime=true; memoryMB=512; device laser x2; }
deployment {
  instance c1: C on P;
  wire c1.a -> c1.a;
}
"#;
        let m = parse_model(src).unwrap();
        let text = serialize_model(&m);
        let m2 = parse_model(&text).unwrap();
        assert_eq!(m, m2);
        // canonical output is a fixpoint
        assert_eq!(text, serialize_model(&m2));
    }
}
