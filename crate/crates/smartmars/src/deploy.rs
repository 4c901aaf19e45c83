//! Deployment-level PIM→PSM transformation and design-time checking:
//! map every instance's tasks onto its platform, cross-check component
//! constraints against platform capabilities and wiring QoS, and extract
//! per-platform task sets for schedulability analysis.

use crate::analysis::{AnalysisTask, AnalysisTaskSet};
use crate::model::{
    validate_model, ComponentModel, ConstraintTag, ModelFile, Pattern, PlatformDescription,
    Violation,
};
use crate::runtime::compatibility_error;
use crate::task::{map_task, PsmTask, TaskError, TaskMapping};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsmInstance {
    pub name: String,
    pub component: String,
    pub platform: String,
    pub tasks: Vec<PsmTask>,
}

/// A transformed deployment: the resolved model plus every task mapped
/// onto its instance's platform.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsmDeployment {
    pub model: ModelFile,
    pub instances: Vec<PsmInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TransformError {
    Validation(Violation),
    TaskMapping { instance: String, error: TaskError },
}

impl std::fmt::Display for TransformError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransformError::Validation(v) => write!(f, "{v}"),
            TransformError::TaskMapping { instance, error } => {
                write!(f, "{instance}: {error}")
            }
        }
    }
}

/// Transform a validated model into a PSM deployment. Errors are
/// aggregated across the whole deployment, not reported first-failure.
pub fn transform(model: &ModelFile) -> Result<PsmDeployment, Vec<TransformError>> {
    let mut errors: Vec<TransformError> = validate_model(model)
        .into_iter()
        .map(TransformError::Validation)
        .collect();
    let mut instances = Vec::new();
    if let Some(dep) = &model.deployment {
        for inst in &dep.instances {
            let (Some(component), Some(platform)) =
                (model.component(&inst.component), model.platform(&inst.platform))
            else {
                // missing references are already validation violations
                continue;
            };
            let mut tasks = Vec::new();
            for spec in &component.tasks {
                match map_task(spec, platform) {
                    Ok(t) => tasks.push(t),
                    Err(e) => errors.push(TransformError::TaskMapping {
                        instance: inst.name.clone(),
                        error: e,
                    }),
                }
            }
            instances.push(PsmInstance {
                name: inst.name.clone(),
                component: inst.component.clone(),
                platform: inst.platform.clone(),
                tasks,
            });
        }
    }
    if errors.is_empty() {
        Ok(PsmDeployment {
            model: model.clone(),
            instances,
        })
    } else {
        Err(errors)
    }
}

fn platform_of<'a>(psm: &'a PsmDeployment, name: &str) -> Option<&'a PlatformDescription> {
    psm.model.platform(name)
}

fn component_of<'a>(psm: &'a PsmDeployment, instance: &str) -> Option<&'a ComponentModel> {
    let inst = psm.instances.iter().find(|i| i.name == instance)?;
    psm.model.component(&inst.component)
}

/// Cross-check constraints and wiring QoS. Violations are data, not
/// errors; sorted and stable under declaration reordering.
pub fn check_deployment(psm: &PsmDeployment) -> Vec<Violation> {
    let mut out = Vec::new();
    // per-platform resource sums across the instances placed on it
    let mut memory: BTreeMap<&str, u64> = BTreeMap::new();
    let mut devices: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for inst in &psm.instances {
        let Some(component) = psm.model.component(&inst.component) else {
            continue;
        };
        for tag in &component.constraints {
            match tag {
                ConstraintTag::RequiresMemoryMb(mb) => {
                    *memory.entry(inst.platform.as_str()).or_insert(0) += mb;
                }
                ConstraintTag::RequiresDevice { class, count } => {
                    *devices
                        .entry((inst.platform.as_str(), class.as_str()))
                        .or_insert(0) += count;
                }
                ConstraintTag::RequiresRealtime => {
                    let supported = platform_of(psm, &inst.platform)
                        .map(|p| p.supports_realtime)
                        .unwrap_or(false);
                    if !supported {
                        out.push(Violation::new(
                            &inst.name,
                            format!(
                                "requires realtime but platform {} does not support it",
                                inst.platform
                            ),
                        ));
                    }
                }
            }
        }
    }
    for (platform, needed) in memory {
        let Some(p) = platform_of(psm, platform) else { continue };
        if needed > p.memory_mb {
            out.push(Violation::new(
                platform,
                format!("memory shortage: components require {needed} MB of {} MB", p.memory_mb),
            ));
        }
    }
    for ((platform, class), needed) in devices {
        let Some(p) = platform_of(psm, platform) else { continue };
        let available = p.devices.get(class).copied().unwrap_or(0);
        if needed > available {
            out.push(Violation::new(
                platform,
                format!("device shortage: {class} needed x{needed}, available x{available}"),
            ));
        }
    }
    // wiring: pattern/type compatibility plus the query-timeout QoS check
    let wiring = psm
        .model
        .deployment
        .as_ref()
        .map(|d| d.wiring.as_slice())
        .unwrap_or(&[]);
    for wire in wiring {
        let element = format!(
            "{}.{} -> {}.{}",
            wire.from_instance, wire.from_port, wire.to_instance, wire.to_port
        );
        let required = component_of(psm, &wire.from_instance)
            .and_then(|c| c.port(&wire.from_port));
        let provided = component_of(psm, &wire.to_instance)
            .and_then(|c| c.port(&wire.to_port));
        let (Some(required), Some(provided)) = (required, provided) else {
            continue; // unresolved endpoints are validation violations
        };
        if let Some(reason) = compatibility_error(required, provided) {
            out.push(Violation::new(&element, format!("incompatible: {reason}")));
        }
        if required.pattern == Pattern::Query {
            if let Some(min) = provided.min_handling_ms {
                let timeout = wire
                    .timeout_override_ms
                    .or(match required.qos.timeout_ms {
                        Some(crate::model::Timeout::Ms(t)) => Some(t),
                        _ => None,
                    });
                if let Some(t) = timeout {
                    if t < min {
                        out.push(Violation::new(
                            &element,
                            format!(
                                "query timeout {t} ms below provider minimum handling time {min} ms"
                            ),
                        ));
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Collect per-platform task sets for schedulability analysis. Realtime
/// tasks always; emulated periodic tasks with wcet are included but
/// flagged. Model priority 0 means "not assigned yet" and surfaces as
/// `None` so rate-monotonic assignment can fill it in.
pub fn extract_analysis_model(psm: &PsmDeployment) -> Vec<AnalysisTaskSet> {
    let mut per_platform: BTreeMap<&str, Vec<AnalysisTask>> = BTreeMap::new();
    for inst in &psm.instances {
        for task in &inst.tasks {
            let emulated = match task.mapping {
                TaskMapping::RealtimeTask => false,
                TaskMapping::EmulatedPeriodicTask => true,
                TaskMapping::FreeRunningTask => continue,
            };
            let (Some(period), Some(wcet)) = (task.spec.period_ms, task.spec.wcet_ms) else {
                continue;
            };
            per_platform
                .entry(inst.platform.as_str())
                .or_default()
                .push(AnalysisTask {
                    name: format!("{}.{}", inst.name, task.spec.name),
                    wcet_ms: wcet,
                    period_ms: period,
                    priority: (task.spec.priority != 0).then_some(task.spec.priority),
                    emulated,
                });
        }
    }
    per_platform
        .into_iter()
        .map(|(platform, mut tasks)| {
            tasks.sort_by(|a, b| a.name.cmp(&b.name));
            AnalysisTaskSet {
                platform: platform.to_string(),
                tasks,
            }
        })
        .collect()
}

/// Human-readable deployment report: violations, the task-mapping table
/// and the extracted analysis task sets (see docs/report-format.md).
pub fn deployment_report(psm: &PsmDeployment, violations: &[Violation]) -> String {
    let mut s = String::new();
    s.push_str("deployment report\n");
    s.push_str("violations:\n");
    if violations.is_empty() {
        s.push_str("  none\n");
    }
    for v in violations {
        let _ = writeln!(s, "  {v}");
    }
    s.push_str("task mapping:\n");
    for inst in &psm.instances {
        for t in &inst.tasks {
            let _ = writeln!(
                s,
                "  {}.{} on {} -> {:?}",
                inst.name, t.spec.name, inst.platform, t.mapping
            );
        }
    }
    s.push_str("analysis task sets:\n");
    for set in extract_analysis_model(psm) {
        let _ = writeln!(s, "  platform {} ({} tasks)", set.platform, set.tasks.len());
        for t in &set.tasks {
            let _ = writeln!(
                s,
                "    {} C={} T={} emulated={}",
                t.name, t.wcet_ms, t.period_ms, t.emulated
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn model(text: &str) -> ModelFile {
        parse_model(text).unwrap()
    }

    const BASE: &str = "
commobject Ping { n: int64; }
platform rt { realtime=true; memoryMB=1024; cpuCount=1; device serial x1; }
platform plain { realtime=false; memoryMB=256; cpuCount=1; }
";

    #[test]
    fn realtime_on_plain_platform_aggregates() {
        let m = model(&format!(
            "{BASE}
component C {{
  task a realtime=true periodic=true periodMs=10 wcetMs=2 priority=1;
  task b realtime=true periodic=true periodMs=20 wcetMs=2 priority=2;
}}
deployment {{ instance i: C on plain; }}
"
        ));
        let errs = transform(&m).unwrap_err();
        assert_eq!(errs.len(), 2); // both tasks reported, not fail-fast
        assert!(errs
            .iter()
            .all(|e| matches!(e, TransformError::TaskMapping { .. })));
    }

    #[test]
    fn memory_boundary_is_inclusive() {
        let m = model(&format!(
            "{BASE}
component A {{ requires memoryMB 512; }}
component B {{ requires memoryMB 512; }}
deployment {{ instance a: A on rt; instance b: B on rt; }}
"
        ));
        let psm = transform(&m).unwrap();
        assert!(check_deployment(&psm).is_empty());
    }

    #[test]
    fn device_shortage_detected() {
        let m = model(&format!(
            "{BASE}
component A {{ requires device serial x1; }}
component B {{ requires device serial x1; }}
deployment {{ instance a: A on rt; instance b: B on rt; }}
"
        ));
        let psm = transform(&m).unwrap();
        let vs = check_deployment(&psm);
        assert_eq!(vs.len(), 1);
        assert!(vs[0].to_string().contains("device shortage"));
    }

    #[test]
    fn incompatible_wiring_flagged() {
        let m = model(&format!(
            "{BASE}
component P {{ port out: pushnewest provided ans=Ping; }}
component Q {{ port ask: query required req=Ping ans=Ping; }}
deployment {{
  instance p: P on rt;
  instance q: Q on rt;
  wire q.ask -> p.out;
}}
"
        ));
        let psm = transform(&m).unwrap();
        let vs = check_deployment(&psm);
        assert!(vs.iter().any(|v| v.to_string().contains("incompatible")));
    }

    #[test]
    fn query_timeout_below_min_handling() {
        let m = model(&format!(
            "{BASE}
component P {{ port svc: query provided req=Ping ans=Ping minHandlingMs=50; }}
component Q {{ port ask: query required req=Ping ans=Ping timeoutMs=20; }}
deployment {{
  instance p: P on rt;
  instance q: Q on rt;
  wire q.ask -> p.svc;
}}
"
        ));
        let psm = transform(&m).unwrap();
        let vs = check_deployment(&psm);
        assert!(vs
            .iter()
            .any(|v| v.to_string().contains("minimum handling time")));
    }

    #[test]
    fn extraction_groups_by_platform() {
        let m = model(&format!(
            "{BASE}
component C {{
  task fast realtime=true periodic=true periodMs=20 wcetMs=2 priority=2;
  task slow realtime=false periodic=true periodMs=100 wcetMs=5 priority=0;
  task bg realtime=false periodic=false;
}}
component D {{ task tick realtime=false periodic=true periodMs=50 wcetMs=1 priority=0; }}
deployment {{ instance c: C on rt; instance d: D on plain; }}
"
        ));
        let psm = transform(&m).unwrap();
        let sets = extract_analysis_model(&psm);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].platform, "plain");
        assert_eq!(sets[1].platform, "rt");
        assert_eq!(sets[1].tasks.len(), 2);
        let fast = &sets[1].tasks[0];
        assert_eq!((fast.wcet_ms, fast.period_ms, fast.emulated), (2, 20, false));
        assert_eq!(fast.priority, Some(2));
        assert!(sets[1].tasks[1].emulated);
        assert_eq!(sets[1].tasks[1].priority, None);
    }

    #[test]
    fn monotone_under_added_component() {
        let small = model(&format!(
            "{BASE}
component A {{ requires device serial x1; }}
component B {{ requires device serial x1; }}
deployment {{ instance a: A on rt; instance b: B on rt; }}
"
        ));
        let bigger = model(&format!(
            "{BASE}
component A {{ requires device serial x1; }}
component B {{ requires device serial x1; }}
component C {{ requires memoryMB 2048; }}
deployment {{ instance a: A on rt; instance b: B on rt; instance c: C on rt; }}
"
        ));
        let v1 = check_deployment(&transform(&small).unwrap());
        let v2 = check_deployment(&transform(&bigger).unwrap());
        for v in &v1 {
            assert!(v2.contains(v));
        }
        assert!(v2.len() > v1.len());
    }
}
