//! Fixed-priority schedulability analysis for periodic task sets:
//! utilization bound test, exact response-time analysis, a hyperperiod
//! simulation used as an independent oracle, rate-monotonic priority
//! assignment, and export to external analysis formats.

use num_integer::Integer;
use num_rational::Ratio;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisTask {
    pub name: String,
    pub wcet_ms: u64,
    pub period_ms: u64,
    /// Larger value means more urgent. `None` until priorities are assigned.
    pub priority: Option<i64>,
    /// True when the task is mapped as emulated (non-realtime scheduling);
    /// included in reports but flagged.
    pub emulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisTaskSet {
    pub platform: String,
    pub tasks: Vec<AnalysisTask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundVerdict {
    Schedulable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AnalysisError {
    EmptyTaskSet,
    InvalidTask(String),
    MissingPriority(String),
    DuplicatePriority(i64),
}

impl std::fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalysisError::EmptyTaskSet => write!(f, "empty task set"),
            AnalysisError::InvalidTask(n) => write!(f, "invalid task {n}"),
            AnalysisError::MissingPriority(n) => write!(f, "task {n} has no priority"),
            AnalysisError::DuplicatePriority(p) => write!(f, "duplicate priority {p}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

fn check_tasks(tasks: &[AnalysisTask]) -> Result<(), AnalysisError> {
    if tasks.is_empty() {
        return Err(AnalysisError::EmptyTaskSet);
    }
    for t in tasks {
        if t.wcet_ms == 0 || t.period_ms == 0 || t.wcet_ms > t.period_ms {
            return Err(AnalysisError::InvalidTask(t.name.clone()));
        }
    }
    Ok(())
}

/// Exact total utilization Σ Cᵢ/Tᵢ.
pub fn utilization(tasks: &[AnalysisTask]) -> Ratio<u64> {
    tasks
        .iter()
        .map(|t| Ratio::new(t.wcet_ms, t.period_ms))
        .sum()
}

/// Liu–Layland bound n·(2^(1/n) − 1).
pub fn utilization_bound(n: usize) -> f64 {
    assert!(n > 0);
    let n = n as f64;
    n * ((2.0f64).powf(1.0 / n) - 1.0)
}

const BOUND_EPS: f64 = 1e-9;

/// Sufficient (not necessary) utilization test under rate-monotonic
/// priorities. Within `1e-9` of the bound the verdict is `Inconclusive`
/// rather than trusting float rounding either way.
pub fn bound_test(tasks: &[AnalysisTask]) -> Result<BoundVerdict, AnalysisError> {
    check_tasks(tasks)?;
    let u = utilization(tasks);
    let u = *u.numer() as f64 / *u.denom() as f64;
    let bound = utilization_bound(tasks.len());
    if (u - bound).abs() <= BOUND_EPS {
        Ok(BoundVerdict::Inconclusive)
    } else if u < bound {
        Ok(BoundVerdict::Schedulable)
    } else {
        Ok(BoundVerdict::Inconclusive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ResponseTime {
    /// Worst-case response time in ms; the task meets its deadline (= period).
    Ms(u64),
    /// The recurrence exceeded the deadline: deadline miss.
    Unbounded,
}

/// Effective analysis order: descending priority, then ascending period,
/// then name. Index 0 is most urgent.
fn analysis_order(tasks: &[AnalysisTask]) -> Result<Vec<usize>, AnalysisError> {
    for t in tasks {
        if t.priority.is_none() {
            return Err(AnalysisError::MissingPriority(t.name.clone()));
        }
    }
    let mut idx: Vec<usize> = (0..tasks.len()).collect();
    idx.sort_by(|&a, &b| {
        let ta = &tasks[a];
        let tb = &tasks[b];
        tb.priority
            .cmp(&ta.priority)
            .then(ta.period_ms.cmp(&tb.period_ms))
            .then(ta.name.cmp(&tb.name))
    });
    Ok(idx)
}

/// Exact response-time analysis: Rᵢ⁰ = Cᵢ,
/// Rᵢᵏ⁺¹ = Cᵢ + Σ_{j ∈ hp(i)} ⌈Rᵢᵏ/Tⱼ⌉·Cⱼ, iterated to the fixpoint.
/// All arithmetic is exact integer arithmetic.
pub fn response_times(tasks: &[AnalysisTask]) -> Result<Vec<(String, ResponseTime)>, AnalysisError> {
    check_tasks(tasks)?;
    let order = analysis_order(tasks)?;
    let mut out = vec![(String::new(), ResponseTime::Unbounded); tasks.len()];
    for (pos, &i) in order.iter().enumerate() {
        let t = &tasks[i];
        let hp: Vec<&AnalysisTask> = order[..pos].iter().map(|&j| &tasks[j]).collect();
        let mut r = t.wcet_ms as u128;
        let rt = loop {
            let mut next = t.wcet_ms as u128;
            for h in &hp {
                next += r.div_ceil(h.period_ms as u128) * h.wcet_ms as u128;
            }
            if next > t.period_ms as u128 {
                break ResponseTime::Unbounded;
            }
            if next == r {
                break ResponseTime::Ms(next as u64);
            }
            r = next;
        };
        out[i] = (t.name.clone(), rt);
    }
    Ok(out)
}

pub fn schedulable(tasks: &[AnalysisTask]) -> Result<bool, AnalysisError> {
    Ok(response_times(tasks)?
        .iter()
        .all(|(_, r)| matches!(r, ResponseTime::Ms(_))))
}

/// Rate-monotonic priority assignment: shorter period gets larger
/// (more urgent) priority; ties broken by name. If every task already has
/// a priority, the set is returned unchanged.
pub fn assign_rm_priorities(tasks: &[AnalysisTask]) -> Result<Vec<AnalysisTask>, AnalysisError> {
    check_tasks(tasks)?;
    if tasks.iter().all(|t| t.priority.is_some()) {
        return Ok(tasks.to_vec());
    }
    let mut idx: Vec<usize> = (0..tasks.len()).collect();
    idx.sort_by(|&a, &b| {
        tasks[a]
            .period_ms
            .cmp(&tasks[b].period_ms)
            .then(tasks[a].name.cmp(&tasks[b].name))
    });
    let n = tasks.len() as i64;
    let mut out = tasks.to_vec();
    for (rank, &i) in idx.iter().enumerate() {
        out[i].priority = Some(n - rank as i64);
    }
    Ok(out)
}

/// lcm of all periods.
pub fn hyperperiod(tasks: &[AnalysisTask]) -> u128 {
    tasks
        .iter()
        .fold(1u128, |acc, t| acc.lcm(&(t.period_ms as u128)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SimVerdict {
    /// No deadline miss over one hyperperiod; per-task observed worst-case
    /// response times.
    Schedulable(Vec<(String, u64)>),
    /// First miss: (task name, absolute release time ms).
    Miss(String, u128),
    /// Hyperperiod exceeds the simulation cap.
    TooLong(u128),
}

pub const SIM_CAP_MS: u128 = 1_000_000;

/// Preemptive fixed-priority simulation over one hyperperiod at 1 ms
/// resolution. All tasks release at t=0 (critical instant). This is the
/// independent oracle for `response_times`.
pub fn simulate_hyperperiod(tasks: &[AnalysisTask]) -> Result<SimVerdict, AnalysisError> {
    check_tasks(tasks)?;
    let order = analysis_order(tasks)?;
    let horizon = hyperperiod(tasks);
    if horizon > SIM_CAP_MS {
        return Ok(SimVerdict::TooLong(horizon));
    }
    let horizon = horizon as u64;
    // per task (in analysis order): remaining work of current job, release
    // time of current job, observed worst response
    let mut remaining: Vec<u64> = order.iter().map(|&i| tasks[i].wcet_ms).collect();
    let mut release: Vec<u64> = vec![0; order.len()];
    let mut worst: Vec<u64> = vec![0; order.len()];
    for t in 0..horizon {
        // new releases at time t
        for (k, &i) in order.iter().enumerate() {
            let period = tasks[i].period_ms;
            if t > 0 && t % period == 0 {
                if remaining[k] > 0 {
                    return Ok(SimVerdict::Miss(tasks[i].name.clone(), release[k] as u128));
                }
                remaining[k] = tasks[i].wcet_ms;
                release[k] = t;
            }
        }
        // run the most urgent pending job for this tick
        if let Some(k) = (0..order.len()).find(|&k| remaining[k] > 0) {
            remaining[k] -= 1;
            if remaining[k] == 0 {
                let resp = t + 1 - release[k];
                if resp > worst[k] {
                    worst[k] = resp;
                }
            }
        }
    }
    for (k, &i) in order.iter().enumerate() {
        if remaining[k] > 0 {
            return Ok(SimVerdict::Miss(tasks[i].name.clone(), release[k] as u128));
        }
    }
    let mut out: Vec<(String, u64)> = vec![(String::new(), 0); tasks.len()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = (tasks[i].name.clone(), worst[k]);
    }
    Ok(SimVerdict::Schedulable(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Native,
    CheddarXml,
}

/// Serialize a task set for an external analysis tool. The native format
/// round-trips through `import_native`.
pub fn export_analysis_model(set: &AnalysisTaskSet, format: ExportFormat) -> String {
    match format {
        ExportFormat::Native => {
            let mut s = String::new();
            let _ = writeln!(s, "taskset {} {{", set.platform);
            for t in &set.tasks {
                let prio = t
                    .priority
                    .map(|p| p.to_string())
                    .unwrap_or_else(|| "none".into());
                let _ = writeln!(
                    s,
                    "  task {} wcetMs={} periodMs={} priority={} emulated={};",
                    t.name, t.wcet_ms, t.period_ms, prio, t.emulated
                );
            }
            s.push_str("}\n");
            s
        }
        ExportFormat::CheddarXml => {
            let mut s = String::new();
            s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            s.push_str("<cheddar>\n");
            let _ = writeln!(
                s,
                "  <processor name=\"{}\" scheduler=\"RATE_MONOTONIC_PROTOCOL\"/>",
                set.platform
            );
            s.push_str("  <tasks>\n");
            for t in &set.tasks {
                let _ = writeln!(
                    s,
                    "    <periodic_task name=\"{}\" cpu=\"{}\" capacity=\"{}\" period=\"{}\" deadline=\"{}\" priority=\"{}\"/>",
                    t.name,
                    set.platform,
                    t.wcet_ms,
                    t.period_ms,
                    t.period_ms,
                    t.priority.unwrap_or(0)
                );
            }
            s.push_str("  </tasks>\n");
            s.push_str("</cheddar>\n");
            s
        }
    }
}

/// Parse the native export format back into a task set.
pub fn import_native(text: &str) -> Result<AnalysisTaskSet, AnalysisError> {
    let bad = |m: &str| AnalysisError::InvalidTask(m.to_string());
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| bad("empty input"))?;
    let platform = header
        .strip_prefix("taskset ")
        .and_then(|r| r.strip_suffix(" {"))
        .ok_or_else(|| bad(header))?
        .to_string();
    let mut tasks = Vec::new();
    for line in lines {
        if line == "}" {
            break;
        }
        let body = line
            .strip_prefix("task ")
            .and_then(|r| r.strip_suffix(';'))
            .ok_or_else(|| bad(line))?;
        let mut parts = body.split_whitespace();
        let name = parts.next().ok_or_else(|| bad(line))?.to_string();
        let mut t = AnalysisTask {
            name,
            wcet_ms: 0,
            period_ms: 0,
            priority: None,
            emulated: false,
        };
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv))?;
            match k {
                "wcetMs" => t.wcet_ms = v.parse().map_err(|_| bad(v))?,
                "periodMs" => t.period_ms = v.parse().map_err(|_| bad(v))?,
                "priority" => {
                    t.priority = if v == "none" {
                        None
                    } else {
                        Some(v.parse().map_err(|_| bad(v))?)
                    }
                }
                "emulated" => t.emulated = v.parse().map_err(|_| bad(v))?,
                _ => return Err(bad(kv)),
            }
        }
        tasks.push(t);
    }
    Ok(AnalysisTaskSet { platform, tasks })
}
