//! PIM→PSM task mapping and periodic-task emulation: a platform-neutral
//! `TaskSpec` becomes a `PsmTask` whose execution class depends on the
//! target platform, and periodic bodies are driven by the virtual or
//! real clock with deadline-miss accounting.

use crate::clock::Clock;
use crate::model::{PlatformDescription, TaskSpec};
use crate::runtime::{ComponentRt, PatternError, WaitCell};
use serde::Serialize;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskMapping {
    /// Scheduled by the platform's real-time scheduler; executed here only
    /// in simulation, but analyzed and deployment-checked as hard realtime.
    RealtimeTask,
    /// Periodic behaviour emulated on a non-realtime platform.
    EmulatedPeriodicTask,
    /// Runs whenever scheduled, no release grid.
    FreeRunningTask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsmTask {
    pub spec: TaskSpec,
    pub mapping: TaskMapping,
    pub platform: String,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum TaskError {
    #[error("task {task}: platform {platform} lacks {capability}")]
    MissingPlatformCapability {
        task: String,
        platform: String,
        capability: String,
    },
    #[error("invalid task spec {0}: {1}")]
    InvalidTaskSpec(String, String),
    #[error("clock is stopped")]
    ClockStopped,
    #[error("task already stopped")]
    AlreadyStopped,
}

/// Map a platform-independent task onto a platform. Total over valid
/// specs: realtime tasks require a realtime-capable platform, periodic
/// non-realtime tasks are emulated, aperiodic tasks run free.
pub fn map_task(spec: &TaskSpec, platform: &PlatformDescription) -> Result<PsmTask, TaskError> {
    let invalid = |msg: &str| TaskError::InvalidTaskSpec(spec.name.clone(), msg.to_string());
    if spec.is_periodic {
        if spec.period_ms.unwrap_or(0) == 0 {
            return Err(invalid("periodic task needs periodMs > 0"));
        }
    } else if spec.period_ms.is_some() {
        return Err(invalid("aperiodic task must not declare periodMs"));
    }
    if spec.is_realtime {
        if !spec.is_periodic {
            return Err(invalid("realtime task must be periodic"));
        }
        if spec.wcet_ms.unwrap_or(0) == 0 {
            return Err(invalid("realtime task needs wcetMs > 0"));
        }
        if spec.wcet_ms > spec.period_ms {
            return Err(invalid("wcetMs must not exceed periodMs"));
        }
        if !platform.supports_realtime {
            return Err(TaskError::MissingPlatformCapability {
                task: spec.name.clone(),
                platform: platform.name.clone(),
                capability: "realtime scheduling".into(),
            });
        }
        return Ok(PsmTask {
            spec: spec.clone(),
            mapping: TaskMapping::RealtimeTask,
            platform: platform.name.clone(),
        });
    }
    let mapping = if spec.is_periodic {
        TaskMapping::EmulatedPeriodicTask
    } else {
        TaskMapping::FreeRunningTask
    };
    Ok(PsmTask {
        spec: spec.clone(),
        mapping,
        platform: platform.name.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunReport {
    pub iterations: u64,
    pub deadline_misses: u64,
    pub max_jitter_ms: u64,
}

/// Sleep until absolute clock time `at`. Works for both clock modes: a
/// timer posts a cell, and an untracked waiter blocks on it (in virtual
/// mode until someone advances the clock past `at`).
fn sleep_until(clock: &Clock, at: u64, wake: &Mutex<Option<Arc<WaitCell<()>>>>) -> Result<(), PatternError> {
    if clock.now_ms() >= at {
        return Ok(());
    }
    let cell: Arc<WaitCell<()>> = WaitCell::new();
    *wake.lock().unwrap() = Some(cell.clone());
    let c2 = cell.clone();
    let clk = clock.clone();
    clock.schedule(
        at,
        Box::new(move |_| {
            c2.post(&clk, Ok(()));
            None
        }),
    );
    let r = cell.wait(clock, None);
    *wake.lock().unwrap() = None;
    r
}

/// Drive a periodic body until `until` (absolute ms). Releases at
/// t = period, 2·period, …; a release falling inside a still-running body
/// window counts a deadline miss and is skipped, so the phase stays on the
/// period grid. Under the virtual clock the caller's thread advances the
/// clock itself, and the body may advance it further to model its cost.
pub fn run_periodic<F: FnMut(&Clock)>(
    task: &PsmTask,
    clock: &Clock,
    until: u64,
    mut body: F,
) -> Result<RunReport, TaskError> {
    if task.mapping == TaskMapping::FreeRunningTask {
        return Err(TaskError::InvalidTaskSpec(
            task.spec.name.clone(),
            "free-running task has no period".into(),
        ));
    }
    if clock.is_stopped() {
        return Err(TaskError::ClockStopped);
    }
    let period = task.spec.period_ms.expect("periodic task has period");
    let mut report = RunReport::default();
    let mut next = clock.now_ms() / period * period + period;
    let wake = Mutex::new(None);
    while next <= until {
        if clock.is_stopped() {
            break;
        }
        if clock.is_virtual() {
            clock.advance_to(next);
        } else if sleep_until(clock, next, &wake).is_err() {
            break;
        }
        let released = clock.now_ms();
        let jitter = released.saturating_sub(next);
        if jitter > report.max_jitter_ms {
            report.max_jitter_ms = jitter;
        }
        body(clock);
        report.iterations += 1;
        let finished = clock.now_ms();
        next += period;
        // releases that elapsed while the body was still running
        while next <= finished && next <= until {
            report.deadline_misses += 1;
            next += period;
        }
    }
    Ok(report)
}

enum LoopKind {
    Periodic(u64),
    Free,
}

/// Handle for a body spawned on its own execution context.
pub struct TaskHandle {
    stop_flag: Arc<AtomicBool>,
    wake: Arc<Mutex<Option<Arc<WaitCell<()>>>>>,
    join: Mutex<Option<JoinHandle<RunReport>>>,
    component: Arc<ComponentRt>,
    clock: Clock,
}

/// Run `body` repeatedly on a dedicated thread owned by `component`:
/// on the task's period grid for periodic mappings, back-to-back for
/// free-running ones. Cancellation is cooperative at iteration
/// boundaries; see [`TaskHandle::stop`].
pub fn executor_spawn<F>(
    component: &Arc<ComponentRt>,
    task: &PsmTask,
    mut body: F,
) -> Result<TaskHandle, TaskError>
where
    F: FnMut(&Clock) + Send + 'static,
{
    let clock = component.clock().clone();
    if clock.is_stopped() {
        return Err(TaskError::ClockStopped);
    }
    let kind = match task.mapping {
        TaskMapping::FreeRunningTask => LoopKind::Free,
        _ => LoopKind::Periodic(task.spec.period_ms.expect("periodic task has period")),
    };
    let stop_flag = Arc::new(AtomicBool::new(false));
    let wake: Arc<Mutex<Option<Arc<WaitCell<()>>>>> = Arc::new(Mutex::new(None));
    let flag = stop_flag.clone();
    let wake2 = wake.clone();
    let clk = clock.clone();
    let name = task.spec.name.clone();
    let join = std::thread::Builder::new()
        .name(name)
        .spawn(move || {
            let mut report = RunReport::default();
            let mut next = match kind {
                LoopKind::Periodic(p) => clk.now_ms() / p * p + p,
                LoopKind::Free => 0,
            };
            while !flag.load(Ordering::SeqCst) && !clk.is_stopped() {
                if let LoopKind::Periodic(_) = kind {
                    if sleep_until(&clk, next, &wake2).is_err() {
                        break;
                    }
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                }
                body(&clk);
                report.iterations += 1;
                if let LoopKind::Periodic(p) = kind {
                    let finished = clk.now_ms();
                    next += p;
                    while next <= finished {
                        report.deadline_misses += 1;
                        next += p;
                    }
                }
            }
            report
        })
        .expect("spawn task thread");
    Ok(TaskHandle {
        stop_flag,
        wake,
        join: Mutex::new(Some(join)),
        component: component.clone(),
        clock,
    })
}

impl TaskHandle {
    /// Request cooperative cancellation and wait for the body to exit.
    /// A body blocked in a pattern call on one of the component's
    /// requestor ports is unblocked with `Disconnected` first.
    pub fn stop(&self) -> Result<RunReport, TaskError> {
        let join = self
            .join
            .lock()
            .unwrap()
            .take()
            .ok_or(TaskError::AlreadyStopped)?;
        self.stop_flag.store(true, Ordering::SeqCst);
        self.component.cancel_blocked_calls();
        if let Some(cell) = self.wake.lock().unwrap().take() {
            cell.post(&self.clock, Err(PatternError::Disconnected));
        }
        Ok(join.join().expect("task thread panicked"))
    }
}
