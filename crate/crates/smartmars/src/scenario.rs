//! Navigation demo harness: simulated base and laser, a mapper, a planner
//! and a motion stage wired through the interaction patterns, plus the
//! registry that `run` uses to attach behaviors to component instances.
//! Robot physics is a trivial kinematic stub; the harness exists to
//! exercise the middleware.

use crate::runtime::{CommObject, ComponentRt, EventMode, PatternError, Runtime, Value};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("behavior already registered for {0}")]
    DuplicateRegistration(String),
    #[error("no behavior registered for component {0}")]
    UnknownBehavior(String),
}

pub struct ScenarioCtx {
    pub runtime: Arc<Runtime>,
    pub component: Arc<ComponentRt>,
}

/// Attaches handlers, publications and periodic activity to one component
/// instance. Keyed by component model name.
pub type Behavior = Arc<dyn Fn(&ScenarioCtx) + Send + Sync>;

#[derive(Default)]
pub struct ScenarioRegistry {
    map: Mutex<BTreeMap<String, Behavior>>,
}

impl ScenarioRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, name: &str, behavior: Behavior) -> Result<(), ScenarioError> {
        let mut map = self.map.lock().unwrap();
        if map.contains_key(name) {
            return Err(ScenarioError::DuplicateRegistration(name.to_string()));
        }
        map.insert(name.to_string(), behavior);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<Behavior, ScenarioError> {
        self.map
            .lock()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| ScenarioError::UnknownBehavior(name.to_string()))
    }
}

/// Run `body` on the component's executor at t = period, 2·period, …
/// Under the virtual clock this is the deterministic stand-in for a task
/// thread: the timer enqueues the body as an executor job, and the clock
/// waits for quiescence before the next fire. Iterations are counted under
/// `task.<instance>.<task>`.
pub fn schedule_periodic(
    component: &Arc<ComponentRt>,
    task: &str,
    period_ms: u64,
    body: impl Fn(&Arc<ComponentRt>) + Send + Sync + 'static,
) {
    let clock = component.clock().clone();
    let weak: Weak<ComponentRt> = Arc::downgrade(component);
    let key = format!("task.{}.{}", component.instance, task);
    let body = Arc::new(body);
    let first = clock.now_ms() / period_ms * period_ms + period_ms;
    clock.schedule(
        first,
        Box::new(move |clk| {
            let Some(comp) = weak.upgrade() else { return None };
            let key = key.clone();
            let body = body.clone();
            let inner = comp.clone();
            comp.executor.enqueue(Box::new(move || {
                inner.counters().inc(&key);
                body(&inner);
            }));
            Some(clk.now_ms() + period_ms)
        }),
    );
}

/// The scenario's model file (shipped under fixtures/, consumed by the
/// CLI `run` subcommand as well).
pub const NAVIGATION_MODEL: &str = include_str!("../fixtures/navigation.model");

const SWAP_AT_MS: u64 = 2550;
const PLANNER_NEUTRAL_AT_MS: u64 = 4080;
const PLANNER_RESUME_AT_MS: u64 = 4590;
const OBSTACLE_MIN_RANGE: i64 = 30;

fn base_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        let port = ctx.component.server("baseState").unwrap().clone();
        let seq = Arc::new(AtomicI64::new(0));
        // pose integration stub: drift one unit per cycle
        port.publish(CommObject::new(
            "BaseState",
            vec![("x", Value::Int(0)), ("y", Value::Int(0)), ("seq", Value::Int(0))],
        ))
        .unwrap();
        let p2 = port.clone();
        schedule_periodic(&ctx.component, "sense", 100, move |_| {
            let n = seq.fetch_add(1, Ordering::SeqCst) + 1;
            let _ = p2.publish(CommObject::new(
                "BaseState",
                vec![("x", Value::Int(n)), ("y", Value::Int(2 * n)), ("seq", Value::Int(n))],
            ));
        });
        let _ticket = port.start_timed().unwrap();
    })
}

fn laser_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        let port = ctx.component.server("scan").unwrap().clone();
        let seq = Arc::new(AtomicI64::new(0));
        schedule_periodic(&ctx.component, "scanTask", 150, move |_| {
            let n = seq.fetch_add(1, Ordering::SeqCst) + 1;
            let _ = port.publish(CommObject::new(
                "Scan",
                vec![("range", Value::Int(200 - n)), ("seq", Value::Int(n))],
            ));
        });
    })
}

fn mapper_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        // (base x, base y, scan range, updates seen)
        let cache = Arc::new(Mutex::new((0i64, 0i64, 0i64, 0i64)));
        let c2 = cache.clone();
        schedule_periodic(&ctx.component, "build", 100, move |comp| {
            let mut cache = c2.lock().unwrap();
            if let Ok(Some(v)) = comp.client("baseIn").unwrap().get_update(false) {
                cache.0 = v.int("x").unwrap_or(0);
                cache.1 = v.int("y").unwrap_or(0);
                cache.3 += 1;
            }
            if let Ok(Some(v)) = comp.client("scanIn").unwrap().get_update(false) {
                cache.2 = v.int("range").unwrap_or(0);
                cache.3 += 1;
            }
        });
        ctx.component
            .server("map")
            .unwrap()
            .register_query_handler(move |_req| {
                let c = cache.lock().unwrap();
                Ok(CommObject::new(
                    "Map",
                    vec![
                        ("basex", Value::Int(c.0)),
                        ("basey", Value::Int(c.1)),
                        ("range", Value::Int(c.2)),
                        ("fresh", Value::Int(c.3)),
                    ],
                ))
            })
            .unwrap();
    })
}

fn planner_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        ctx.component.configure_state(|sm| {
            sm.add_state("Active");
            sm.bind_port("cmd", &["Active"]);
        });
        ctx.component.set_state("Active").unwrap();
        let activation = ctx
            .component
            .client("obstacle")
            .unwrap()
            .event_activate(
                CommObject::new(
                    "ObstacleParam",
                    vec![("minRange", Value::Int(OBSTACLE_MIN_RANGE))],
                ),
                EventMode::Continuous,
            )
            .unwrap();
        let seq = Arc::new(AtomicI64::new(0));
        schedule_periodic(&ctx.component, "plan", 200, move |comp| {
            // poll alerts first: deliveries from the previous cycle are
            // quiesced by now, polling after our own send would race the
            // motion handler's executor
            while let Ok(Some(_alert)) =
                comp.client("obstacle").unwrap().event_get(activation, false)
            {
                comp.counters().inc("scenario.obstacle_alerts");
            }
            let map = match comp
                .client("mapQuery")
                .unwrap()
                .query(CommObject::new("MapRequest", vec![("seq", Value::Int(0))]))
            {
                Ok(m) => m,
                Err(_) => return,
            };
            let n = seq.fetch_add(1, Ordering::SeqCst) + 1;
            let cmd = CommObject::new(
                "MotionCmd",
                vec![
                    ("vx", Value::Int(map.int("basex").unwrap_or(0) % 10)),
                    ("vy", Value::Int(1)),
                    ("seq", Value::Int(n)),
                ],
            );
            match comp.client("cmd").unwrap().send(cmd) {
                Ok(()) => comp.counters().inc("scenario.commands"),
                Err(PatternError::ServiceDeactivated) => {
                    comp.counters().inc("scenario.rejected_sends")
                }
                Err(_) => {}
            }
        });
    })
}

fn motion_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        let event = ctx.component.server("obstacle").unwrap().clone();
        event
            .register_event_test(|param, state| {
                let range = state.int("range").unwrap_or(i64::MAX);
                let min = param.int("minRange").unwrap_or(0);
                (range < min).then(|| {
                    CommObject::new("ObstacleAlert", vec![("range", Value::Int(range))])
                })
            })
            .unwrap();
        let cmd = ctx.component.server("cmd").unwrap().clone();
        let ncmds = Arc::new(AtomicU64::new(0));
        cmd.register_send_handler(move |_cmd| {
            // the obstacle closes in as the robot drives
            let n = ncmds.fetch_add(1, Ordering::SeqCst) + 1;
            let range = 100 - 5 * n as i64;
            let _ = event.update_event_state(CommObject::new(
                "ObstacleAlert",
                vec![("range", Value::Int(range))],
            ));
        })
        .unwrap();
    })
}

fn supervisor_behavior() -> Behavior {
    Arc::new(|ctx: &ScenarioCtx| {
        let runtime = ctx.runtime.clone();
        let swapped = Arc::new(AtomicU64::new(0));
        let paused = Arc::new(AtomicU64::new(0));
        let resumed = Arc::new(AtomicU64::new(0));
        // the 255 ms beat deliberately falls between the 100 ms base
        // cycles, so the swap never races a delivery tick
        schedule_periodic(&ctx.component, "watch", 255, move |comp| {
            let now = comp.clock().now_ms();
            if now >= SWAP_AT_MS && swapped.swap(1, Ordering::SeqCst) == 0 {
                let _ = runtime.disconnect(("mapper", "baseIn"));
                let _ = runtime.connect(("mapper", "baseIn"), ("basestub", "baseState"));
                comp.counters().inc("scenario.swaps");
            }
            if now >= PLANNER_NEUTRAL_AT_MS && paused.swap(1, Ordering::SeqCst) == 0 {
                let _ = runtime.set_state("planner", "Neutral");
            }
            if now >= PLANNER_RESUME_AT_MS && resumed.swap(1, Ordering::SeqCst) == 0 {
                let _ = runtime.set_state("planner", "Active");
            }
        });
    })
}

/// The pinned scenario: model text plus the behaviors for every component
/// it declares.
pub fn build_navigation_scenario() -> (&'static str, ScenarioRegistry) {
    let registry = ScenarioRegistry::new();
    registry.register("BaseSim", base_behavior()).unwrap();
    registry.register("BaseStub", base_behavior()).unwrap();
    registry.register("LaserSim", laser_behavior()).unwrap();
    registry.register("Mapper", mapper_behavior()).unwrap();
    registry.register("Planner", planner_behavior()).unwrap();
    registry.register("Motion", motion_behavior()).unwrap();
    registry.register("Supervisor", supervisor_behavior()).unwrap();
    (NAVIGATION_MODEL, registry)
}
