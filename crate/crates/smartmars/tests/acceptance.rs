//! Acceptance suite: one test per release criterion. Each test prints a
//! single `criterion N: ... pass` line (visible with `--nocapture`);
//! tolerances are declared inline next to the assertions that use them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartmars::analysis::{
    assign_rm_priorities, export_analysis_model, response_times, simulate_hyperperiod,
    utilization, utilization_bound, AnalysisTask, ExportFormat, ResponseTime, SimVerdict,
};
use smartmars::clock::Clock;
use smartmars::deploy::{check_deployment, extract_analysis_model, transform};
use smartmars::model::{parse_model, serialize_model, validate_model, TaskSpec};
use smartmars::runtime::{CommObject, PatternError, Runtime, TypeTable, Value};
use smartmars::task::{map_task, run_periodic, PsmTask, TaskError, TaskMapping};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

const NAVIGATION: &str = include_str!("../fixtures/navigation.model");

const PAIR_MODEL: &str = "
commobject A { tag: int64; }

component Client {
  port ask: query required req=A ans=A timeoutMs=40;
}

component Server {
  port ask: query provided req=A ans=A;
}
";

fn a(tag: i64) -> CommObject {
    CommObject::new("A", vec![("tag", Value::Int(tag))])
}

/// Criterion 1: pattern invariants hold across 1000 randomized
/// interleavings of calls, disconnects and injected handler faults on the
/// virtual clock. Every query resolves to exactly one of the documented
/// outcomes; successful answers echo the request.
#[test]
fn criterion_1_pattern_invariants_randomized() {
    let model = parse_model(PAIR_MODEL).unwrap();
    for iter in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1 ^ iter);
        let rt = Runtime::new(Clock::virtual_clock(), TypeTable::from_model(&model));
        let c = rt.add_component("c", model.component("Client").unwrap());
        let s = rt.add_component("s", model.component("Server").unwrap());
        let fault_one_in = rng.gen_range(2..5);
        let calls = Arc::new(AtomicU64::new(0));
        let calls2 = calls.clone();
        s.server("ask")
            .unwrap()
            .register_query_handler(move |req| {
                if calls2.fetch_add(1, Ordering::SeqCst) % fault_one_in == 0 {
                    Err("injected fault".into())
                } else {
                    Ok(req)
                }
            })
            .unwrap();
        rt.clock.auto_advance();
        let mut wired = false;
        for op in 0..rng.gen_range(5..20) {
            match rng.gen_range(0..4) {
                0 => {
                    rt.connect(("c", "ask"), ("s", "ask")).unwrap();
                    wired = true;
                }
                1 => {
                    rt.disconnect(("c", "ask")).unwrap();
                    wired = false;
                }
                _ => {
                    let r = c.client("ask").unwrap().query(a(op));
                    match r {
                        Ok(ans) => {
                            assert!(wired, "answer from an unwired port");
                            assert_eq!(ans.int("tag"), Some(op));
                        }
                        Err(PatternError::NotWired) => assert!(!wired),
                        Err(PatternError::Timeout) => assert!(wired),
                        Err(e) => panic!("iteration {iter}: unexpected {e:?}"),
                    }
                }
            }
        }
        rt.shutdown();
    }
    println!("criterion 1: 1000 randomized pattern interleavings pass");
}

/// Criterion 2: wiring stress. Five components, 500 random schedules of
/// connect/disconnect/query; after the final teardown every issued call
/// has returned (zero leaked blocked calls).
#[test]
fn criterion_2_wiring_stress_no_leaked_calls() {
    let model = parse_model(PAIR_MODEL).unwrap();
    for run in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC2 ^ run);
        let rt = Runtime::new(Clock::virtual_clock(), TypeTable::from_model(&model));
        let clients = ["c0", "c1", "c2"];
        let servers = ["s0", "s1"];
        for c in clients {
            rt.add_component(c, model.component("Client").unwrap());
        }
        for s in servers {
            let comp = rt.add_component(s, model.component("Server").unwrap());
            let answer = rng.gen_bool(0.5); // silent handlers force timeouts
            comp.server("ask")
                .unwrap()
                .register_query_handler(move |req| if answer { Ok(req) } else { Err("ignored".into()) })
                .unwrap();
        }
        rt.clock.auto_advance();
        let issued = Arc::new(AtomicU64::new(0));
        let returned = Arc::new(AtomicU64::new(0));
        let mut joins = Vec::new();
        for _ in 0..rng.gen_range(5..15) {
            let c = clients[rng.gen_range(0..clients.len())];
            match rng.gen_range(0..3) {
                0 => {
                    let s = servers[rng.gen_range(0..servers.len())];
                    rt.connect((c, "ask"), (s, "ask")).unwrap();
                }
                1 => rt.disconnect((c, "ask")).unwrap(),
                _ => {
                    let port = rt.component(c).unwrap().client("ask").unwrap().clone();
                    issued.fetch_add(1, Ordering::SeqCst);
                    let returned = returned.clone();
                    joins.push(std::thread::spawn(move || {
                        let _ = port.query(a(1));
                        returned.fetch_add(1, Ordering::SeqCst);
                    }));
                }
            }
        }
        for c in clients {
            rt.disconnect((c, "ask")).unwrap();
        }
        for j in joins {
            j.join().unwrap();
        }
        assert_eq!(issued.load(Ordering::SeqCst), returned.load(Ordering::SeqCst));
        rt.shutdown();
    }
    println!("criterion 2: 500 wiring stress runs, zero leaked blocked calls");
}

/// Criterion 3: the full 16-row task mapping decision table.
#[test]
fn criterion_3_task_mapping_table() {
    use smartmars::model::PlatformDescription;
    let platform = |rt: bool| PlatformDescription {
        name: if rt { "rt" } else { "plain" }.into(),
        supports_realtime: rt,
        memory_mb: 64,
        devices: Default::default(),
        cpu_count: 1,
    };
    for rt_task in [false, true] {
        for periodic in [false, true] {
            for wcet in [None, Some(2u64)] {
                for rt_platform in [false, true] {
                    let spec = TaskSpec {
                        name: "t".into(),
                        is_realtime: rt_task,
                        is_periodic: periodic,
                        period_ms: periodic.then_some(10),
                        wcet_ms: wcet,
                        priority: 0,
                    };
                    let r = map_task(&spec, &platform(rt_platform));
                    match (rt_task, periodic, wcet, rt_platform) {
                        (true, true, Some(_), true) => {
                            assert_eq!(r.unwrap().mapping, TaskMapping::RealtimeTask)
                        }
                        (true, true, Some(_), false) => assert!(matches!(
                            r,
                            Err(TaskError::MissingPlatformCapability { .. })
                        )),
                        (true, _, None, _) | (true, false, _, _) => {
                            assert!(matches!(r, Err(TaskError::InvalidTaskSpec(..))))
                        }
                        (false, true, _, _) => {
                            assert_eq!(r.unwrap().mapping, TaskMapping::EmulatedPeriodicTask)
                        }
                        (false, false, _, _) => {
                            assert_eq!(r.unwrap().mapping, TaskMapping::FreeRunningTask)
                        }
                    }
                }
            }
        }
    }
    println!("criterion 3: 16/16 task mapping rows pass");
}

fn random_task_set(rng: &mut ChaCha8Rng) -> Vec<AnalysisTask> {
    loop {
        let n = rng.gen_range(2..=5);
        let tasks: Vec<AnalysisTask> = (0..n)
            .map(|i| {
                let period = rng.gen_range(2..=30u64);
                AnalysisTask {
                    name: format!("t{i}"),
                    wcet_ms: rng.gen_range(1..=period.min(8)),
                    period_ms: period,
                    priority: None,
                    emulated: false,
                }
            })
            .collect();
        let u = utilization(&tasks);
        // tolerance: utilization cap 0.95 enforced exactly in rationals
        if u <= num_rational::Ratio::new(95, 100) {
            return tasks;
        }
    }
}

/// Criterion 4: exact response-time analysis agrees with the hyperperiod
/// simulation oracle on 1000 random task sets; the Liu–Layland bound for
/// n=3 matches the closed form to 1e-6; the analysis is invariant under
/// time-scale factors {2, 7, 100}.
#[test]
fn criterion_4_rta_against_simulation_oracle() {
    // tolerance: 1e-6 absolute on the closed-form bound
    assert!((utilization_bound(3) - 0.7797631497).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for _ in 0..1000 {
        let tasks = assign_rm_priorities(&random_task_set(&mut rng)).unwrap();
        let rta: Vec<(String, ResponseTime)> = response_times(&tasks).unwrap();
        let sim = simulate_hyperperiod(&tasks).unwrap();
        match sim {
            SimVerdict::Schedulable(observed) => {
                for (name, worst) in &observed {
                    let (_, r) = rta.iter().find(|(n, _)| n == name).unwrap();
                    // tolerance: zero — RTA must match the oracle exactly
                    assert_eq!(*r, ResponseTime::Ms(*worst), "task {name}");
                }
            }
            SimVerdict::Miss(ref name, _) => {
                let (_, r) = rta.iter().find(|(n, _)| n == name).unwrap();
                assert!(
                    matches!(r, ResponseTime::Unbounded)
                        || matches!(r, ResponseTime::Ms(ms)
                            if *ms > tasks.iter().find(|t| &t.name == name).unwrap().period_ms),
                    "oracle missed {name} but RTA claims it schedulable"
                );
            }
            SimVerdict::TooLong(_) => {}
        }

        // scale invariance: response times scale linearly with the grid
        for k in [2u64, 7, 100] {
            let scaled: Vec<AnalysisTask> = tasks
                .iter()
                .map(|t| AnalysisTask {
                    wcet_ms: t.wcet_ms * k,
                    period_ms: t.period_ms * k,
                    ..t.clone()
                })
                .collect();
            for ((_, r), (_, rs)) in response_times(&tasks)
                .unwrap()
                .iter()
                .zip(response_times(&scaled).unwrap().iter())
            {
                match (r, rs) {
                    (ResponseTime::Ms(a), ResponseTime::Ms(b)) => assert_eq!(a * k, *b),
                    (ResponseTime::Unbounded, ResponseTime::Unbounded) => {}
                    other => panic!("scale variance under k={k}: {other:?}"),
                }
            }
        }
    }
    println!("criterion 4: RTA agrees with the simulation oracle on 1000 task sets");
}

/// Criterion 5: emulated periodic execution. An instant body hits all 10
/// releases in [0, 1000] at period 100 with zero misses; a 150 ms body
/// overruns, skips releases and stays on the period grid.
#[test]
fn criterion_5_periodic_execution() {
    let task = |period| PsmTask {
        spec: TaskSpec {
            name: "t".into(),
            is_realtime: false,
            is_periodic: true,
            period_ms: Some(period),
            wcet_ms: None,
            priority: 0,
        },
        mapping: TaskMapping::EmulatedPeriodicTask,
        platform: "plain".into(),
    };
    let clock = Clock::virtual_clock();
    let r = run_periodic(&task(100), &clock, 1000, |_| {}).unwrap();
    assert_eq!((r.iterations, r.deadline_misses), (10, 0));

    let clock = Clock::virtual_clock();
    let r = run_periodic(&task(100), &clock, 1000, |c| c.advance(150)).unwrap();
    assert!(r.deadline_misses >= 4, "got {} misses", r.deadline_misses);
    // releases stay on the 100 ms grid: every iteration started at k·100
    assert_eq!(clock.now_ms() % 50, 0);
    println!("criterion 5: periodic execution and overrun accounting pass");
}

/// Criterion 6: the full pipeline on the navigation model. Validation is
/// clean, the deployment checks pass, analysis agrees with the simulation
/// oracle, and a 5000 ms virtual run delivers exactly 50 base states to
/// the mapper, exercises all five patterns, performs the mid-run service
/// swap, and reproduces byte-identically on a second run.
#[test]
fn criterion_6_pipeline_end_to_end() {
    let model = parse_model(NAVIGATION).unwrap();
    assert!(validate_model(&model).is_empty());
    let psm = transform(&model).unwrap();
    assert!(check_deployment(&psm).is_empty());
    for set in extract_analysis_model(&psm) {
        let tasks = assign_rm_priorities(&set.tasks).unwrap();
        let rta = response_times(&tasks).unwrap();
        assert!(rta.iter().all(|(_, r)| matches!(r, ResponseTime::Ms(_))));
        match simulate_hyperperiod(&tasks).unwrap() {
            SimVerdict::Schedulable(observed) => {
                for (name, worst) in &observed {
                    let (_, r) = rta.iter().find(|(n, _)| n == name).unwrap();
                    assert_eq!(*r, ResponseTime::Ms(*worst), "platform {}", set.platform);
                }
            }
            v => panic!("oracle disagrees on {}: {v:?}", set.platform),
        }
    }

    let report = smartmars::cli::cmd_run(&model, true, 5000).unwrap();
    assert!(report.contains("port.mapper.baseIn 50"), "report:\n{report}");
    for key in [
        "pattern.send",
        "pattern.query",
        "pattern.pushnewest",
        "pattern.pushtimed",
        "pattern.event",
    ] {
        let line = report
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{key} ")))
            .unwrap_or_else(|| panic!("missing counter {key} in report:\n{report}"));
        let value: u64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(value > 0, "counter {key} is zero");
    }
    assert!(report.contains("scenario.swaps 1"), "report:\n{report}");
    // tolerance: zero — repeat runs must be byte-identical
    assert_eq!(smartmars::cli::cmd_run(&model, true, 5000).unwrap(), report);
    println!("criterion 6: navigation pipeline deterministic end to end");
}

/// Criterion 7: golden artifacts are byte-identical to the pinned files.
#[test]
fn criterion_7_golden_artifacts() {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let pinned = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();

    let model = parse_model(NAVIGATION).unwrap();
    assert_eq!(serialize_model(&model), pinned("navigation.canonical.model"));
    let psm = transform(&model).unwrap();
    for set in extract_analysis_model(&psm) {
        let set = smartmars::analysis::AnalysisTaskSet {
            tasks: assign_rm_priorities(&set.tasks).unwrap(),
            platform: set.platform,
        };
        assert_eq!(
            export_analysis_model(&set, ExportFormat::Native),
            pinned(&format!("navigation.{}.tasks", set.platform))
        );
        assert_eq!(
            export_analysis_model(&set, ExportFormat::CheddarXml),
            pinned(&format!("navigation.{}.xml", set.platform))
        );
    }
    println!("criterion 7: golden artifacts byte-identical");
}
