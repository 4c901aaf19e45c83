//! Semantics of the five data-communication patterns on the in-process
//! reference transport, driven by the virtual clock.

use smartmars::clock::Clock;
use smartmars::model::parse_model;
use smartmars::runtime::{
    check_compatibility, CommObject, ComponentRt, EventMode, PatternError, ReceiveResult, Runtime,
    TypeTable, Value,
};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

const MODEL: &str = "
commobject A { tag: int64; }
commobject B { tag: int64; }

component Client {
  port sendOut: send required req=A;
  port ask: query required req=A ans=B;
  port askT: query required req=A ans=B timeoutMs=50;
  port sub: pushnewest required ans=A;
  port subT: pushtimed required ans=A cycleMs=100;
  port ev: event required req=A ans=B timeoutMs=50;
}

component Server {
  port sendIn: send provided req=A;
  port ask: query provided req=A ans=B;
  port pub: pushnewest provided ans=A;
  port pubT: pushtimed provided ans=A cycleMs=100;
  port ev: event provided req=A ans=B;
}
";

fn world() -> (Arc<Runtime>, Arc<ComponentRt>, Arc<ComponentRt>) {
    let model = parse_model(MODEL).unwrap();
    assert!(smartmars::model::validate_model(&model).is_empty());
    let rt = Runtime::new(Clock::virtual_clock(), TypeTable::from_model(&model));
    let client = rt.add_component("c", model.component("Client").unwrap());
    let server = rt.add_component("s", model.component("Server").unwrap());
    (rt, client, server)
}

fn a(tag: i64) -> CommObject {
    CommObject::new("A", vec![("tag", Value::Int(tag))])
}

fn b(tag: i64) -> CommObject {
    CommObject::new("B", vec![("tag", Value::Int(tag))])
}

fn echo(server: &ComponentRt) {
    server
        .server("ask")
        .unwrap()
        .register_query_handler(|req| Ok(b(req.int("tag").unwrap())))
        .unwrap();
}

#[test]
fn send_delivers_to_handler_once() {
    let (rt, c, s) = world();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen2 = seen.clone();
    s.server("sendIn")
        .unwrap()
        .register_send_handler(move |msg| seen2.lock().unwrap().push(msg.int("tag").unwrap()))
        .unwrap();
    rt.connect(("c", "sendOut"), ("s", "sendIn")).unwrap();
    c.client("sendOut").unwrap().send(a(7)).unwrap();
    rt.clock.wait_quiescent();
    assert_eq!(*seen.lock().unwrap(), vec![7]);
    rt.shutdown();
}

#[test]
fn unwired_send_fails() {
    let (rt, c, _s) = world();
    assert_eq!(
        c.client("sendOut").unwrap().send(a(1)),
        Err(PatternError::NotWired)
    );
    rt.shutdown();
}

#[test]
fn wrong_type_rejected_at_send() {
    let (rt, c, s) = world();
    s.server("sendIn").unwrap().register_send_handler(|_| {}).unwrap();
    rt.connect(("c", "sendOut"), ("s", "sendIn")).unwrap();
    let r = c.client("sendOut").unwrap().send(b(1));
    assert!(matches!(r, Err(PatternError::TypeMismatch(_))));
    rt.shutdown();
}

#[test]
fn query_echo() {
    let (rt, c, s) = world();
    echo(&s);
    rt.connect(("c", "ask"), ("s", "ask")).unwrap();
    let ans = c.client("ask").unwrap().query(a(42)).unwrap();
    assert_eq!(ans.int("tag"), Some(42));
    rt.shutdown();
}

#[test]
fn query_timeout_at_exact_virtual_time() {
    let (rt, c, s) = world();
    // handler never answers
    s.server("ask")
        .unwrap()
        .register_query_handler(|_| Err("not today".into()))
        .unwrap();
    rt.connect(("c", "askT"), ("s", "ask")).unwrap();
    rt.clock.auto_advance();
    let t0 = rt.clock.now_ms();
    let r = c.client("askT").unwrap().query(a(1));
    assert_eq!(r, Err(PatternError::Timeout));
    assert_eq!(rt.clock.now_ms() - t0, 50); // zero tolerance on the virtual clock
    rt.shutdown();
}

#[test]
fn no_handler_means_client_timeout() {
    let (rt, c, s) = world();
    let _ = s;
    rt.connect(("c", "askT"), ("s", "ask")).unwrap();
    rt.clock.auto_advance();
    assert_eq!(c.client("askT").unwrap().query(a(1)), Err(PatternError::Timeout));
    rt.shutdown();
}

#[test]
fn disconnect_unblocks_pending_query() {
    let (rt, c, s) = world();
    let arrived = Arc::new(AtomicU64::new(0));
    let arrived2 = arrived.clone();
    s.server("ask")
        .unwrap()
        .register_query_handler(move |_| {
            arrived2.fetch_add(1, Ordering::SeqCst);
            Err("silent".into())
        })
        .unwrap();
    rt.connect(("c", "ask"), ("s", "ask")).unwrap();
    let port = c.client("ask").unwrap().clone();
    let h = std::thread::spawn(move || port.query(a(1)));
    // wait for the request to reach the handler, then tear down the wiring
    while arrived.load(Ordering::SeqCst) == 0 {
        std::thread::yield_now();
    }
    rt.clock.wait_quiescent();
    rt.disconnect(("c", "ask")).unwrap();
    assert_eq!(h.join().unwrap(), Err(PatternError::Disconnected));
    rt.shutdown();
}

#[test]
fn async_out_of_order_correlation() {
    let (rt, c, s) = world();
    // answer requests in reverse arrival order: park the first until the
    // second arrives
    let parked: Arc<Mutex<Vec<i64>>> = Arc::new(Mutex::new(Vec::new()));
    let parked2 = parked.clone();
    let gate = Arc::new(AtomicU64::new(0));
    let gate2 = gate.clone();
    s.server("ask")
        .unwrap()
        .register_query_handler(move |req| {
            let tag = req.int("tag").unwrap();
            parked2.lock().unwrap().push(tag);
            if gate2.fetch_add(1, Ordering::SeqCst) == 0 {
                // first request: handler must not block forever; answer both
                // from the second invocation instead
                Err("parked".into())
            } else {
                Ok(b(tag))
            }
        })
        .unwrap();
    rt.connect(("c", "ask"), ("s", "ask")).unwrap();
    let port = c.client("ask").unwrap();
    let id1 = port.query_async(a(1)).unwrap();
    let id2 = port.query_async(a(2)).unwrap();
    rt.clock.wait_quiescent();
    // only the second was answered; the first is still pending
    match port.query_receive(id2, false).unwrap() {
        ReceiveResult::Answer(ans) => assert_eq!(ans.int("tag"), Some(2)),
        ReceiveResult::Pending => panic!("id2 should be answered"),
    }
    assert!(matches!(
        port.query_receive(id1, false).unwrap(),
        ReceiveResult::Pending
    ));
    assert_eq!(parked.lock().unwrap().as_slice(), &[1, 2]);
    rt.shutdown();
}

#[test]
fn consumed_id_unknown() {
    let (rt, c, s) = world();
    echo(&s);
    rt.connect(("c", "ask"), ("s", "ask")).unwrap();
    let port = c.client("ask").unwrap();
    let id = port.query_async(a(5)).unwrap();
    rt.clock.wait_quiescent();
    match port.query_receive(id, true).unwrap() {
        ReceiveResult::Answer(ans) => assert_eq!(ans.int("tag"), Some(5)),
        ReceiveResult::Pending => panic!("expected answer"),
    }
    assert_eq!(port.query_receive(id, false), Err(PatternError::UnknownId));
    rt.shutdown();
}

#[test]
fn handler_already_registered() {
    let (_rt, _c, s) = world();
    let port = s.server("ask").unwrap();
    port.register_query_handler(|r| Ok(r)).unwrap();
    assert_eq!(
        port.register_query_handler(|r| Ok(r)),
        Err(PatternError::HandlerAlreadyRegistered)
    );
}

#[test]
fn push_newest_latest_wins() {
    let (rt, c, s) = world();
    rt.connect(("c", "sub"), ("s", "pub")).unwrap();
    let publisher = s.server("pub").unwrap();
    publisher.publish(a(1)).unwrap();
    publisher.publish(a(2)).unwrap();
    rt.clock.wait_quiescent();
    let got = c.client("sub").unwrap().get_update(false).unwrap().unwrap();
    assert_eq!(got.int("tag"), Some(2));
    // nothing fresher available
    assert_eq!(c.client("sub").unwrap().get_update(false).unwrap(), None);
    rt.shutdown();
}

#[test]
fn subscribe_after_publish_gets_current_value() {
    let (rt, c, s) = world();
    s.server("pub").unwrap().publish(a(9)).unwrap();
    rt.connect(("c", "sub"), ("s", "pub")).unwrap(); // auto-subscribes
    rt.clock.wait_quiescent();
    let got = c.client("sub").unwrap().get_update(false).unwrap().unwrap();
    assert_eq!(got.int("tag"), Some(9));
    rt.shutdown();
}

#[test]
fn no_update_without_publish() {
    let (rt, c, _s) = world();
    rt.connect(("c", "sub"), ("s", "pub")).unwrap();
    assert_eq!(c.client("sub").unwrap().get_update(false).unwrap(), None);
    rt.shutdown();
}

#[test]
fn disconnect_unblocks_get_update() {
    let (rt, c, _s) = world();
    rt.connect(("c", "sub"), ("s", "pub")).unwrap();
    let port = c.client("sub").unwrap().clone();
    let h = std::thread::spawn(move || port.get_update(true));
    std::thread::sleep(std::time::Duration::from_millis(20));
    rt.disconnect(("c", "sub")).unwrap();
    assert_eq!(h.join().unwrap(), Err(PatternError::Disconnected));
    rt.shutdown();
}

#[test]
fn fan_out_to_three_subscribers() {
    let model = parse_model(MODEL).unwrap();
    let rt = Runtime::new(Clock::virtual_clock(), TypeTable::from_model(&model));
    let s = rt.add_component("s", model.component("Server").unwrap());
    let subs: Vec<_> = (0..3)
        .map(|i| rt.add_component(&format!("c{i}"), model.component("Client").unwrap()))
        .collect();
    for i in 0..3 {
        rt.connect((&format!("c{i}"), "sub"), ("s", "pub")).unwrap();
    }
    s.server("pub").unwrap().publish(a(1)).unwrap();
    s.server("pub").unwrap().publish(a(2)).unwrap();
    rt.clock.wait_quiescent();
    for c in &subs {
        let got = c.client("sub").unwrap().get_update(false).unwrap().unwrap();
        assert_eq!(got.int("tag"), Some(2));
    }
    rt.shutdown();
}

#[test]
fn push_timed_three_deliveries_by_350() {
    let (rt, c, s) = world();
    rt.connect(("c", "subT"), ("s", "pubT")).unwrap();
    let publisher = s.server("pubT").unwrap();
    publisher.publish(a(1)).unwrap();
    let _ticket = publisher.start_timed().unwrap();
    rt.run_until(350);
    assert_eq!(rt.counters.get("port.c.subT"), 3); // ticks at 100, 200, 300
    let got = c.client("subT").unwrap().get_update(false).unwrap().unwrap();
    assert_eq!(got.int("tag"), Some(1));
    rt.shutdown();
}

#[test]
fn push_timed_skips_ticks_without_value() {
    let (rt, _c, s) = world();
    rt.connect(("c", "subT"), ("s", "pubT")).unwrap();
    let _ticket = s.server("pubT").unwrap().start_timed().unwrap();
    rt.run_until(350);
    assert_eq!(rt.counters.get("port.c.subT"), 0);
    rt.shutdown();
}

#[test]
fn push_timed_stop_cuts_deliveries() {
    let (rt, _c, s) = world();
    rt.connect(("c", "subT"), ("s", "pubT")).unwrap();
    let publisher = s.server("pubT").unwrap();
    publisher.publish(a(1)).unwrap();
    let ticket = publisher.start_timed().unwrap();
    rt.run_until(250);
    let delivered = rt.counters.get("port.c.subT");
    assert_eq!(delivered, 2);
    publisher.stop_timed(ticket);
    rt.run_until(600);
    assert_eq!(rt.counters.get("port.c.subT"), delivered);
    // restarting is allowed once stopped
    let _t2 = publisher.start_timed().unwrap();
    rt.run_until(700);
    assert_eq!(rt.counters.get("port.c.subT"), delivered + 1);
    rt.shutdown();
}

#[test]
fn start_timed_twice_rejected() {
    let (_rt, _c, s) = world();
    let publisher = s.server("pubT").unwrap();
    let _ticket = publisher.start_timed().unwrap();
    assert!(matches!(
        publisher.start_timed(),
        Err(PatternError::AlreadyStarted)
    ));
}

#[test]
fn event_single_fires_once() {
    let (rt, c, s) = world();
    let event = s.server("ev").unwrap();
    // threshold test: state tag ≥ param tag
    event
        .register_event_test(|param, state| {
            (state.int("tag") >= param.int("tag")).then(|| b(state.int("tag").unwrap()))
        })
        .unwrap();
    rt.connect(("c", "ev"), ("s", "ev")).unwrap();
    let port = c.client("ev").unwrap();
    let id = port.event_activate(a(5), EventMode::Single).unwrap();
    for state in [3, 4, 7] {
        event.update_event_state(a(state)).unwrap();
    }
    rt.clock.wait_quiescent();
    let n = port.event_get(id, false).unwrap().unwrap();
    assert_eq!(n.int("tag"), Some(7));
    // single mode auto-deactivated server-side: later states fire nothing
    event.update_event_state(a(9)).unwrap();
    rt.clock.wait_quiescent();
    assert_eq!(port.event_get(id, false).unwrap(), None);
    rt.shutdown();
}

#[test]
fn event_continuous_fires_each_time() {
    let (rt, c, s) = world();
    let event = s.server("ev").unwrap();
    event
        .register_event_test(|param, state| {
            (state.int("tag") >= param.int("tag")).then(|| b(state.int("tag").unwrap()))
        })
        .unwrap();
    rt.connect(("c", "ev"), ("s", "ev")).unwrap();
    let port = c.client("ev").unwrap();
    let id = port.event_activate(a(5), EventMode::Continuous).unwrap();
    for state in [3, 7, 9] {
        event.update_event_state(a(state)).unwrap();
    }
    rt.clock.wait_quiescent();
    assert_eq!(port.event_get(id, false).unwrap().unwrap().int("tag"), Some(7));
    assert_eq!(port.event_get(id, false).unwrap().unwrap().int("tag"), Some(9));
    assert_eq!(port.event_get(id, false).unwrap(), None);
    rt.shutdown();
}

#[test]
fn event_deactivate_then_unknown() {
    let (rt, c, s) = world();
    s.server("ev")
        .unwrap()
        .register_event_test(|_, _| None)
        .unwrap();
    rt.connect(("c", "ev"), ("s", "ev")).unwrap();
    let port = c.client("ev").unwrap();
    let id = port.event_activate(a(5), EventMode::Single).unwrap();
    port.event_deactivate(id).unwrap();
    assert_eq!(port.event_get(id, false), Err(PatternError::UnknownId));
    rt.shutdown();
}

#[test]
fn compatibility_rules() {
    let model = parse_model(MODEL).unwrap();
    let client = model.component("Client").unwrap();
    let server = model.component("Server").unwrap();
    assert!(check_compatibility(
        client.port("ask").unwrap(),
        server.port("ask").unwrap()
    ));
    assert!(!check_compatibility(
        client.port("ask").unwrap(),
        server.port("sendIn").unwrap()
    ));
    // push timed vs push newest are distinct patterns
    assert!(!check_compatibility(
        client.port("subT").unwrap(),
        server.port("pub").unwrap()
    ));
}

#[test]
fn incompatible_connect_rejected() {
    let (rt, _c, _s) = world();
    let r = rt.connect(("c", "ask"), ("s", "sendIn"));
    assert!(matches!(r, Err(PatternError::Incompatible(_))));
    rt.shutdown();
}

#[test]
fn queue_full_backpressure() {
    let (rt, c, s) = world();
    // a handler that blocks until released, so requests pile up
    let gate = Arc::new(Mutex::new(()));
    let held = gate.lock().unwrap();
    let gate2 = gate.clone();
    s.server("sendIn")
        .unwrap()
        .register_send_handler(move |_| {
            let _g = gate2.lock().unwrap();
        })
        .unwrap();
    rt.connect(("c", "sendOut"), ("s", "sendIn")).unwrap();
    let port = c.client("sendOut").unwrap();
    let mut full = None;
    for i in 0..64 {
        if let Err(e) = port.send(a(i)) {
            full = Some(e);
            break;
        }
    }
    assert_eq!(full, Some(PatternError::QueueFull));
    drop(held);
    rt.shutdown();
}
