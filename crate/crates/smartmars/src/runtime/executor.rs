//! One worker thread per component. Jobs run serialized in FIFO order and
//! are tracked as clock activity from enqueue to completion, so the virtual
//! clock never advances across an in-flight handler.

use crate::clock::Clock;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

type Job = Box<dyn FnOnce() + Send>;

enum Msg {
    Run(Job),
    Shutdown,
}

pub struct Executor {
    tx: Sender<Msg>,
    clock: Clock,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Executor {
    pub fn new(name: &str, clock: Clock) -> Arc<Self> {
        let (tx, rx) = channel::<Msg>();
        let worker_clock = clock.clone();
        let handle = std::thread::Builder::new()
            .name(format!("exec-{name}"))
            .spawn(move || {
                while let Ok(Msg::Run(job)) = rx.recv() {
                    worker_clock.run_tracked(|| job());
                    worker_clock.leave_activity(); // enqueue-time token
                }
            })
            .expect("spawn executor");
        Arc::new(Executor { tx, clock, worker: Mutex::new(Some(handle)) })
    }

    pub fn enqueue(&self, job: impl FnOnce() + Send + 'static) {
        self.clock.enter_activity();
        if self.tx.send(Msg::Run(Box::new(job))).is_err() {
            self.clock.leave_activity();
        }
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(Msg::Shutdown);
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}
