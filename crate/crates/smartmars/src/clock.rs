//! Virtual/real clock. The virtual clock advances only explicitly and fires
//! registered timers in deterministic (deadline, registration) order. Between
//! timer fires it waits until all tracked work has quiesced, which makes
//! multi-threaded runs reproducible.

use std::cell::Cell;
use std::collections::{BinaryHeap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

pub type TimerId = u64;

/// A timer callback; returning `Some(at)` reschedules it for `at`.
pub type TimerFn = Box<dyn FnMut(&Clock) -> Option<u64> + Send>;

struct TimerEntry {
    at: u64,
    id: TimerId,
    action: TimerFn,
}

impl PartialEq for TimerEntry {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.id == other.id
    }
}
impl Eq for TimerEntry {}
impl PartialOrd for TimerEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TimerEntry {
    // BinaryHeap is a max-heap; invert so the earliest deadline pops first.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (other.at, other.id).cmp(&(self.at, self.id))
    }
}

struct VState {
    now: u64,
    stopped: bool,
    activity: usize,
    timers: BinaryHeap<TimerEntry>,
    cancelled: HashSet<TimerId>,
}

enum Mode {
    Virtual,
    Real(Instant),
}

struct ClockInner {
    mode: Mode,
    state: Mutex<VState>,
    quiesce_cv: Condvar,
    timer_cv: Condvar,
    next_id: AtomicU64,
}

thread_local! {
    static TRACKED: Cell<bool> = const { Cell::new(false) };
}

/// True when the current thread's work is accounted for by the clock's
/// activity tracker (executor jobs, tracked actors).
pub fn thread_is_tracked() -> bool {
    TRACKED.with(|t| t.get())
}

#[derive(Clone)]
pub struct Clock {
    inner: Arc<ClockInner>,
}

impl Clock {
    pub fn virtual_clock() -> Self {
        Self::with_mode(Mode::Virtual)
    }

    pub fn real() -> Self {
        Self::with_mode(Mode::Real(Instant::now()))
    }

    fn with_mode(mode: Mode) -> Self {
        Clock {
            inner: Arc::new(ClockInner {
                mode,
                state: Mutex::new(VState {
                    now: 0,
                    stopped: false,
                    activity: 0,
                    timers: BinaryHeap::new(),
                    cancelled: HashSet::new(),
                }),
                quiesce_cv: Condvar::new(),
                timer_cv: Condvar::new(),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.inner.mode, Mode::Virtual)
    }

    pub fn now_ms(&self) -> u64 {
        match self.inner.mode {
            Mode::Virtual => self.inner.state.lock().unwrap().now,
            Mode::Real(base) => base.elapsed().as_millis() as u64,
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.inner.state.lock().unwrap().stopped
    }

    /// Stop the clock: pending timers never fire again and helper threads
    /// wind down.
    pub fn stop(&self) {
        let mut st = self.inner.state.lock().unwrap();
        st.stopped = true;
        self.inner.timer_cv.notify_all();
        self.inner.quiesce_cv.notify_all();
    }

    pub(crate) fn enter_activity(&self) {
        let mut st = self.inner.state.lock().unwrap();
        st.activity += 1;
    }

    pub(crate) fn leave_activity(&self) {
        let mut st = self.inner.state.lock().unwrap();
        debug_assert!(st.activity > 0);
        st.activity -= 1;
        if st.activity == 0 {
            self.inner.quiesce_cv.notify_all();
            self.inner.timer_cv.notify_all();
        }
    }

    /// Run `f` as tracked work: the virtual clock will not advance past a
    /// timer while `f` is active (unless `f` blocks in a clock-aware wait).
    pub fn run_tracked<R>(&self, f: impl FnOnce() -> R) -> R {
        let was = thread_is_tracked();
        if !was {
            self.enter_activity();
            TRACKED.with(|t| t.set(true));
        }
        let r = f();
        if !was {
            TRACKED.with(|t| t.set(false));
            self.leave_activity();
        }
        r
    }

    /// Block until no tracked work is running.
    pub fn wait_quiescent(&self) {
        let mut st = self.inner.state.lock().unwrap();
        while st.activity > 0 && !st.stopped {
            st = self.inner.quiesce_cv.wait(st).unwrap();
        }
    }

    /// Register a timer. On the real clock a helper thread drives it.
    pub fn schedule(&self, at_ms: u64, action: TimerFn) -> TimerId {
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        match self.inner.mode {
            Mode::Virtual => {
                let mut st = self.inner.state.lock().unwrap();
                st.timers.push(TimerEntry { at: at_ms, id, action });
                self.inner.timer_cv.notify_all();
            }
            Mode::Real(_) => {
                let clock = self.clone();
                let mut action = action;
                let mut at = at_ms;
                std::thread::spawn(move || loop {
                    let now = clock.now_ms();
                    if at > now {
                        std::thread::sleep(Duration::from_millis(at - now));
                    }
                    {
                        let st = clock.inner.state.lock().unwrap();
                        if st.stopped || st.cancelled.contains(&id) {
                            return;
                        }
                    }
                    match action(&clock) {
                        Some(next) => at = next,
                        None => return,
                    }
                });
            }
        }
        id
    }

    pub fn cancel(&self, id: TimerId) {
        let mut st = self.inner.state.lock().unwrap();
        st.cancelled.insert(id);
    }

    pub fn next_timer_at(&self) -> Option<u64> {
        let mut st = self.inner.state.lock().unwrap();
        loop {
            let cancelled = match st.timers.peek() {
                Some(e) => st.cancelled.contains(&e.id),
                None => return None,
            };
            if cancelled {
                let e = st.timers.pop().unwrap();
                st.cancelled.remove(&e.id);
            } else {
                return st.timers.peek().map(|e| e.at);
            }
        }
    }

    /// Fire the next due timer if its deadline is <= `limit`.
    /// Returns false when nothing (further) is due.
    fn fire_next(&self, limit: u64) -> bool {
        let entry = {
            let mut st = self.inner.state.lock().unwrap();
            loop {
                let (at, id) = match st.timers.peek() {
                    None => return false,
                    Some(e) => (e.at, e.id),
                };
                if st.cancelled.contains(&id) {
                    st.timers.pop();
                    st.cancelled.remove(&id);
                    continue;
                }
                if at > limit {
                    return false;
                }
                let e = st.timers.pop().unwrap();
                st.now = st.now.max(e.at);
                break e;
            }
        };
        let TimerEntry { id, mut action, .. } = entry;
        if let Some(next) = action(self) {
            let mut st = self.inner.state.lock().unwrap();
            if !st.cancelled.remove(&id) && !st.stopped {
                st.timers.push(TimerEntry { at: next, id, action });
            }
        }
        true
    }

    /// Advance the virtual clock to `t`, firing due timers in order and
    /// waiting for tracked work to quiesce between fires.
    pub fn advance_to(&self, t: u64) {
        assert!(self.is_virtual(), "advance_to is only valid on a virtual clock");
        loop {
            self.wait_quiescent();
            if self.is_stopped() || !self.fire_next(t) {
                break;
            }
        }
        self.wait_quiescent();
        let mut st = self.inner.state.lock().unwrap();
        st.now = st.now.max(t);
    }

    pub fn advance(&self, delta_ms: u64) {
        let t = self.now_ms() + delta_ms;
        self.advance_to(t);
    }

    /// Spawn a driver thread that advances the virtual clock to the next
    /// timer whenever the system is quiescent. Runs until `stop()`.
    pub fn auto_advance(&self) {
        assert!(self.is_virtual());
        let clock = self.clone();
        std::thread::spawn(move || loop {
            {
                let st = clock.inner.state.lock().unwrap();
                if st.stopped {
                    return;
                }
                if st.activity > 0 {
                    let _st = clock.inner.quiesce_cv.wait(st).unwrap();
                    continue;
                }
                if st.timers.is_empty() {
                    let _st = clock.inner.timer_cv.wait(st).unwrap();
                    continue;
                }
            }
            clock.fire_next(u64::MAX);
        });
    }
}
