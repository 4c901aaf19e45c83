//! Blocking primitives that cooperate with the clock's activity tracking.

use super::PatternError;
use crate::clock::{thread_is_tracked, Clock};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

struct CellState<T> {
    result: Option<Result<T, PatternError>>,
    /// Set when a poster completed the cell while a tracked waiter was
    /// blocked; the poster incremented activity on the waiter's behalf.
    handoff: bool,
    tracked_waiter: bool,
}

/// One-shot completion cell for a single blocked call. Completion may come
/// from an answer, a timeout timer, or wiring housekeeping (disconnect,
/// service deactivation); the first writer wins.
pub struct WaitCell<T> {
    m: Mutex<CellState<T>>,
    cv: Condvar,
}

impl<T> WaitCell<T> {
    pub fn new() -> Arc<Self> {
        Arc::new(WaitCell {
            m: Mutex::new(CellState { result: None, handoff: false, tracked_waiter: false }),
            cv: Condvar::new(),
        })
    }

    /// Complete the cell. Returns true if this call won the race.
    pub fn post(&self, clock: &Clock, result: Result<T, PatternError>) -> bool {
        let mut st = self.m.lock().unwrap();
        if st.result.is_some() {
            return false;
        }
        st.result = Some(result);
        if st.tracked_waiter {
            // keep the activity count from dipping to zero between our
            // notify and the waiter resuming
            clock.enter_activity();
            st.handoff = true;
        }
        self.cv.notify_all();
        true
    }

    pub fn is_done(&self) -> bool {
        self.m.lock().unwrap().result.is_some()
    }

    /// Take the result without blocking.
    pub fn try_take(&self) -> Option<Result<T, PatternError>> {
        self.m.lock().unwrap().result.take()
    }

    /// Block until completed or `deadline_ms` (clock time) passes.
    /// On a virtual clock the caller must have armed a wake timer for the
    /// deadline via [`WaitCell::arm_timeout`].
    pub fn wait(self: &Arc<Self>, clock: &Clock, deadline_ms: Option<u64>) -> Result<T, PatternError> {
        let tracked = thread_is_tracked();
        let mut st = self.m.lock().unwrap();
        let mut left = false;
        if tracked && st.result.is_none() {
            st.tracked_waiter = true;
            clock.leave_activity();
            left = true;
        }
        loop {
            if st.result.is_some() {
                break;
            }
            if clock.is_virtual() {
                if let Some(d) = deadline_ms {
                    if clock.now_ms() >= d {
                        st.result = Some(Err(PatternError::Timeout));
                        break;
                    }
                }
                st = self.cv.wait(st).unwrap();
            } else {
                let now = clock.now_ms();
                match deadline_ms {
                    Some(d) if now >= d => {
                        st.result = Some(Err(PatternError::Timeout));
                        break;
                    }
                    Some(d) => {
                        let (g, _) = self
                            .cv
                            .wait_timeout(st, Duration::from_millis(d - now))
                            .unwrap();
                        st = g;
                    }
                    None => st = self.cv.wait(st).unwrap(),
                }
            }
        }
        if left {
            st.tracked_waiter = false;
            if st.handoff {
                st.handoff = false; // poster already re-entered for us
            } else {
                clock.enter_activity();
            }
        }
        st.result.take().expect("completed cell")
    }

    /// Arm a virtual-clock timer that completes this cell with `Timeout` at
    /// `deadline_ms`. No-op on the real clock (wait uses real timeouts).
    pub fn arm_timeout(self: &Arc<Self>, clock: &Clock, deadline_ms: u64)
    where
        T: Send + 'static,
    {
        if !clock.is_virtual() {
            return;
        }
        let cell = Arc::downgrade(self);
        clock.schedule(
            deadline_ms,
            Box::new(move |clk| {
                if let Some(cell) = cell.upgrade() {
                    cell.post(clk, Err(PatternError::Timeout));
                }
                None
            }),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    #[test]
    fn post_then_wait_returns_value() {
        let clock = Clock::virtual_clock();
        let cell: Arc<WaitCell<u32>> = WaitCell::new();
        assert!(cell.post(&clock, Ok(7)));
        assert!(!cell.post(&clock, Ok(8)));
        assert_eq!(cell.wait(&clock, None).unwrap(), 7);
    }

    #[test]
    fn virtual_timeout_fires_via_advance() {
        let clock = Clock::virtual_clock();
        let cell: Arc<WaitCell<u32>> = WaitCell::new();
        cell.arm_timeout(&clock, 50);
        let done = Arc::new(AtomicBool::new(false));
        let d2 = done.clone();
        let (cl, ce) = (clock.clone(), cell.clone());
        let h = std::thread::spawn(move || {
            let r = ce.wait(&cl, Some(50));
            d2.store(true, Ordering::SeqCst);
            r
        });
        // not completed while time stands still
        std::thread::sleep(Duration::from_millis(20));
        assert!(!done.load(Ordering::SeqCst));
        clock.advance_to(50);
        assert_eq!(h.join().unwrap(), Err(PatternError::Timeout));
        assert_eq!(clock.now_ms(), 50);
    }

    #[test]
    fn real_timeout_elapses() {
        let clock = Clock::real();
        let cell: Arc<WaitCell<u32>> = WaitCell::new();
        let deadline = clock.now_ms() + 30;
        assert_eq!(cell.wait(&clock, Some(deadline)), Err(PatternError::Timeout));
        assert!(clock.now_ms() >= deadline);
    }
}
