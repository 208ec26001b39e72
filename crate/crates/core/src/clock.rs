//! Time sources and completion signals.
//!
//! Every component reads time through [`Clock`]. The simulator uses
//! [`VirtualClock`], a discrete-event clock that only advances when a caller
//! waits; live runs use [`WallClock`]. Tool completion and request aborts are
//! both expressed as [`Signal`]s, so the drafting loop is written once for
//! both.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::types::Millis;

/// One-shot event that records the time it fired.
#[derive(Debug, Clone, Default)]
pub struct Signal {
    inner: Arc<(Mutex<Option<Millis>>, Condvar)>,
}

impl Signal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fires at `at`. Later calls are ignored.
    pub fn fire(&self, at: Millis) {
        let (lock, cv) = &*self.inner;
        let mut state = lock.lock().unwrap();
        if state.is_none() {
            *state = Some(at);
            cv.notify_all();
        }
    }

    pub fn fired_at(&self) -> Option<Millis> {
        *self.inner.0.lock().unwrap()
    }

    pub fn is_fired(&self) -> bool {
        self.fired_at().is_some()
    }

    fn wait_timeout(&self, timeout: Option<Duration>) -> Option<Millis> {
        let (lock, cv) = &*self.inner;
        let guard = lock.lock().unwrap();
        match timeout {
            None => *cv.wait_while(guard, |s| s.is_none()).unwrap(),
            Some(t) => *cv.wait_timeout_while(guard, t, |s| s.is_none()).unwrap().0,
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;

    /// Returns a signal that fires when the clock reaches `at_ms`.
    fn schedule(&self, at_ms: Millis) -> Signal;

    /// Blocks until `signal` fires or the clock reaches `deadline`, whichever
    /// comes first. Returns the fire time when the signal wins. A signal that
    /// fires exactly at the deadline loses: work finishing at the same instant
    /// as the signal counts as finished.
    fn wait(&self, signal: Option<&Signal>, deadline: Option<Millis>) -> Option<Millis>;

    fn sleep_until(&self, at_ms: Millis) {
        self.wait(None, Some(at_ms));
    }

    /// Fires anything due now and reports whether `signal` has fired.
    fn poll(&self, signal: &Signal) -> bool {
        if signal.is_fired() {
            return true;
        }
        self.wait(None, Some(self.now_ms()));
        signal.is_fired()
    }
}

#[derive(Debug)]
struct Scheduled {
    at: Millis,
    seq: u64,
    signal: Signal,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug, Default)]
struct VirtualState {
    now: Millis,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
}

/// Discrete-event clock. Scheduled signals fire in (time, insertion) order as
/// time advances; time never moves backwards.
#[derive(Debug, Default)]
pub struct VirtualClock {
    state: Mutex<VirtualState>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(ms: Millis) -> Self {
        let clock = Self::default();
        clock.state.lock().unwrap().now = ms;
        clock
    }

    pub fn pending(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    /// Fires queued signals with time `< limit` (or `<= limit` when
    /// `inclusive`), stopping early once `watch` fires.
    fn drain(state: &mut VirtualState, limit: Millis, inclusive: bool, watch: Option<&Signal>) {
        while let Some(Reverse(head)) = state.queue.peek() {
            let due = if inclusive { head.at <= limit } else { head.at < limit };
            if !due {
                break;
            }
            let Reverse(ev) = state.queue.pop().unwrap();
            state.now = state.now.max(ev.at);
            ev.signal.fire(ev.at);
            if watch.is_some_and(Signal::is_fired) {
                return;
            }
        }
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> Millis {
        self.state.lock().unwrap().now
    }

    fn schedule(&self, at_ms: Millis) -> Signal {
        let mut st = self.state.lock().unwrap();
        let signal = Signal::new();
        let at = at_ms.max(st.now);
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse(Scheduled {
            at,
            seq,
            signal: signal.clone(),
        }));
        signal
    }

    fn wait(&self, signal: Option<&Signal>, deadline: Option<Millis>) -> Option<Millis> {
        let mut st = self.state.lock().unwrap();
        if let Some(t) = signal.and_then(Signal::fired_at) {
            return Some(t);
        }
        match deadline {
            Some(d) => {
                let d = d.max(st.now);
                Self::drain(&mut st, d, false, signal);
                if let Some(t) = signal.and_then(Signal::fired_at) {
                    return Some(t);
                }
                st.now = d;
                // events due exactly now fire, but the caller's work finished first
                Self::drain(&mut st, d, true, None);
                None
            }
            None => {
                Self::drain(&mut st, Millis::MAX, true, signal);
                // a signal nobody scheduled can never fire on a virtual clock
                signal.and_then(Signal::fired_at)
            }
        }
    }
}

/// Real time, in milliseconds since the clock was created.
#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl WallClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> Millis {
        self.origin.elapsed().as_millis() as Millis
    }

    fn schedule(&self, at_ms: Millis) -> Signal {
        let signal = Signal::new();
        let fire = signal.clone();
        let target = self.origin + Duration::from_millis(at_ms);
        std::thread::spawn(move || {
            let now = Instant::now();
            if target > now {
                std::thread::sleep(target - now);
            }
            fire.fire(at_ms);
        });
        signal
    }

    fn wait(&self, signal: Option<&Signal>, deadline: Option<Millis>) -> Option<Millis> {
        let remaining = deadline.map(|d| Duration::from_millis(d.saturating_sub(self.now_ms())));
        match signal {
            Some(s) => {
                let fired = s.wait_timeout(remaining)?;
                match deadline {
                    Some(d) if fired >= d => None,
                    _ => Some(fired),
                }
            }
            None => {
                if let Some(r) = remaining {
                    std::thread::sleep(r);
                }
                None
            }
        }
    }
}
