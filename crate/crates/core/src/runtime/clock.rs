//! Time sources shared by the runtime and the I/O backends.
//!
//! Everything that needs to wait for "time to pass" goes through [`Clock`], so
//! the same backend code runs against wall-clock time, against a runtime's
//! virtual clock (where waiting yields the current task to the discrete-event
//! scheduler), or against a [`ManualClock`] that simply jumps forward.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

static NEXT_CELL_ID: AtomicU64 = AtomicU64::new(1);

/// A notification point that waiters can block on.
///
/// Waiters snapshot [`WaitCell::generation`] before checking their condition
/// and pass it to [`Clock::wait`]; a notification that happens in between is
/// never lost because it bumps the generation.
#[derive(Debug)]
pub struct WaitCell {
    id: u64,
    generation: Mutex<u64>,
    cv: Condvar,
}

impl Default for WaitCell {
    fn default() -> Self {
        Self::new()
    }
}

impl WaitCell {
    pub fn new() -> Self {
        Self {
            id: NEXT_CELL_ID.fetch_add(1, Ordering::Relaxed),
            generation: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn generation(&self) -> u64 {
        *self.generation.lock().unwrap()
    }

    /// Bumps the generation and wakes threads blocked in real time.
    pub(crate) fn bump(&self) {
        let mut g = self.generation.lock().unwrap();
        *g += 1;
        self.cv.notify_all();
    }

    /// Blocks the calling thread (real time) until the generation differs
    /// from `seen` or `timeout` elapses.
    pub(crate) fn block_real(&self, seen: u64, timeout: Option<Duration>) {
        let start = Instant::now();
        let mut g = self.generation.lock().unwrap();
        while *g == seen {
            match timeout {
                Some(t) => {
                    let spent = start.elapsed();
                    if spent >= t {
                        return;
                    }
                    g = self.cv.wait_timeout(g, t - spent).unwrap().0;
                }
                None => g = self.cv.wait(g).unwrap(),
            }
        }
    }
}

/// Monotonic time source with blocking waits.
///
/// Times are offsets from the clock's own epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;

    /// Blocks the calling context until `cell` is notified past generation
    /// `seen`, or until `deadline` is reached. May return spuriously; callers
    /// re-check their condition.
    fn wait(&self, cell: &WaitCell, seen: u64, deadline: Option<Duration>);

    fn notify(&self, cell: &WaitCell);

    fn sleep(&self, d: Duration) {
        let cell = WaitCell::new();
        let seen = cell.generation();
        let deadline = self.now() + d;
        while self.now() < deadline {
            self.wait(&cell, seen, Some(deadline));
        }
    }
}

/// Wall-clock time measured from construction.
#[derive(Debug)]
pub struct RealClock {
    epoch: Instant,
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl RealClock {
    pub fn new() -> Self {
        Self { epoch: Instant::now() }
    }

    pub fn starting_at(epoch: Instant) -> Self {
        Self { epoch }
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.epoch.elapsed()
    }

    fn wait(&self, cell: &WaitCell, seen: u64, deadline: Option<Duration>) {
        let timeout = deadline.map(|d| d.saturating_sub(self.now()));
        cell.block_real(seen, timeout);
    }

    fn notify(&self, cell: &WaitCell) {
        cell.bump();
    }
}

/// Single-actor virtual clock: waiting with a deadline jumps time forward.
///
/// Used to drive the simulated device outside of a runtime, e.g. for device
/// profiling, where the caller is the only actor and nothing else can happen
/// while it waits.
#[derive(Debug, Default)]
pub struct ManualClock {
    now_ns: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance_to(&self, t: Duration) {
        self.now_ns.fetch_max(as_nanos(t), Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.now_ns.load(Ordering::SeqCst))
    }

    fn wait(&self, cell: &WaitCell, seen: u64, deadline: Option<Duration>) {
        match deadline {
            Some(d) => self.advance_to(d),
            // Nothing in virtual time can wake us; give real-time producers
            // (pool delegates) a chance instead of spinning.
            None => cell.block_real(seen, Some(Duration::from_millis(1))),
        }
    }

    fn notify(&self, cell: &WaitCell) {
        cell.bump();
    }
}

pub(crate) fn as_nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_jumps_to_deadline() {
        let clock = ManualClock::new();
        clock.sleep(Duration::from_micros(392));
        assert_eq!(clock.now(), Duration::from_micros(392));
        clock.advance_to(Duration::from_micros(10));
        assert_eq!(clock.now(), Duration::from_micros(392));
    }

    #[test]
    fn notification_before_wait_is_not_lost() {
        let clock = RealClock::new();
        let cell = WaitCell::new();
        let seen = cell.generation();
        clock.notify(&cell);
        let t0 = Instant::now();
        clock.wait(&cell, seen, Some(clock.now() + Duration::from_secs(5)));
        assert!(t0.elapsed() < Duration::from_secs(1));
    }
}
