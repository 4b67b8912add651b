//! Busy-wait compute kernel.
//!
//! In real mode the loop runs in chunks of calibrated size and checks the
//! wall clock between chunks. The calibration is process-wide and is redone
//! when a wait observes a rate more than 5% off.

use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::runtime::{ClockMode, RuntimeHandle};

const CALIBRATION: Duration = Duration::from_millis(100);
const DRIFT: f64 = 0.05;
/// Target wall time of one chunk between clock checks.
const CHUNK_US: f64 = 5.0;

/// Loop iterations per microsecond as `f64` bits; 0 until calibrated.
static RATE: AtomicU64 = AtomicU64::new(0);

fn spin(iterations: u64) {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    for i in 0..iterations {
        x = black_box(x.rotate_left(5) ^ i);
    }
    black_box(x);
}

/// Measures the spin loop for 100 ms and stores the rate.
pub fn calibrate() -> f64 {
    let start = Instant::now();
    let mut done = 0u64;
    let chunk = 10_000;
    while start.elapsed() < CALIBRATION {
        spin(chunk);
        done += chunk;
    }
    let rate = done as f64 / start.elapsed().as_secs_f64() / 1e6;
    RATE.store(rate.to_bits(), Ordering::Relaxed);
    rate
}

/// Current calibrated rate, calibrating on first use.
pub fn iterations_per_us() -> f64 {
    match f64::from_bits(RATE.load(Ordering::Relaxed)) {
        r if r > 0.0 => r,
        _ => calibrate(),
    }
}

/// Spins the calling thread for `d` of wall time.
pub fn busy_wait(d: Duration) {
    if d.is_zero() {
        return;
    }
    let rate = iterations_per_us();
    let chunk = ((rate * CHUNK_US) as u64).max(1);
    let start = Instant::now();
    let mut done = 0u64;
    loop {
        spin(chunk);
        done += chunk;
        if start.elapsed() >= d {
            break;
        }
    }
    let observed = done as f64 / start.elapsed().as_secs_f64() / 1e6;
    if d >= Duration::from_millis(1) && (observed / rate - 1.0).abs() > DRIFT {
        RATE.store(observed.to_bits(), Ordering::Relaxed);
    }
}

/// Occupies the current agent for `d`: exact virtual time, or a calibrated
/// busy wait in real mode.
pub fn compute_kernel(rt: &RuntimeHandle, d: Duration) {
    match rt.clock_mode() {
        ClockMode::Virtual => rt.compute(d),
        ClockMode::Real => busy_wait(d),
    }
}
