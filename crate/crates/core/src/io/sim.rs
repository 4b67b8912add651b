//! Processor-sharing device server.
//!
//! Work is measured in nanoseconds of service at the device's full rate. With
//! `k` requests active each one progresses at rate `1/k`, so aggregate
//! throughput never exceeds the rated bandwidth.

use std::collections::VecDeque;

use super::model::DeviceModel;

const DONE_EPS: f64 = 1e-6;
/// Slack (ns) within which a service end counts as reached.
const TIME_EPS: f64 = 1e-3;

/// Integer nanosecond at or just after `t`, never before `t - TIME_EPS`.
pub(crate) fn ns_ceil(t: f64) -> u64 {
    (t - TIME_EPS / 10.0).ceil().max(0.0) as u64
}

#[derive(Debug, Clone)]
struct Job {
    id: u64,
    remaining: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Finished {
    pub id: u64,
    /// Service end in device time (ns); base latency not included.
    pub at: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SimDevice {
    max_depth: usize,
    clock: f64,
    active: Vec<Job>,
    waiting: VecDeque<Job>,
}

impl SimDevice {
    pub fn new(model: &DeviceModel) -> Self {
        Self {
            max_depth: model.max_depth,
            clock: 0.0,
            active: Vec::new(),
            waiting: VecDeque::new(),
        }
    }

    /// Adds a job at time `now` (ns). Returns jobs that finished up to `now`.
    pub fn submit(&mut self, id: u64, work_ns: f64, now: f64) -> Vec<Finished> {
        let mut out = self.advance(now);
        self.waiting.push_back(Job { id, remaining: work_ns });
        self.admit();
        // Zero-work jobs finish on the spot.
        out.extend(self.advance(now));
        out
    }

    fn admit(&mut self) {
        while self.active.len() < self.max_depth {
            match self.waiting.pop_front() {
                Some(j) => self.active.push(j),
                None => break,
            }
        }
    }

    /// Time of the next service completion, if any job is active.
    pub fn next_service_end(&self) -> Option<f64> {
        let k = self.active.len() as f64;
        self.active
            .iter()
            .map(|j| j.remaining)
            .min_by(f64::total_cmp)
            .map(|r| self.clock + r.max(0.0) * k)
    }

    /// Runs the server forward to time `t` (ns).
    pub fn advance(&mut self, t: f64) -> Vec<Finished> {
        let mut out = Vec::new();
        loop {
            self.admit();
            let Some(end) = self.next_service_end() else {
                self.clock = self.clock.max(t);
                return out;
            };
            let k = self.active.len() as f64;
            if end <= t + TIME_EPS {
                // Step by work, not by `end - clock`: late in a long run the
                // time difference can round to zero.
                let step = self
                    .active
                    .iter()
                    .map(|j| j.remaining)
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0);
                self.clock = end;
                self.active.retain_mut(|j| {
                    j.remaining -= step;
                    if j.remaining <= DONE_EPS {
                        out.push(Finished { id: j.id, at: end });
                        false
                    } else {
                        true
                    }
                });
            } else {
                if t > self.clock {
                    let step = (t - self.clock) / k;
                    for j in &mut self.active {
                        j.remaining -= step;
                    }
                    self.clock = t;
                }
                return out;
            }
        }
    }

    /// Service end of job `id` if nothing else is submitted meanwhile.
    pub fn predict(&self, id: u64) -> Option<f64> {
        if !self.active.iter().chain(&self.waiting).any(|j| j.id == id) {
            return None;
        }
        let mut probe = self.clone();
        loop {
            let t = probe.next_service_end()?;
            if let Some(f) = probe.advance(t).into_iter().find(|f| f.id == id) {
                return Some(f.at);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(depth: usize) -> SimDevice {
        SimDevice::new(&DeviceModel {
            max_depth: depth,
            ..DeviceModel::optane_905p()
        })
    }

    #[test]
    fn equal_jobs_share_the_rate() {
        let mut d = dev(4);
        d.submit(1, 100.0, 0.0);
        d.submit(2, 100.0, 0.0);
        assert_eq!(d.predict(1), Some(200.0));
        let f = d.advance(1000.0);
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|f| (f.at - 200.0).abs() < 1e-9));
    }

    #[test]
    fn late_arrival_slows_the_incumbent() {
        let mut d = dev(4);
        d.submit(1, 100.0, 0.0);
        d.submit(2, 100.0, 50.0);
        // Job 1: 50 alone, then 50 more work at half rate.
        assert!((d.predict(1).unwrap() - 150.0).abs() < 1e-9);
        assert!((d.predict(2).unwrap() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn long_runs_finish_every_job() {
        // Past 2^34 ns one ulp of the clock exceeds the completion tolerance.
        let mut d = dev(4);
        let mut t = 1.9e10;
        let mut done = 0;
        for id in 0..2000u64 {
            done += d.submit(id, 1607.5 + (id % 7) as f64 * 0.3, t).len();
            t += 401.3;
        }
        done += d.advance(t + 1e7).len();
        assert_eq!(done, 2000);
    }

    #[test]
    fn depth_limit_queues_fifo() {
        let mut d = dev(1);
        for id in 0..3 {
            d.submit(id, 10.0, 0.0);
        }
        let f = d.advance(100.0);
        let ids: Vec<u64> = f.iter().map(|f| f.id).collect();
        assert_eq!(ids, [0, 1, 2]);
        assert!((f[2].at - 30.0).abs() < 1e-9);
    }
}
