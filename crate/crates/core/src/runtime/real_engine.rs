//! Wall-clock execution on OS threads.
//!
//! `workers` threads pull from the shared ready queue. Pausing a task parks
//! the thread running it and hands its agent slot to a spare thread (spawning
//! one if none is idle), so a paused continuation never sits underneath
//! another task's stack. Resuming queues the task; whichever worker dequeues
//! it wakes the parked thread and retires to the spare pool in its place.

use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::clock::as_nanos;
use super::state::State;
use super::trace::TraceKind;
use super::virtual_engine::{panic_message, ShutdownUnwind};
use super::{set_current, RunStats, RuntimeError, Shared, TaskCtx, TaskId, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParkMsg {
    Go,
    Exit,
}

#[derive(Default)]
pub(crate) struct Parker {
    slot: Mutex<Option<ParkMsg>>,
    cv: Condvar,
}

impl Parker {
    pub(crate) fn park(&self) -> ParkMsg {
        let mut s = self.slot.lock().unwrap();
        loop {
            if let Some(m) = s.take() {
                return m;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    pub(crate) fn unpark(&self, msg: ParkMsg) {
        let mut s = self.slot.lock().unwrap();
        if *s != Some(ParkMsg::Exit) {
            *s = Some(msg);
        }
        self.cv.notify_all();
    }
}

enum Job {
    Start(TaskId, super::state::Body),
    Resume(Arc<Parker>),
}

impl Shared {
    pub(crate) fn spawn_worker(self: &Arc<Self>, st: &mut State, parker: Arc<Parker>) {
        let shared = self.clone();
        let jh = std::thread::Builder::new()
            .name("task-worker".into())
            .spawn(move || shared.worker_main(parker))
            .expect("failed to spawn worker thread");
        st.r.threads.push(jh);
        st.r.total_threads += 1;
    }

    fn ensure_started(self: &Arc<Self>) {
        let mut st = self.state.lock().unwrap();
        if st.r.started {
            return;
        }
        st.r.started = true;
        for _ in 0..self.config.workers {
            self.spawn_worker(&mut st, Arc::new(Parker::default()));
        }
        let shared = self.clone();
        let jh = std::thread::Builder::new()
            .name("task-poller".into())
            .spawn(move || shared.poller_main())
            .expect("failed to spawn polling thread");
        st.r.threads.push(jh);
    }

    fn next_job(&self) -> Option<(u64, Job)> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.shutdown {
                return None;
            }
            if let Some((_, id)) = st.ready.pop_first() {
                st.running += 1;
                let job = match st.tasks[id as usize].state {
                    TaskState::Ready => {
                        st.tasks[id as usize].state = TaskState::Running;
                        st.record(TraceKind::Start, id);
                        Job::Start(TaskId(id), st.tasks[id as usize].body.take().unwrap())
                    }
                    TaskState::Paused => {
                        st.paused -= 1;
                        st.tasks[id as usize].state = TaskState::Running;
                        st.record(TraceKind::Resume, id);
                        Job::Resume(st.tasks[id as usize].parker.take().unwrap())
                    }
                    other => unreachable!("task {id} in ready queue while {other:?}"),
                };
                return Some((id, job));
            }
            st = self.work_cv.wait(st).unwrap();
        }
    }

    fn worker_main(self: Arc<Self>, parker: Arc<Parker>) {
        while let Some((id, job)) = self.next_job() {
            match job {
                Job::Start(task, body) => {
                    set_current(Some(TaskCtx {
                        shared: Arc::downgrade(&self),
                        task,
                        handoff: None,
                        parker: Some(parker.clone()),
                    }));
                    let r = panic::catch_unwind(AssertUnwindSafe(body));
                    set_current(None);
                    let mut st = self.state.lock().unwrap();
                    match r {
                        Err(p) if p.is::<ShutdownUnwind>() => return,
                        Err(p) => st.panics.push((task, panic_message(p.as_ref()))),
                        Ok(()) => {}
                    }
                    st.body_end(id);
                    drop(st);
                    self.work_cv.notify_all();
                    self.done_cv.notify_all();
                }
                Job::Resume(target) => {
                    {
                        let mut st = self.state.lock().unwrap();
                        st.r.spares.push(parker.clone());
                    }
                    target.unpark(ParkMsg::Go);
                    if parker.park() == ParkMsg::Exit {
                        return;
                    }
                }
            }
        }
    }

    /// Hands the calling thread's agent slot to a spare (or new) worker.
    /// Called on the thread of a task that just entered `Paused`.
    pub(crate) fn real_release_agent(self: &Arc<Self>) {
        let mut st = self.state.lock().unwrap();
        if let Some(spare) = st.r.spares.pop() {
            spare.unpark(ParkMsg::Go);
        } else {
            self.spawn_worker(&mut st, Arc::new(Parker::default()));
        }
    }

    pub(crate) fn real_park(parker: &Parker) {
        if parker.park() == ParkMsg::Exit {
            panic::resume_unwind(Box::new(ShutdownUnwind));
        }
    }

    fn poller_main(self: Arc<Self>) {
        let period = as_nanos(self.config.poll_period).max(1);
        loop {
            let (timers, poll) = {
                let mut st = self.state.lock().unwrap();
                if st.shutdown {
                    return;
                }
                let now = st.now_ns();
                let mut due = Vec::new();
                while let Some((&key, _)) = st.timers.first_key_value() {
                    if key.0 > now {
                        break;
                    }
                    due.push(st.timers.remove(&key).unwrap());
                }
                let polling = !st.services.is_empty() && st.live > 0;
                let poll_due = polling && now >= st.r.next_poll;
                if poll_due {
                    st.r.next_poll = (now / period + 1) * period;
                }
                if due.is_empty() && !poll_due {
                    let mut wake = if polling { st.r.next_poll } else { now + 50_000_000 };
                    if let Some((&key, _)) = st.timers.first_key_value() {
                        wake = wake.min(key.0);
                    }
                    let wait = Duration::from_nanos(wake.saturating_sub(now).max(1_000));
                    let _ = self.poll_cv.wait_timeout(st, wait).unwrap();
                    continue;
                }
                st.r.timers_firing = due.len();
                (due, poll_due)
            };
            for t in timers {
                t();
                self.state.lock().unwrap().r.timers_firing -= 1;
            }
            if poll {
                self.run_polls();
            }
        }
    }

    pub(crate) fn run_real(self: &Arc<Self>) -> Result<RunStats, RuntimeError> {
        self.ensure_started();
        let t0 = Instant::now();
        let mut st = self.state.lock().unwrap();
        let done0 = st.completed;
        self.poll_cv.notify_all();
        while st.live > 0 {
            let quiet = st.ready.is_empty() && st.running == 0;
            let no_wake_source = st.services.is_empty() && st.timers.is_empty() && st.r.timers_firing == 0;
            if quiet && (st.paused + st.pending == 0 || no_wake_source) {
                return Err(RuntimeError::Deadlock {
                    stuck: st.stuck_tasks(),
                });
            }
            st = self.done_cv.wait_timeout(st, Duration::from_millis(20)).unwrap().0;
        }
        if let Some((task, message)) = st.panics.first().cloned() {
            return Err(RuntimeError::TaskPanicked { task, message });
        }
        Ok(RunStats {
            elapsed: t0.elapsed(),
            tasks_executed: st.completed - done0,
        })
    }

    pub(crate) fn shutdown_real(&self, st: &mut State) -> Vec<std::thread::JoinHandle<()>> {
        for s in st.r.spares.drain(..) {
            s.unpark(ParkMsg::Exit);
        }
        for e in st.tasks.iter_mut() {
            if let Some(p) = e.parker.take() {
                p.unpark(ParkMsg::Exit);
            }
        }
        std::mem::take(&mut st.r.threads)
    }
}
