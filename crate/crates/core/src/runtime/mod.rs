//! Dependency-aware tasking runtime.
//!
//! Tasks declare the resources they read and write; the runtime derives the
//! dependency graph from spawn order and runs ready tasks FIFO on a fixed
//! number of execution agents. On top of plain tasking it offers the three
//! hooks an asynchronous I/O layer needs:
//!
//! * pausing the current task and resuming it later from any context,
//! * per-task event counters that hold back completion after the body exits,
//! * polling services invoked periodically by the runtime.
//!
//! Two engines share this API. [`ClockMode::Virtual`] runs a deterministic
//! discrete-event simulation in which compute and waits consume virtual time;
//! [`ClockMode::Real`] runs bodies on OS threads against the wall clock.

mod clock;
mod real_engine;
mod state;
pub mod trace;
mod virtual_engine;

use std::cell::RefCell;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

pub(crate) use clock::as_nanos;
pub use clock::{Clock, ManualClock, RealClock, WaitCell};

use real_engine::Parker;
use state::{Event, ServiceEntry, State};
use trace::{TraceEvent, TraceKind};
use virtual_engine::{Handoff, Yield};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task {}", self.0)
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "resource {}", self.0)
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "service {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskState {
    Created,
    Ready,
    Running,
    /// Suspended, or queued for resumption after a resume.
    Paused,
    BodyFinishedEventsPending,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClockMode {
    Real,
    Virtual,
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub workers: usize,
    pub clock_mode: ClockMode,
    pub poll_period: Duration,
    /// Record a scheduler trace (see [`trace`]).
    pub trace: bool,
    /// Virtual mode only: fail with a deadlock error when no task makes
    /// progress for this long in virtual time.
    pub stall_timeout: Duration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            clock_mode: ClockMode::Real,
            poll_period: Duration::from_micros(100),
            trace: false,
            stall_timeout: Duration::from_secs(600),
        }
    }
}

impl RuntimeConfig {
    pub fn new(workers: usize, clock_mode: ClockMode) -> Self {
        Self {
            workers,
            clock_mode,
            ..Default::default()
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    pub fn with_poll_period(mut self, period: Duration) -> Self {
        self.poll_period = period;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub elapsed: Duration,
    pub tasks_executed: u64,
}

/// One-shot capability to resume a paused task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResumeHandle {
    task: TaskId,
    epoch: u64,
}

impl ResumeHandle {
    pub fn task(&self) -> TaskId {
        self.task
    }
}

/// Snapshot of execution contexts, for leak audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContextCensus {
    pub paused_tasks: usize,
    /// Contexts currently bound to an unfinished task body.
    pub bound_contexts: usize,
    /// Idle contexts kept for reuse.
    pub pooled_contexts: usize,
    /// OS threads created so far for task bodies.
    pub threads_created: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StuckTask {
    pub task: TaskId,
    pub state: TaskState,
    pub event_count: u64,
    pub resources: Vec<ResourceId>,
}

fn describe_stuck(stuck: &[StuckTask]) -> String {
    let mut parts = Vec::new();
    for s in stuck.iter().take(16) {
        let res: Vec<String> = s.resources.iter().map(|r| r.0.to_string()).collect();
        parts.push(format!(
            "{} ({:?}, events={}, resources=[{}])",
            s.task,
            s.state,
            s.event_count,
            res.join(",")
        ));
    }
    if stuck.len() > 16 {
        parts.push(format!("... {} more", stuck.len() - 16));
    }
    parts.join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid runtime configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown {0}")]
    UnknownResource(ResourceId),
    #[error("unknown {0}")]
    UnknownTask(TaskId),
    #[error("unknown or already unregistered {0}")]
    UnknownService(ServiceId),
    #[error("runtime has been shut down")]
    ShutDown,
    #[error("not called from a task body")]
    NoTaskContext,
    #[error("{0} was already resumed with this handle")]
    AlreadyResumed(TaskId),
    #[error("{0} is not paused")]
    NotPaused(TaskId),
    #[error("{0} has already completed")]
    TaskCompleted(TaskId),
    #[error("{0} cannot register events after its body exited")]
    IncrementAfterBodyExit(TaskId),
    #[error("{0} has not started")]
    TaskNotStarted(TaskId),
    #[error("event count must be positive")]
    InvalidCount,
    #[error("event counter underflow on {task}: count {count}, decrement {requested}")]
    CounterUnderflow { task: TaskId, count: u64, requested: u64 },
    #[error("deadlock: no runnable task and no pending wake source; stuck: {}", describe_stuck(.stuck))]
    Deadlock { stuck: Vec<StuckTask> },
    #[error("{task} panicked: {message}")]
    TaskPanicked { task: TaskId, message: String },
    #[error("run_to_completion is already running")]
    AlreadyRunning,
}

pub(crate) struct Shared {
    config: RuntimeConfig,
    state: Mutex<State>,
    work_cv: Condvar,
    done_cv: Condvar,
    poll_cv: Condvar,
}

#[derive(Clone)]
pub(crate) struct TaskCtx {
    shared: Weak<Shared>,
    task: TaskId,
    handoff: Option<Arc<Handoff>>,
    parker: Option<Arc<Parker>>,
}

thread_local! {
    static CURRENT: RefCell<Option<TaskCtx>> = const { RefCell::new(None) };
}

pub(crate) fn set_current(ctx: Option<TaskCtx>) {
    CURRENT.with(|c| *c.borrow_mut() = ctx);
}

fn current_ctx() -> Option<TaskCtx> {
    CURRENT.with(|c| c.borrow().clone())
}

impl Shared {
    fn is_virtual(&self) -> bool {
        self.config.clock_mode == ClockMode::Virtual
    }

    /// The calling thread's task context, if it belongs to this runtime.
    fn ctx(self: &Arc<Self>) -> Option<TaskCtx> {
        current_ctx().filter(|c| std::ptr::eq(c.shared.as_ptr(), Arc::as_ptr(self)))
    }

    fn wake_all(&self) {
        self.work_cv.notify_all();
        self.done_cv.notify_all();
        self.poll_cv.notify_all();
    }

    /// Invokes every active polling service once. Returns the summed
    /// progress counts.
    pub(crate) fn run_polls(&self) -> usize {
        let services: Vec<ServiceEntry> = self.state.lock().unwrap().services.clone();
        let mut total = 0;
        for s in services {
            let mut cb = s.callback.lock().unwrap();
            if !s.active.load(Ordering::SeqCst) {
                continue;
            }
            IN_SERVICE.with(|v| v.borrow_mut().push(s.id.0));
            total += (*cb)();
            IN_SERVICE.with(|v| v.borrow_mut().pop());
            s.invocations.fetch_add(1, Ordering::Relaxed);
            drop(cb);
            self.state.lock().unwrap().record(TraceKind::Poll, s.id.0);
        }
        total
    }
}

/// Owner of a runtime instance. Dropping it shuts the runtime down.
pub struct Runtime {
    handle: RuntimeHandle,
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        if config.workers == 0 {
            return Err(RuntimeError::InvalidConfig("workers must be at least 1".into()));
        }
        if config.poll_period.is_zero() {
            return Err(RuntimeError::InvalidConfig("poll period must be positive".into()));
        }
        let state = State::new(config.clock_mode == ClockMode::Virtual, config.workers, config.trace);
        Ok(Self {
            handle: RuntimeHandle {
                shared: Arc::new(Shared {
                    config,
                    state: Mutex::new(state),
                    work_cv: Condvar::new(),
                    done_cv: Condvar::new(),
                    poll_cv: Condvar::new(),
                }),
            },
        })
    }

    pub fn handle(&self) -> RuntimeHandle {
        self.handle.clone()
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.handle.shared.config
    }

    /// Runs until every spawned task has completed.
    ///
    /// In virtual mode `elapsed` is the virtual time consumed by this call.
    pub fn run_to_completion(&self) -> Result<RunStats, RuntimeError> {
        let shared = &self.handle.shared;
        if shared.state.lock().unwrap().shutdown {
            return Err(RuntimeError::ShutDown);
        }
        if shared.is_virtual() {
            shared.run_virtual()
        } else {
            shared.run_real()
        }
    }

    /// Stops all agents and tears down suspended tasks. Idempotent.
    pub fn shutdown(&self) {
        let shared = &self.handle.shared;
        let threads = {
            let mut st = shared.state.lock().unwrap();
            if st.shutdown {
                return;
            }
            st.shutdown = true;
            let mut threads = shared.shutdown_virtual(&mut st);
            threads.extend(shared.shutdown_real(&mut st));
            // Break handle cycles held by unstarted bodies, timers and services.
            for e in st.tasks.iter_mut() {
                e.body = None;
            }
            st.timers.clear();
            for s in st.services.drain(..) {
                s.active.store(false, Ordering::SeqCst);
            }
            threads
        };
        shared.wake_all();
        let me = std::thread::current().id();
        let grace = Instant::now() + Duration::from_secs(1);
        for t in threads {
            if t.thread().id() == me {
                continue;
            }
            while !t.is_finished() && Instant::now() < grace {
                std::thread::sleep(Duration::from_millis(1));
            }
            if t.is_finished() {
                let _ = t.join();
            }
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Cloneable access to a runtime, usable from task bodies, polling callbacks
/// and other threads.
#[derive(Clone)]
pub struct RuntimeHandle {
    shared: Arc<Shared>,
}

impl fmt::Debug for RuntimeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuntimeHandle")
            .field("clock_mode", &self.shared.config.clock_mode)
            .field("workers", &self.shared.config.workers)
            .finish()
    }
}

/// Non-owning reference to a runtime, for callbacks stored inside it.
#[derive(Clone)]
pub struct WeakRuntimeHandle {
    shared: Weak<Shared>,
}

impl WeakRuntimeHandle {
    pub fn upgrade(&self) -> Option<RuntimeHandle> {
        self.shared.upgrade().map(|shared| RuntimeHandle { shared })
    }
}

impl RuntimeHandle {
    pub fn downgrade(&self) -> WeakRuntimeHandle {
        WeakRuntimeHandle {
            shared: Arc::downgrade(&self.shared),
        }
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.shared.config.clock_mode
    }

    pub fn workers(&self) -> usize {
        self.shared.config.workers
    }

    pub fn poll_period(&self) -> Duration {
        self.shared.config.poll_period
    }

    pub fn register_resource(&self) -> ResourceId {
        self.shared.state.lock().unwrap().register_resource()
    }

    pub fn spawn_task<F>(&self, body: F, reads: &[ResourceId], writes: &[ResourceId]) -> Result<TaskId, RuntimeError>
    where
        F: FnOnce() + Send + 'static,
    {
        let id = self.shared.state.lock().unwrap().spawn(Box::new(body), reads, writes)?;
        self.shared.work_cv.notify_all();
        Ok(id)
    }

    pub fn current_task(&self) -> Result<TaskId, RuntimeError> {
        self.shared.ctx().map(|c| c.task).ok_or(RuntimeError::NoTaskContext)
    }

    pub fn task_state(&self, task: TaskId) -> Result<TaskState, RuntimeError> {
        Ok(self.shared.state.lock().unwrap().entry(task)?.state)
    }

    pub fn event_count(&self, task: TaskId) -> Result<u64, RuntimeError> {
        Ok(self.shared.state.lock().unwrap().entry(task)?.event_count)
    }

    pub fn census(&self) -> ContextCensus {
        let st = self.shared.state.lock().unwrap();
        if st.virtual_mode {
            ContextCensus {
                paused_tasks: st.paused,
                bound_contexts: st.v.assigned_contexts,
                pooled_contexts: st.v.pool.len(),
                threads_created: st.v.threads.len(),
            }
        } else {
            ContextCensus {
                paused_tasks: st.paused,
                bound_contexts: st.tasks.iter().filter(|e| e.parker.is_some()).count() + st.running,
                pooled_contexts: st.r.spares.len(),
                threads_created: st.r.total_threads,
            }
        }
    }

    pub fn trace_events(&self) -> Vec<TraceEvent> {
        self.shared.state.lock().unwrap().trace.clone().unwrap_or_default()
    }

    /// Claims a named, once-per-runtime slot. Returns false if already taken.
    pub fn claim_extension(&self, name: &'static str) -> bool {
        self.shared.state.lock().unwrap().extensions.insert(name)
    }

    pub fn release_extension(&self, name: &'static str) {
        self.shared.state.lock().unwrap().extensions.remove(name);
    }

    /// Suspends the calling task and frees its agent.
    ///
    /// `register` receives the task's resume handle before the task actually
    /// suspends; it may store it or even redeem it immediately. The call
    /// returns once the task has been resumed and rescheduled.
    pub fn pause_current_task<F>(&self, register: F) -> Result<(), RuntimeError>
    where
        F: FnOnce(ResumeHandle),
    {
        let ctx = self.shared.ctx().ok_or(RuntimeError::NoTaskContext)?;
        let handle = {
            let mut st = self.shared.state.lock().unwrap();
            if st.shutdown {
                return Err(RuntimeError::ShutDown);
            }
            let e = st.entry_mut(ctx.task)?;
            e.pause_epoch += 1;
            e.state = TaskState::Paused;
            e.parker = ctx.parker.clone();
            let handle = ResumeHandle {
                task: ctx.task,
                epoch: e.pause_epoch,
            };
            st.paused += 1;
            st.running -= 1;
            st.record(TraceKind::Pause, ctx.task.0);
            st.progress();
            handle
        };
        if self.shared.is_virtual() {
            register(handle);
            ctx.handoff
                .as_ref()
                .expect("virtual task without context")
                .yield_to_driver(Yield::Pause);
        } else {
            self.shared.real_release_agent();
            register(handle);
            Shared::real_park(ctx.parker.as_ref().expect("real task without parker"));
        }
        Ok(())
    }

    pub fn resume_task(&self, handle: ResumeHandle) -> Result<(), RuntimeError> {
        let mut st = self.shared.state.lock().unwrap();
        let task = handle.task;
        let e = st.entry_mut(task)?;
        if e.state == TaskState::Completed {
            return Err(RuntimeError::TaskCompleted(task));
        }
        if handle.epoch <= e.redeemed_epoch {
            return Err(RuntimeError::AlreadyResumed(task));
        }
        if e.state != TaskState::Paused || handle.epoch != e.pause_epoch {
            return Err(RuntimeError::NotPaused(task));
        }
        e.redeemed_epoch = handle.epoch;
        let now = st.now_ns();
        st.ready.insert((now, task.0));
        st.record(TraceKind::Ready, task.0);
        st.progress();
        drop(st);
        self.shared.work_cv.notify_all();
        Ok(())
    }

    pub fn increase_event_counter(&self, task: TaskId, n: u64) -> Result<(), RuntimeError> {
        self.shared.state.lock().unwrap().increase_events(task, n)
    }

    pub fn decrease_event_counter(&self, task: TaskId, n: u64) -> Result<(), RuntimeError> {
        self.shared.state.lock().unwrap().decrease_events(task, n)?;
        self.shared.work_cv.notify_all();
        self.shared.done_cv.notify_all();
        Ok(())
    }

    /// Registers `callback` to be invoked about every `poll_period` while the
    /// runtime has live tasks. Invocations of one service never overlap.
    pub fn register_polling_service<F>(&self, name: &str, period_hint: Duration, callback: F) -> ServiceId
    where
        F: FnMut() -> usize + Send + 'static,
    {
        let mut st = self.shared.state.lock().unwrap();
        let id = ServiceId(st.next_service);
        st.next_service += 1;
        st.services.push(ServiceEntry {
            id,
            name: name.to_string(),
            period_hint,
            callback: Arc::new(Mutex::new(Box::new(callback))),
            active: Arc::new(AtomicBool::new(true)),
            invocations: Arc::new(AtomicU64::new(0)),
        });
        self.shared.ensure_poll(&mut st);
        drop(st);
        self.shared.poll_cv.notify_all();
        id
    }

    /// Removes a service. When called outside polling callbacks, returns only
    /// after any in-flight invocation has finished.
    pub fn unregister_polling_service(&self, id: ServiceId) -> Result<(), RuntimeError> {
        let entry = {
            let mut st = self.shared.state.lock().unwrap();
            let pos = st
                .services
                .iter()
                .position(|s| s.id == id)
                .ok_or(RuntimeError::UnknownService(id))?;
            st.services.remove(pos)
        };
        entry.active.store(false, Ordering::SeqCst);
        // A callback unregistering itself already holds its own lock.
        if let Ok(guard) = entry.callback.try_lock() {
            drop(guard);
        } else if !self.in_service(&entry) {
            drop(entry.callback.lock().unwrap());
        }
        Ok(())
    }

    fn in_service(&self, entry: &ServiceEntry) -> bool {
        IN_SERVICE.with(|s| s.borrow().contains(&entry.id.0))
    }

    pub fn polling_invocations(&self, id: ServiceId) -> Option<u64> {
        let st = self.shared.state.lock().unwrap();
        st.services
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.invocations.load(Ordering::Relaxed))
    }

    pub fn polling_service_names(&self) -> Vec<(ServiceId, String, Duration)> {
        let st = self.shared.state.lock().unwrap();
        st.services
            .iter()
            .map(|s| (s.id, s.name.clone(), s.period_hint))
            .collect()
    }

    /// Current time on the runtime's clock, measured from its creation.
    pub fn now(&self) -> Duration {
        Duration::from_nanos(self.shared.state.lock().unwrap().now_ns())
    }

    /// Occupies the calling agent for `d`.
    ///
    /// Virtual mode: consumes `d` of virtual time (or advances the clock when
    /// called outside a run). Real mode: busy-waits on the wall clock.
    pub fn compute(&self, d: Duration) {
        if d.is_zero() {
            return;
        }
        if self.shared.is_virtual() {
            match self.shared.ctx() {
                Some(ctx) => ctx
                    .handoff
                    .as_ref()
                    .expect("virtual task without context")
                    .yield_to_driver(Yield::Compute(as_nanos(d))),
                None => self.advance_idle_clock(self.now() + d),
            }
        } else {
            let end = Instant::now() + d;
            while Instant::now() < end {
                std::hint::spin_loop();
            }
        }
    }

    fn advance_idle_clock(&self, to: Duration) {
        let mut st = self.shared.state.lock().unwrap();
        if !st.v.running_loop {
            st.v.now = st.v.now.max(as_nanos(to));
        }
    }

    /// Runs `f` once `d` has elapsed, from the runtime's timer context.
    pub fn call_after<F>(&self, d: Duration, f: F)
    where
        F: FnOnce() + Send + 'static,
    {
        let mut st = self.shared.state.lock().unwrap();
        let at = st.now_ns() + as_nanos(d);
        st.next_timer += 1;
        let key = (at, st.next_timer);
        st.timers.insert(key, Box::new(f));
        if st.virtual_mode {
            st.v.push(at, Event::Timer { key });
        }
        drop(st);
        self.shared.poll_cv.notify_all();
    }
}

thread_local! {
    static IN_SERVICE: RefCell<Vec<u64>> = const { RefCell::new(Vec::new()) };
}

impl Clock for RuntimeHandle {
    fn now(&self) -> Duration {
        RuntimeHandle::now(self)
    }

    fn wait(&self, cell: &WaitCell, seen: u64, deadline: Option<Duration>) {
        if !self.shared.is_virtual() {
            let timeout = deadline.map(|d| d.saturating_sub(self.now()));
            cell.block_real(seen, timeout);
            return;
        }
        match self.shared.ctx() {
            Some(ctx) => self.shared.virtual_wait(&ctx, cell, seen, deadline.map(as_nanos)),
            None => {
                if let Some(d) = deadline {
                    self.advance_idle_clock(d);
                }
            }
        }
    }

    fn notify(&self, cell: &WaitCell) {
        cell.bump();
        if self.shared.is_virtual() {
            self.shared.virtual_notify(cell);
        }
    }
}
