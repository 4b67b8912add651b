//! Task-aware storage I/O.
//!
//! Positional reads and writes issued from task bodies are submitted to an
//! asynchronous [`IoContext`] and completed by a polling service registered
//! with the runtime. Two flavours:
//!
//! * `ta_*_blocking` behave like `pread`/`pwrite`: the calling task pauses
//!   (freeing its agent) until the request completes, then returns the byte
//!   count.
//! * `ta_*` return at once after adding one event to the calling task. The
//!   task's dependents are released only after every such request finished.
//!   Results and errors are collected per task for dependents to inspect.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use crate::io::{
    BackendKind, CompletionRecord, ContextConfig, DeviceModel, FileHandle, IoBuffer, IoContext, IoError, IoFailure,
    IoKind, IoRequest, SubmitResult,
};
use crate::runtime::{Clock, ResumeHandle, RuntimeError, RuntimeHandle, ServiceId, TaskId};

const EXTENSION: &str = "tasio";
/// Completions reaped per polling invocation.
pub const POLL_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct TasioConfig {
    pub max_in_flight: usize,
    pub retry_sleep: Duration,
    pub backend: BackendKind,
    pub model: Option<DeviceModel>,
    /// Pool backend delegate threads.
    pub delegates: usize,
    pub strict_extend: bool,
    /// Mark every request as direct I/O, enforcing alignment.
    pub direct: bool,
    /// Keep a per-request log of submission timing.
    pub record_ops: bool,
}

impl Default for TasioConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 1000,
            retry_sleep: Duration::from_millis(1),
            backend: BackendKind::Simulated,
            model: Some(DeviceModel::optane_905p()),
            delegates: 4,
            strict_extend: false,
            direct: false,
            record_ops: false,
        }
    }
}

impl TasioConfig {
    pub fn simulated(model: DeviceModel) -> Self {
        Self {
            model: Some(model),
            ..Default::default()
        }
    }

    pub fn pool(delegates: usize) -> Self {
        Self {
            backend: BackendKind::Pool,
            model: None,
            delegates,
            ..Default::default()
        }
    }

    /// Applies `TASIO_MAX_INFLIGHT` and `TASIO_RETRY_US` from `lookup`.
    pub fn with_env_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, TasioError> {
        if let Some(v) = lookup("TASIO_MAX_INFLIGHT") {
            self.max_in_flight = v
                .trim()
                .parse()
                .map_err(|_| TasioError::Config(format!("TASIO_MAX_INFLIGHT=`{v}` is not a count")))?;
        }
        if let Some(v) = lookup("TASIO_RETRY_US") {
            let us: u64 = v
                .trim()
                .parse()
                .map_err(|_| TasioError::Config(format!("TASIO_RETRY_US=`{v}` is not a count")))?;
            self.retry_sleep = Duration::from_micros(us);
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TasioError> {
        if self.max_in_flight == 0 {
            return Err(TasioError::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry_sleep.is_zero() {
            return Err(TasioError::Config("retry_sleep must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TasioError {
    #[error("task-aware I/O is already initialised on this runtime")]
    AlreadyInitialized,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TasioStats {
    pub submitted: u64,
    pub inline_completions: u64,
    pub reaped: u64,
    pub resumes: u64,
    pub decrements: u64,
    /// Completions whose request id was unknown.
    pub orphans: u64,
    pub retries: u64,
    pub guard_trips: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpMode {
    Blocking,
    NonBlocking,
}

/// Submission timing of one accepted request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpLogEntry {
    pub task: TaskId,
    pub mode: OpMode,
    pub first_attempt: Duration,
    pub submitted_at: Duration,
    pub retries: u32,
    pub outstanding_after_submit: usize,
}

#[derive(Default)]
struct BlockSlot {
    result: Option<Result<usize, IoFailure>>,
    handle: Option<ResumeHandle>,
}

enum Waker {
    Blocking(Arc<Mutex<BlockSlot>>),
    NonBlocking { task: TaskId, seq: u64 },
}

struct Retry {
    req: IoRequest,
    task: TaskId,
    seq: u64,
    not_before: Duration,
    first_attempt: Duration,
    retries: u32,
}

#[derive(Default)]
struct TaskRecord {
    next_seq: u64,
    results: Vec<(u64, Result<usize, IoFailure>)>,
}

#[derive(Default)]
struct Pending {
    ops: HashMap<u64, Waker>,
    retry: VecDeque<Retry>,
    tasks: HashMap<TaskId, TaskRecord>,
    log: Vec<OpLogEntry>,
    stats: TasioStats,
}

enum Action {
    Resume(ResumeHandle),
    Decrement(TaskId),
}

struct Inner {
    rt: RuntimeHandle,
    ctx: IoContext,
    config: TasioConfig,
    pending: Mutex<Pending>,
    polling: AtomicBool,
    service: Mutex<Option<ServiceId>>,
}

/// Handle to an initialised task-aware I/O layer. Clones share state.
#[derive(Clone)]
pub struct Tasio {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tasio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tasio")
            .field("config", &self.inner.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl Tasio {
    /// Initialises with environment overrides applied.
    pub fn init(rt: &RuntimeHandle, config: TasioConfig) -> Result<Self, TasioError> {
        Self::init_with_env(rt, config, |k| std::env::var(k).ok())
    }

    pub fn init_with_env(
        rt: &RuntimeHandle,
        config: TasioConfig,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, TasioError> {
        let config = config.with_env_overrides(lookup)?;
        config.validate()?;
        let ctx_config = ContextConfig {
            capacity: config.max_in_flight,
            backend: config.backend,
            model: config.model.clone(),
            delegates: config.delegates,
            strict_extend: config.strict_extend,
        };
        if !rt.claim_extension(EXTENSION) {
            return Err(TasioError::AlreadyInitialized);
        }
        let ctx = match IoContext::create(ctx_config, Arc::new(rt.clone())) {
            Ok(ctx) => ctx,
            Err(e) => {
                rt.release_extension(EXTENSION);
                return Err(e.into());
            }
        };
        let inner = Arc::new(Inner {
            rt: rt.clone(),
            ctx,
            config,
            pending: Mutex::new(Pending::default()),
            polling: AtomicBool::new(false),
            service: Mutex::new(None),
        });
        let weak: Weak<Inner> = Arc::downgrade(&inner);
        let id = rt.register_polling_service("tasio", rt.poll_period(), move || {
            weak.upgrade().map_or(0, |inner| Tasio { inner }.poll())
        });
        *inner.service.lock().unwrap() = Some(id);
        Ok(Self { inner })
    }

    pub fn context(&self) -> &IoContext {
        &self.inner.ctx
    }

    pub fn config(&self) -> &TasioConfig {
        &self.inner.config
    }

    pub fn stats(&self) -> TasioStats {
        self.inner.pending.lock().unwrap().stats
    }

    pub fn op_log(&self) -> Vec<OpLogEntry> {
        self.inner.pending.lock().unwrap().log.clone()
    }

    /// Requests submitted (or awaiting resubmission) and not yet delivered.
    pub fn pending_ops(&self) -> usize {
        let p = self.inner.pending.lock().unwrap();
        p.ops.len() + p.retry.len()
    }

    /// Buffer suited to the backend (unbacked on the simulated device).
    pub fn alloc_buffer(&self, len: usize) -> IoBuffer {
        self.inner.ctx.alloc_buffer(len)
    }

    fn now(&self) -> Duration {
        self.inner.rt.now()
    }

    fn request(&self, kind: IoKind, file: FileHandle, offset: u64, segs: Vec<(IoBuffer, usize)>) -> IoRequest {
        IoRequest::new(kind, file, offset, segs).direct(self.inner.config.direct)
    }

    fn log_submit(&self, p: &mut Pending, task: TaskId, mode: OpMode, first: Duration, retries: u32) {
        p.stats.submitted += 1;
        let outstanding = self.inner.ctx.outstanding();
        assert!(
            outstanding <= self.inner.config.max_in_flight,
            "{outstanding} requests outstanding against a cap of {}",
            self.inner.config.max_in_flight
        );
        if self.inner.config.record_ops {
            p.log.push(OpLogEntry {
                task,
                mode,
                first_attempt: first,
                submitted_at: self.now(),
                retries,
                outstanding_after_submit: outstanding,
            });
        }
    }

    // ---- blocking wrappers ----

    pub fn ta_pread_blocking(
        &self,
        file: FileHandle,
        buf: &IoBuffer,
        count: usize,
        offset: u64,
    ) -> Result<usize, TasioError> {
        self.blocking(self.request(IoKind::Read, file, offset, vec![(buf.clone(), count)]))
    }

    pub fn ta_pwrite_blocking(
        &self,
        file: FileHandle,
        buf: &IoBuffer,
        count: usize,
        offset: u64,
    ) -> Result<usize, TasioError> {
        self.blocking(self.request(IoKind::Write, file, offset, vec![(buf.clone(), count)]))
    }

    pub fn ta_preadv_blocking(
        &self,
        file: FileHandle,
        segments: &[(IoBuffer, usize)],
        offset: u64,
    ) -> Result<usize, TasioError> {
        self.blocking(self.request(IoKind::Read, file, offset, segments.to_vec()))
    }

    pub fn ta_pwritev_blocking(
        &self,
        file: FileHandle,
        segments: &[(IoBuffer, usize)],
        offset: u64,
    ) -> Result<usize, TasioError> {
        self.blocking(self.request(IoKind::Write, file, offset, segments.to_vec()))
    }

    fn blocking(&self, req: IoRequest) -> Result<usize, TasioError> {
        let rt = &self.inner.rt;
        let task = rt.current_task()?;
        let first = self.now();
        let mut retries = 0;
        let slot = Arc::new(Mutex::new(BlockSlot::default()));
        loop {
            let mut p = self.inner.pending.lock().unwrap();
            match self.inner.ctx.submit(req.clone())? {
                SubmitResult::Completed(n) => {
                    p.stats.inline_completions += 1;
                    return Ok(n);
                }
                SubmitResult::QueueFull => {
                    p.stats.retries += 1;
                    drop(p);
                    retries += 1;
                    rt.sleep(self.inner.config.retry_sleep);
                }
                SubmitResult::InFlight(id) => {
                    p.ops.insert(id.0, Waker::Blocking(slot.clone()));
                    self.log_submit(&mut p, task, OpMode::Blocking, first, retries);
                    break;
                }
            }
        }
        let rt2 = rt.clone();
        rt.pause_current_task(|h| {
            let mut s = slot.lock().unwrap();
            if s.result.is_some() {
                drop(s);
                rt2.resume_task(h).expect("fresh resume handle");
            } else {
                s.handle = Some(h);
            }
        })?;
        let result = slot.lock().unwrap().result.take().expect("resumed before completion");
        Ok(result.map_err(IoError::Io)?)
    }

    // ---- non-blocking calls ----

    pub fn ta_pread(&self, file: FileHandle, buf: &IoBuffer, count: usize, offset: u64) -> Result<(), TasioError> {
        self.nonblocking(self.request(IoKind::Read, file, offset, vec![(buf.clone(), count)]))
    }

    pub fn ta_pwrite(&self, file: FileHandle, buf: &IoBuffer, count: usize, offset: u64) -> Result<(), TasioError> {
        self.nonblocking(self.request(IoKind::Write, file, offset, vec![(buf.clone(), count)]))
    }

    pub fn ta_preadv(&self, file: FileHandle, segments: &[(IoBuffer, usize)], offset: u64) -> Result<(), TasioError> {
        self.nonblocking(self.request(IoKind::Read, file, offset, segments.to_vec()))
    }

    pub fn ta_pwritev(&self, file: FileHandle, segments: &[(IoBuffer, usize)], offset: u64) -> Result<(), TasioError> {
        self.nonblocking(self.request(IoKind::Write, file, offset, segments.to_vec()))
    }

    fn nonblocking(&self, req: IoRequest) -> Result<(), TasioError> {
        let rt = &self.inner.rt;
        let task = rt.current_task()?;
        rt.increase_event_counter(task, 1)?;
        let now = self.now();
        let mut p = self.inner.pending.lock().unwrap();
        let rec = p.tasks.entry(task).or_default();
        let seq = rec.next_seq;
        rec.next_seq += 1;
        let outcome = self.inner.ctx.submit(req.clone());
        let immediate = match outcome {
            Ok(SubmitResult::InFlight(id)) => {
                p.ops.insert(id.0, Waker::NonBlocking { task, seq });
                self.log_submit(&mut p, task, OpMode::NonBlocking, now, 0);
                None
            }
            Ok(SubmitResult::QueueFull) => {
                p.stats.retries += 1;
                p.retry.push_back(Retry {
                    req,
                    task,
                    seq,
                    not_before: now + self.inner.config.retry_sleep,
                    first_attempt: now,
                    retries: 1,
                });
                None
            }
            Ok(SubmitResult::Completed(n)) => {
                p.stats.inline_completions += 1;
                Some(Ok(n))
            }
            Err(IoError::Io(f)) => Some(Err(f)),
            Err(e) => Some(Err(IoFailure {
                kind: std::io::ErrorKind::InvalidInput,
                message: e.to_string(),
            })),
        };
        if let Some(result) = immediate {
            p.tasks.get_mut(&task).unwrap().results.push((seq, result));
            p.stats.decrements += 1;
            drop(p);
            rt.decrease_event_counter(task, 1)?;
        }
        Ok(())
    }

    /// Results of a task's non-blocking calls so far, in call order.
    /// Removes them.
    pub fn take_results(&self, task: TaskId) -> Vec<Result<usize, IoFailure>> {
        let mut p = self.inner.pending.lock().unwrap();
        let Some(rec) = p.tasks.get_mut(&task) else {
            return Vec::new();
        };
        let mut r = std::mem::take(&mut rec.results);
        r.sort_by_key(|(s, _)| *s);
        r.into_iter().map(|(_, res)| res).collect()
    }

    /// Errors recorded for a task's non-blocking calls, in call order.
    pub fn ta_last_errors(&self, task: TaskId) -> Vec<IoFailure> {
        let p = self.inner.pending.lock().unwrap();
        let Some(rec) = p.tasks.get(&task) else {
            return Vec::new();
        };
        let mut errs: Vec<_> = rec
            .results
            .iter()
            .filter_map(|(s, r)| r.as_ref().err().map(|e| (*s, e.clone())))
            .collect();
        errs.sort_by_key(|(s, _)| *s);
        errs.into_iter().map(|(_, e)| e).collect()
    }

    // ---- polling ----

    fn deliver(p: &mut Pending, waker: Waker, result: Result<usize, IoFailure>, actions: &mut Vec<Action>) {
        match waker {
            Waker::Blocking(slot) => {
                let mut s = slot.lock().unwrap();
                s.result = Some(result);
                if let Some(h) = s.handle.take() {
                    actions.push(Action::Resume(h));
                }
                p.stats.resumes += 1;
            }
            Waker::NonBlocking { task, seq } => {
                p.tasks.entry(task).or_default().results.push((seq, result));
                p.stats.decrements += 1;
                actions.push(Action::Decrement(task));
            }
        }
    }

    /// Reaps completions, wakes their owners and resubmits deferred
    /// requests. Returns the number of completions processed.
    pub fn poll(&self) -> usize {
        if self.inner.polling.swap(true, Ordering::Acquire) {
            self.inner.pending.lock().unwrap().stats.guard_trips += 1;
            return 0;
        }
        let mut actions = Vec::new();
        let processed;
        {
            let mut p = self.inner.pending.lock().unwrap();
            let records: Vec<CompletionRecord> = self.inner.ctx.poll_completions(POLL_BATCH);
            processed = records.len();
            p.stats.reaped += processed as u64;
            for rec in records {
                match p.ops.remove(&rec.id.0) {
                    Some(w) => Self::deliver(&mut p, w, rec.result, &mut actions),
                    None => p.stats.orphans += 1,
                }
            }
            self.resubmit(&mut p, &mut actions);
        }
        for a in actions {
            let r = match a {
                Action::Resume(h) => self.inner.rt.resume_task(h),
                Action::Decrement(t) => self.inner.rt.decrease_event_counter(t, 1),
            };
            if let Err(e) = r {
                log::error!("task-aware I/O could not wake its task: {e}");
            }
        }
        self.inner.polling.store(false, Ordering::Release);
        processed
    }

    fn resubmit(&self, p: &mut Pending, actions: &mut Vec<Action>) {
        let now = self.now();
        while let Some(front) = p.retry.front_mut() {
            if front.not_before > now {
                break;
            }
            match self.inner.ctx.submit(front.req.clone()) {
                Ok(SubmitResult::QueueFull) => {
                    front.not_before = now + self.inner.config.retry_sleep;
                    front.retries += 1;
                    p.stats.retries += 1;
                    break;
                }
                Ok(SubmitResult::InFlight(id)) => {
                    let r = p.retry.pop_front().unwrap();
                    p.ops.insert(
                        id.0,
                        Waker::NonBlocking {
                            task: r.task,
                            seq: r.seq,
                        },
                    );
                    self.log_submit(p, r.task, OpMode::NonBlocking, r.first_attempt, r.retries);
                }
                other => {
                    let r = p.retry.pop_front().unwrap();
                    let result = match other {
                        Ok(SubmitResult::Completed(n)) => Ok(n),
                        Err(IoError::Io(f)) => Err(f),
                        Err(e) => Err(IoFailure {
                            kind: std::io::ErrorKind::InvalidInput,
                            message: e.to_string(),
                        }),
                        _ => unreachable!(),
                    };
                    let waker = Waker::NonBlocking {
                        task: r.task,
                        seq: r.seq,
                    };
                    Self::deliver(p, waker, result, actions);
                }
            }
        }
    }

    /// Waits for every outstanding request to be delivered, then removes the
    /// polling service. Idempotent.
    pub fn shutdown(&self) {
        let Some(id) = self.inner.service.lock().unwrap().take() else {
            return;
        };
        let initially = self.pending_ops();
        if initially > 0 {
            log::warn!("task-aware I/O shut down with {initially} request(s) in flight; draining");
        }
        while self.pending_ops() > 0 {
            if self.poll() == 0 && self.pending_ops() > 0 {
                self.inner
                    .rt
                    .sleep(self.inner.config.retry_sleep.min(self.inner.rt.poll_period()));
            }
        }
        let _ = self.inner.rt.unregister_polling_service(id);
        self.inner.rt.release_extension(EXTENSION);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ClockMode, Runtime, RuntimeConfig};

    fn setup(workers: usize) -> (Runtime, RuntimeHandle, Tasio, FileHandle) {
        let rt = Runtime::new(RuntimeConfig::new(workers, ClockMode::Virtual).with_trace()).unwrap();
        let h = rt.handle();
        let io = Tasio::init_with_env(&h, TasioConfig::default(), |_| None).unwrap();
        let f = io.context().create_sim_file(64 << 20).unwrap();
        (rt, h, io, f)
    }

    #[test]
    fn init_and_shutdown_without_io() {
        let (_rt, h, io, _) = setup(1);
        assert_eq!(io.context().capacity(), 1000);
        assert_eq!(
            Tasio::init_with_env(&h, TasioConfig::default(), |_| None).unwrap_err(),
            TasioError::AlreadyInitialized
        );
        io.shutdown();
        assert_eq!(io.pending_ops(), 0);
        assert!(h.polling_service_names().is_empty());
        io.shutdown();
        assert!(Tasio::init_with_env(&h, TasioConfig::default(), |_| None).is_ok());
    }

    #[test]
    fn environment_overrides() {
        let env = |k: &str| match k {
            "TASIO_MAX_INFLIGHT" => Some("16".to_string()),
            "TASIO_RETRY_US" => Some("250".to_string()),
            _ => None,
        };
        let cfg = TasioConfig::default().with_env_overrides(env).unwrap();
        assert_eq!(cfg.max_in_flight, 16);
        assert_eq!(cfg.retry_sleep, Duration::from_micros(250));
        let bad = TasioConfig::default().with_env_overrides(|_| Some("lots".into()));
        assert!(matches!(bad, Err(TasioError::Config(_))));
        let zero = TasioConfig::default().with_env_overrides(|k| (k == "TASIO_MAX_INFLIGHT").then(|| "0".to_string()));
        assert!(zero.unwrap().validate().is_err());
    }

    #[test]
    fn zero_length_blocking_read_does_not_pause() {
        let (rt, h, io, f) = setup(1);
        let io2 = io.clone();
        let got = Arc::new(Mutex::new(None));
        let g = got.clone();
        h.spawn_task(
            move || {
                let b = io2.alloc_buffer(0);
                *g.lock().unwrap() = Some(io2.ta_pread_blocking(f, &b, 0, 0));
            },
            &[],
            &[],
        )
        .unwrap();
        rt.run_to_completion().unwrap();
        assert_eq!(*got.lock().unwrap(), Some(Ok(0)));
        assert!(h
            .trace_events()
            .iter()
            .all(|e| e.kind != crate::runtime::trace::TraceKind::Pause));
    }

    #[test]
    fn blocking_read_overlaps_independent_compute() {
        let (rt, h, io, f) = setup(1);
        let io2 = io.clone();
        let bytes = Arc::new(Mutex::new(0));
        let b1 = bytes.clone();
        h.spawn_task(
            move || {
                let b = io2.alloc_buffer(1 << 20);
                *b1.lock().unwrap() = io2.ta_pread_blocking(f, &b, 1 << 20, 0).unwrap();
            },
            &[],
            &[],
        )
        .unwrap();
        let h2 = h.clone();
        h.spawn_task(move || h2.compute(Duration::from_micros(200)), &[], &[])
            .unwrap();
        let stats = rt.run_to_completion().unwrap();
        assert_eq!(*bytes.lock().unwrap(), 1 << 20);
        let d = Duration::from_nanos((1e9 / 2548.0_f64).ceil() as u64);
        assert!(stats.elapsed <= d + h.poll_period(), "{:?}", stats.elapsed);
        assert!(stats.elapsed < d + Duration::from_micros(200));
        let s = io.stats();
        assert_eq!((s.resumes, s.orphans, s.guard_trips), (1, 0, 0));
    }

    #[test]
    fn nonblocking_reads_gate_dependents() {
        let (rt, h, io, f) = setup(2);
        let r = h.register_resource();
        let io2 = io.clone();
        let producer = h
            .spawn_task(
                move || {
                    for i in 0..4u64 {
                        let b = io2.alloc_buffer(65536);
                        io2.ta_pread(f, &b, 65536, i * 65536).unwrap();
                    }
                },
                &[],
                &[r],
            )
            .unwrap();
        let (h2, io3) = (h.clone(), io.clone());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s1 = seen.clone();
        h.spawn_task(
            move || {
                *s1.lock().unwrap() = io3.take_results(producer);
                assert!(io3.ta_last_errors(producer).is_empty());
                let _ = h2;
            },
            &[r],
            &[],
        )
        .unwrap();
        rt.run_to_completion().unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![Ok(65536); 4]);
        let trace = h.trace_events();
        let body_end = trace
            .iter()
            .find(|e| e.id == producer.0 && e.kind == crate::runtime::trace::TraceKind::BodyEnd)
            .unwrap();
        let complete = trace
            .iter()
            .find(|e| e.id == producer.0 && e.kind == crate::runtime::trace::TraceKind::Complete)
            .unwrap();
        assert!(complete.time_ns > body_end.time_ns);
        assert_eq!(io.stats().decrements, 4);
    }

    #[test]
    fn zero_length_nonblocking_write_balances_counter() {
        let (rt, h, io, f) = setup(1);
        let (io2, h2) = (io.clone(), h.clone());
        let t = h
            .spawn_task(
                move || {
                    let b = io2.alloc_buffer(0);
                    io2.ta_pwrite(f, &b, 0, 0).unwrap();
                    assert_eq!(h2.event_count(h2.current_task().unwrap()).unwrap(), 0);
                },
                &[],
                &[],
            )
            .unwrap();
        rt.run_to_completion().unwrap();
        assert_eq!(io.take_results(t), vec![Ok(0)]);
    }

    #[test]
    fn nonblocking_errors_are_recorded_and_do_not_wedge() {
        let (rt, h, io, f) = setup(1);
        let io2 = io.clone();
        let t = h
            .spawn_task(
                move || {
                    let b = io2.alloc_buffer(64);
                    io2.ta_pread(f, &b, 128, 0).unwrap();
                    io2.ta_pread(FileHandle(42), &b, 64, 0).unwrap();
                },
                &[],
                &[],
            )
            .unwrap();
        rt.run_to_completion().unwrap();
        assert_eq!(io.ta_last_errors(t).len(), 2);
    }

    #[test]
    fn calls_outside_tasks_are_rejected() {
        let (_rt, _h, io, f) = setup(1);
        let b = io.alloc_buffer(512);
        assert_eq!(
            io.ta_pread(f, &b, 512, 0),
            Err(TasioError::Runtime(RuntimeError::NoTaskContext))
        );
    }

    #[test]
    fn poll_with_nothing_pending_is_a_no_op() {
        let (_rt, _h, io, _) = setup(1);
        assert_eq!(io.poll(), 0);
        assert_eq!(io.stats(), TasioStats::default());
    }

    #[test]
    fn shutdown_drains_outstanding_requests() {
        let (rt, h, io, f) = setup(1);
        let io2 = io.clone();
        h.spawn_task(
            move || {
                for i in 0..5u64 {
                    let b = io2.alloc_buffer(1 << 20);
                    io2.ta_pread(f, &b, 1 << 20, i << 20).unwrap();
                }
                // Shut down from inside the body: requests are still in flight.
                assert_eq!(io2.pending_ops(), 5);
                io2.shutdown();
                assert_eq!(io2.pending_ops(), 0);
            },
            &[],
            &[],
        )
        .unwrap();
        rt.run_to_completion().unwrap();
        assert_eq!(io.stats().reaped, 5);
        assert_eq!(io.stats().decrements, 5);
    }

    #[test]
    fn blocking_queue_full_retries_after_sleep() {
        let rt = Runtime::new(RuntimeConfig::new(4, ClockMode::Virtual)).unwrap();
        let h = rt.handle();
        let cfg = TasioConfig {
            max_in_flight: 2,
            record_ops: true,
            ..Default::default()
        };
        let io = Tasio::init_with_env(&h, cfg, |_| None).unwrap();
        let f = io.context().create_sim_file(64 << 20).unwrap();
        for i in 0..3u64 {
            let io2 = io.clone();
            h.spawn_task(
                move || {
                    let b = io2.alloc_buffer(1 << 20);
                    assert_eq!(io2.ta_pread_blocking(f, &b, 1 << 20, i << 20).unwrap(), 1 << 20);
                },
                &[],
                &[],
            )
            .unwrap();
        }
        rt.run_to_completion().unwrap();
        let log = io.op_log();
        assert_eq!(log.len(), 3);
        let retried: Vec<_> = log.iter().filter(|e| e.retries > 0).collect();
        assert_eq!(retried.len(), 1);
        assert!(retried[0].submitted_at - retried[0].first_attempt >= Duration::from_millis(1));
        assert!(log.iter().all(|e| e.outstanding_after_submit <= 2));
    }
}
