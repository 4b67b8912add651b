use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::Duration;

use super::model::DeviceModel;
use super::sim::{ns_ceil, Finished, SimDevice};
use super::{
    CompletionRecord, FileHandle, IoBuffer, IoError, IoFailure, IoKind, IoRequest, RequestId, SubmitResult, WaitResult,
    DIRECT_ALIGN,
};
use crate::runtime::{as_nanos, Clock, WaitCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Simulated,
    Pool,
}

#[derive(Debug, Clone)]
pub struct ContextConfig {
    pub capacity: usize,
    pub backend: BackendKind,
    /// Required for the simulated backend.
    pub model: Option<DeviceModel>,
    /// Pool backend: number of delegate threads.
    pub delegates: usize,
    /// Pool backend: writes that extend the file complete synchronously.
    pub strict_extend: bool,
}

impl ContextConfig {
    pub fn simulated(capacity: usize, model: DeviceModel) -> Self {
        Self {
            capacity,
            backend: BackendKind::Simulated,
            model: Some(model),
            delegates: 0,
            strict_extend: false,
        }
    }

    pub fn pool(capacity: usize, delegates: usize) -> Self {
        Self {
            capacity,
            backend: BackendKind::Pool,
            model: None,
            delegates,
            strict_extend: false,
        }
    }
}

enum FileSlot {
    Sim { size: u64 },
    Real(Arc<File>),
}

struct SimOp {
    bytes: usize,
    sync: bool,
}

struct SimState {
    model: DeviceModel,
    device: SimDevice,
    ops: HashMap<u64, SimOp>,
    sync_done: HashMap<u64, CompletionRecord>,
}

struct CtxState {
    next_id: u64,
    outstanding: usize,
    peak_outstanding: usize,
    files: Vec<FileSlot>,
    /// Finished, unreaped asynchronous requests keyed by (visible at ns, id).
    done: BTreeMap<(u64, u64), CompletionRecord>,
    sim: Option<SimState>,
}

type Job = Box<dyn FnOnce() + Send>;

#[derive(Default)]
struct PoolQueue {
    jobs: Mutex<(VecDeque<Job>, bool)>,
    cv: Condvar,
}

impl PoolQueue {
    fn run(&self) {
        loop {
            let job = {
                let mut q = self.jobs.lock().unwrap();
                loop {
                    if q.1 {
                        return;
                    }
                    if let Some(j) = q.0.pop_front() {
                        break j;
                    }
                    q = self.cv.wait(q).unwrap();
                }
            };
            job();
        }
    }
}

struct Inner {
    capacity: usize,
    backend: BackendKind,
    strict_extend: bool,
    clock: Arc<dyn Clock>,
    /// Notified on every submission and pool completion.
    cell: WaitCell,
    state: Mutex<CtxState>,
    pool: Option<Arc<PoolQueue>>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(q) = &self.pool {
            q.jobs.lock().unwrap().1 = true;
            q.cv.notify_all();
        }
    }
}

/// Submission/completion context. Clones share the same queue.
#[derive(Clone)]
pub struct IoContext {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for IoContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IoContext")
            .field("backend", &self.inner.backend)
            .field("capacity", &self.inner.capacity)
            .field("outstanding", &self.outstanding())
            .finish()
    }
}

fn read_full_at(file: &File, buf: &mut [u8], mut off: u64) -> std::io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match file.read_at(&mut buf[done..], off) {
            Ok(0) => break,
            Ok(n) => {
                done += n;
                off += n as u64;
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}

fn perform(file: &File, req: &IoRequest) -> Result<usize, IoFailure> {
    let mut total = 0usize;
    let mut off = req.offset;
    for (buf, len) in &req.segments {
        let len = *len;
        let n = match req.kind {
            IoKind::Read => buf
                .with_mut(|s| read_full_at(file, &mut s[..len], off))
                .expect("validated backed buffer")?,
            IoKind::Write => {
                buf.with(|s| file.write_all_at(&s[..len], off))
                    .expect("validated backed buffer")?;
                len
            }
        };
        total += n;
        off += n as u64;
        if n < len {
            break;
        }
    }
    Ok(total)
}

impl IoContext {
    pub fn create(config: ContextConfig, clock: Arc<dyn Clock>) -> Result<Self, IoError> {
        if config.capacity == 0 {
            return Err(IoError::ZeroCapacity);
        }
        let sim = match config.backend {
            BackendKind::Simulated => {
                let model = config.model.ok_or(IoError::MissingModel)?;
                model.validate()?;
                Some(SimState {
                    device: SimDevice::new(&model),
                    model,
                    ops: HashMap::new(),
                    sync_done: HashMap::new(),
                })
            }
            BackendKind::Pool => None,
        };
        let pool = match config.backend {
            BackendKind::Pool => {
                if config.delegates == 0 {
                    return Err(IoError::NoDelegates);
                }
                let q = Arc::new(PoolQueue::default());
                for _ in 0..config.delegates {
                    let q = q.clone();
                    std::thread::Builder::new()
                        .name("io-delegate".into())
                        .spawn(move || q.run())
                        .expect("failed to spawn I/O delegate");
                }
                Some(q)
            }
            BackendKind::Simulated => None,
        };
        Ok(Self {
            inner: Arc::new(Inner {
                capacity: config.capacity,
                backend: config.backend,
                strict_extend: config.strict_extend,
                clock,
                cell: WaitCell::new(),
                state: Mutex::new(CtxState {
                    next_id: 1,
                    outstanding: 0,
                    peak_outstanding: 0,
                    files: Vec::new(),
                    done: BTreeMap::new(),
                    sim,
                }),
                pool,
            }),
        })
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity
    }

    pub fn backend(&self) -> BackendKind {
        self.inner.backend
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.inner.clock.clone()
    }

    pub fn model(&self) -> Option<DeviceModel> {
        self.lock().sim.as_ref().map(|s| s.model.clone())
    }

    /// Submitted, unreaped requests.
    pub fn outstanding(&self) -> usize {
        self.lock().outstanding
    }

    pub fn peak_outstanding(&self) -> usize {
        self.lock().peak_outstanding
    }

    fn lock(&self) -> MutexGuard<'_, CtxState> {
        self.inner.state.lock().unwrap()
    }

    fn now_ns(&self) -> u64 {
        as_nanos(self.inner.clock.now())
    }

    /// Creates an empty-data file of `size` bytes on the simulated device.
    pub fn create_sim_file(&self, size: u64) -> Result<FileHandle, IoError> {
        if self.inner.backend != BackendKind::Simulated {
            return Err(IoError::InvalidProfile(
                "simulated files need the simulated backend".into(),
            ));
        }
        let mut st = self.lock();
        st.files.push(FileSlot::Sim { size });
        Ok(FileHandle(st.files.len() as u32 - 1))
    }

    pub fn register_file(&self, file: File) -> Result<FileHandle, IoError> {
        if self.inner.backend != BackendKind::Pool {
            return Err(IoError::InvalidProfile("real files need the pool backend".into()));
        }
        let mut st = self.lock();
        st.files.push(FileSlot::Real(Arc::new(file)));
        Ok(FileHandle(st.files.len() as u32 - 1))
    }

    pub fn file_size(&self, file: FileHandle) -> Result<u64, IoError> {
        match self.lock().files.get(file.0 as usize) {
            Some(FileSlot::Sim { size }) => Ok(*size),
            Some(FileSlot::Real(f)) => Ok(f.metadata().map_err(|e| IoError::Io(e.into()))?.len()),
            None => Err(IoError::InvalidFile(file)),
        }
    }

    fn validate(&self, req: &IoRequest) -> Result<(), IoError> {
        let check = |field: &'static str, value: u64| {
            if !value.is_multiple_of(DIRECT_ALIGN) {
                Err(IoError::Misaligned {
                    field,
                    value,
                    unit: DIRECT_ALIGN,
                })
            } else {
                Ok(())
            }
        };
        if req.direct {
            check("offset", req.offset)?;
        }
        for (buf, len) in &req.segments {
            if *len > buf.len() {
                return Err(IoError::SegmentOverrun {
                    len: *len,
                    capacity: buf.len(),
                });
            }
            if req.direct {
                check("segment length", *len as u64)?;
                check("buffer address", buf.addr() as u64)?;
            }
            if self.inner.backend == BackendKind::Pool && !buf.is_backed() {
                return Err(IoError::UnbackedBuffer);
            }
        }
        if (req.file.0 as usize) >= self.lock().files.len() {
            return Err(IoError::InvalidFile(req.file));
        }
        Ok(())
    }

    /// Bytes a simulated request transfers; applies write extension.
    fn sim_transfer(st: &mut CtxState, req: &IoRequest) -> usize {
        let total = req.total_len();
        let FileSlot::Sim { size } = &mut st.files[req.file.0 as usize] else {
            unreachable!("validated simulated file")
        };
        match req.kind {
            IoKind::Read => total.min(size.saturating_sub(req.offset)) as usize,
            IoKind::Write => {
                *size = (*size).max(req.offset + total);
                total as usize
            }
        }
    }

    fn absorb(st: &mut CtxState, finished: Vec<Finished>) {
        let sim = st.sim.as_mut().expect("simulated backend");
        let base = as_nanos(sim.model.base_latency);
        for f in finished {
            let op = sim.ops.remove(&f.id).expect("finished op is known");
            let at = ns_ceil(f.at) + base;
            let rec = CompletionRecord {
                id: RequestId(f.id),
                result: Ok(op.bytes),
                completion_time: Duration::from_nanos(at),
            };
            if op.sync {
                sim.sync_done.insert(f.id, rec);
            } else {
                st.done.insert((at, f.id), rec);
            }
        }
    }

    fn sim_start(st: &mut CtxState, req: &IoRequest, sync: bool, now: u64) -> u64 {
        let bytes = Self::sim_transfer(st, req);
        let id = st.next_id;
        st.next_id += 1;
        let sim = st.sim.as_mut().expect("simulated backend");
        let work = sim.model.work_ns(req.kind, bytes as u64);
        sim.ops.insert(id, SimOp { bytes, sync });
        let finished = sim.device.submit(id, work, now as f64);
        Self::absorb(st, finished);
        id
    }

    fn advance(&self, st: &mut CtxState, now: u64) {
        if let Some(sim) = st.sim.as_mut() {
            let finished = sim.device.advance(now as f64);
            Self::absorb(st, finished);
        }
    }

    fn real_file(st: &CtxState, file: FileHandle) -> Arc<File> {
        match &st.files[file.0 as usize] {
            FileSlot::Real(f) => f.clone(),
            FileSlot::Sim { .. } => unreachable!("pool context holds only real files"),
        }
    }

    pub fn submit(&self, req: IoRequest) -> Result<SubmitResult, IoError> {
        self.validate(&req)?;
        if req.total_len() == 0 {
            return Ok(SubmitResult::Completed(0));
        }
        let mut st = self.lock();
        if st.outstanding >= self.inner.capacity {
            return Ok(SubmitResult::QueueFull);
        }
        let id = match self.inner.backend {
            BackendKind::Simulated => {
                let now = self.now_ns();
                Self::sim_start(&mut st, &req, false, now)
            }
            BackendKind::Pool => {
                let file = Self::real_file(&st, req.file);
                if self.inner.strict_extend && req.kind == IoKind::Write {
                    let size = file.metadata().map_err(|e| IoError::Io(e.into()))?.len();
                    if req.offset + req.total_len() > size {
                        drop(st);
                        return Ok(SubmitResult::Completed(perform(&file, &req)?));
                    }
                }
                let id = st.next_id;
                st.next_id += 1;
                let weak: Weak<Inner> = Arc::downgrade(&self.inner);
                let job: Job = Box::new(move || {
                    let result = perform(&file, &req);
                    let Some(inner) = weak.upgrade() else { return };
                    let ctx = IoContext { inner };
                    {
                        let mut st = ctx.lock();
                        let at = ctx.now_ns();
                        st.done.insert(
                            (at, id),
                            CompletionRecord {
                                id: RequestId(id),
                                result,
                                completion_time: Duration::from_nanos(at),
                            },
                        );
                    }
                    ctx.inner.clock.notify(&ctx.inner.cell);
                });
                let q = self.inner.pool.as_ref().expect("pool backend");
                q.jobs.lock().unwrap().0.push_back(job);
                q.cv.notify_one();
                id
            }
        };
        st.outstanding += 1;
        st.peak_outstanding = st.peak_outstanding.max(st.outstanding);
        debug_assert!(st.outstanding <= self.inner.capacity);
        drop(st);
        self.inner.clock.notify(&self.inner.cell);
        Ok(SubmitResult::InFlight(RequestId(id)))
    }

    fn take_available(&self, st: &mut CtxState, now: u64, max: usize) -> Vec<CompletionRecord> {
        let mut out = Vec::new();
        while out.len() < max {
            match st.done.first_key_value() {
                Some((&(at, _), _)) if at <= now => {
                    out.push(st.done.pop_first().unwrap().1);
                }
                _ => break,
            }
        }
        st.outstanding -= out.len();
        out
    }

    /// Reaps up to `max` finished requests without blocking.
    pub fn poll_completions(&self, max: usize) -> Vec<CompletionRecord> {
        let mut st = self.lock();
        let now = self.now_ns();
        self.advance(&mut st, now);
        self.take_available(&mut st, now, max)
    }

    /// Earliest future instant at which a simulated completion becomes
    /// visible.
    fn next_visible(st: &CtxState, now: u64) -> Option<u64> {
        let sim = st.sim.as_ref()?;
        let base = as_nanos(sim.model.base_latency);
        let device = sim.device.next_service_end().map(|t| ns_ceil(t) + base);
        let queued = st.done.keys().map(|k| k.0).find(|&t| t > now);
        match (device, queued) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Blocks the caller until at least `min` records are available or
    /// `timeout` passes, then returns everything available.
    pub fn wait_completions(&self, min: usize, timeout: Duration) -> WaitResult {
        let clock = &self.inner.clock;
        let deadline = clock.now().saturating_add(timeout);
        let mut records = Vec::new();
        loop {
            let seen = self.inner.cell.generation();
            let next = {
                let mut st = self.lock();
                let now = self.now_ns();
                self.advance(&mut st, now);
                records.extend(self.take_available(&mut st, now, usize::MAX));
                if records.len() >= min {
                    return WaitResult {
                        records,
                        timed_out: false,
                    };
                }
                Self::next_visible(&st, now)
            };
            if clock.now() >= deadline {
                return WaitResult {
                    records,
                    timed_out: true,
                };
            }
            let wake = next.map(|n| Duration::from_nanos(n).min(deadline)).unwrap_or(deadline);
            clock.wait(&self.inner.cell, seen, Some(wake));
        }
    }

    /// Performs `req` synchronously on the calling context.
    ///
    /// Bypasses the capacity limit and the completion queue. On the
    /// simulated backend the request still competes for device bandwidth
    /// with everything else in flight.
    pub fn execute_sync(&self, req: IoRequest) -> Result<usize, IoError> {
        self.validate(&req)?;
        if req.total_len() == 0 {
            return Ok(0);
        }
        if self.inner.backend == BackendKind::Pool {
            let file = Self::real_file(&self.lock(), req.file);
            return Ok(perform(&file, &req)?);
        }
        let id = {
            let mut st = self.lock();
            let now = self.now_ns();
            Self::sim_start(&mut st, &req, true, now)
        };
        self.inner.clock.notify(&self.inner.cell);
        // Predictions are lower bounds: later arrivals only slow a request.
        let private = WaitCell::new();
        loop {
            let wake = {
                let mut st = self.lock();
                let now = self.now_ns();
                self.advance(&mut st, now);
                let sim = st.sim.as_mut().unwrap();
                match sim.sync_done.get(&id) {
                    Some(rec) if as_nanos(rec.completion_time) <= now => {
                        let rec = sim.sync_done.remove(&id).unwrap();
                        return Ok(rec.result?);
                    }
                    Some(rec) => rec.completion_time,
                    None => {
                        let end = sim.device.predict(id).expect("sync op in flight");
                        Duration::from_nanos(ns_ceil(end)) + sim.model.base_latency
                    }
                }
            };
            self.inner.clock.wait(&private, private.generation(), Some(wake));
        }
    }

    /// Buffer suited to this backend: unbacked for the simulated device,
    /// real aligned memory for the pool.
    pub fn alloc_buffer(&self, len: usize) -> IoBuffer {
        match self.inner.backend {
            BackendKind::Pool => IoBuffer::new(len),
            BackendKind::Simulated => IoBuffer::unbacked(len),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{ManualClock, RealClock};

    fn sim_ctx(capacity: usize) -> (IoContext, Arc<ManualClock>, FileHandle) {
        let clock = Arc::new(ManualClock::new());
        let ctx = IoContext::create(
            ContextConfig::simulated(capacity, DeviceModel::optane_905p()),
            clock.clone(),
        )
        .unwrap();
        let f = ctx.create_sim_file(64 << 20).unwrap();
        (ctx, clock, f)
    }

    #[test]
    fn creation_errors() {
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
        let mut cfg = ContextConfig::simulated(0, DeviceModel::optane_905p());
        assert_eq!(
            IoContext::create(cfg.clone(), clock.clone()).unwrap_err(),
            IoError::ZeroCapacity
        );
        cfg.capacity = 1;
        cfg.model = None;
        assert_eq!(
            IoContext::create(cfg, clock.clone()).unwrap_err(),
            IoError::MissingModel
        );
        let ctx = IoContext::create(ContextConfig::simulated(1000, DeviceModel::optane_905p()), clock).unwrap();
        assert_eq!(ctx.capacity(), 1000);
    }

    #[test]
    fn zero_length_completes_inline() {
        let (ctx, _, f) = sim_ctx(4);
        let b = IoBuffer::unbacked(0);
        assert_eq!(
            ctx.submit(IoRequest::read(f, &b, 0, 0)).unwrap(),
            SubmitResult::Completed(0)
        );
        assert_eq!(ctx.outstanding(), 0);
    }

    #[test]
    fn one_mib_read_takes_one_over_2548_seconds() {
        let (ctx, clock, f) = sim_ctx(4);
        let b = IoBuffer::unbacked(1 << 20);
        let SubmitResult::InFlight(id) = ctx.submit(IoRequest::read(f, &b, 1 << 20, 0)).unwrap() else {
            panic!("expected in-flight")
        };
        assert!(ctx.poll_completions(8).is_empty());
        let w = ctx.wait_completions(1, Duration::from_secs(1));
        assert!(!w.timed_out);
        assert_eq!(w.records[0].id, id);
        assert_eq!(w.records[0].result, Ok(1 << 20));
        let expect = 1e9 / 2548.0;
        assert!((w.records[0].completion_time.as_nanos() as f64 - expect).abs() < 1.0);
        assert_eq!(clock.now(), w.records[0].completion_time);
    }

    #[test]
    fn capacity_one_reports_queue_full() {
        let (ctx, _, f) = sim_ctx(1);
        let b = IoBuffer::unbacked(4096);
        assert!(matches!(
            ctx.submit(IoRequest::read(f, &b, 4096, 0)).unwrap(),
            SubmitResult::InFlight(_)
        ));
        assert_eq!(
            ctx.submit(IoRequest::read(f, &b, 4096, 4096)).unwrap(),
            SubmitResult::QueueFull
        );
    }

    #[test]
    fn poll_batches_respect_max() {
        let (ctx, clock, f) = sim_ctx(8);
        let b = IoBuffer::unbacked(4096);
        for i in 0..3 {
            ctx.submit(IoRequest::read(f, &b, 4096, i * 4096)).unwrap();
        }
        clock.advance_to(Duration::from_millis(1));
        assert_eq!(ctx.poll_completions(2).len(), 2);
        assert_eq!(ctx.poll_completions(2).len(), 1);
        assert!(ctx.poll_completions(2).is_empty());
        assert_eq!(ctx.outstanding(), 0);
    }

    #[test]
    fn wait_edge_cases() {
        let (ctx, clock, f) = sim_ctx(8);
        let w = ctx.wait_completions(0, Duration::from_secs(1));
        assert_eq!(w, WaitResult::default());
        assert_eq!(clock.now(), Duration::ZERO);
        let b = IoBuffer::unbacked(1 << 20);
        ctx.submit(IoRequest::read(f, &b, 1 << 20, 0)).unwrap();
        let w = ctx.wait_completions(1, Duration::from_micros(100));
        assert!(w.timed_out);
        assert!(w.records.is_empty());
    }

    #[test]
    fn direct_alignment_is_enforced() {
        let (ctx, _, f) = sim_ctx(8);
        let b = IoBuffer::new(4096);
        let err = ctx.submit(IoRequest::read(f, &b, 4096, 100).direct(true)).unwrap_err();
        assert!(matches!(
            err,
            IoError::Misaligned {
                field: "offset",
                value: 100,
                ..
            }
        ));
        let err = ctx.submit(IoRequest::read(f, &b, 1000, 0).direct(true)).unwrap_err();
        assert!(matches!(
            err,
            IoError::Misaligned {
                field: "segment length",
                ..
            }
        ));
        let skewed = IoBuffer::misaligned(4096, 8);
        let err = ctx
            .submit(IoRequest::read(f, &skewed, 4096, 0).direct(true))
            .unwrap_err();
        assert!(matches!(
            err,
            IoError::Misaligned {
                field: "buffer address",
                ..
            }
        ));
        // Same request without the direct flag is fine.
        assert!(ctx.submit(IoRequest::read(f, &b, 1000, 100)).is_ok());
        assert_eq!(
            ctx.submit(IoRequest::read(FileHandle(9), &b, 512, 0)).unwrap_err(),
            IoError::InvalidFile(FileHandle(9))
        );
    }

    #[test]
    fn short_read_at_end_of_file() {
        let clock = Arc::new(ManualClock::new());
        let ctx = IoContext::create(ContextConfig::simulated(4, DeviceModel::optane_905p()), clock).unwrap();
        let f = ctx.create_sim_file(6000).unwrap();
        let b = IoBuffer::unbacked(4096);
        ctx.submit(IoRequest::read(f, &b, 4096, 4096)).unwrap();
        let w = ctx.wait_completions(1, Duration::from_secs(1));
        assert_eq!(w.records[0].result, Ok(6000 - 4096));
        ctx.submit(IoRequest::write(f, &b, 4096, 8192)).unwrap();
        assert_eq!(ctx.file_size(f).unwrap(), 8192 + 4096);
    }

    #[test]
    fn sync_execution_waits_for_device() {
        let (ctx, clock, f) = sim_ctx(4);
        let b = IoBuffer::unbacked(1 << 20);
        assert_eq!(ctx.execute_sync(IoRequest::read(f, &b, 1 << 20, 0)), Ok(1 << 20));
        let expect = (1e9 / 2548.0_f64).ceil() as u64;
        assert_eq!(as_nanos(clock.now()), expect);
        assert_eq!(ctx.outstanding(), 0);
    }

    #[test]
    fn pool_round_trip_and_queueing() {
        let tmp = tempfile::tempfile().unwrap();
        let ctx = IoContext::create(ContextConfig::pool(64, 4), Arc::new(RealClock::new())).unwrap();
        let f = ctx.register_file(tmp).unwrap();
        let bufs: Vec<IoBuffer> = (0..8u8).map(|i| IoBuffer::from_slice(&[i; 4096])).collect();
        for (i, b) in bufs.iter().enumerate() {
            let r = ctx.submit(IoRequest::write(f, b, 4096, i as u64 * 4096)).unwrap();
            assert!(matches!(r, SubmitResult::InFlight(_)));
        }
        assert!(ctx.outstanding() <= 8);
        assert_eq!(ctx.peak_outstanding(), 8);
        let mut got = 0;
        while got < 8 {
            got += ctx.wait_completions(1, Duration::from_secs(5)).records.len();
        }
        assert_eq!(ctx.outstanding(), 0);
        let back = IoBuffer::new(8 * 4096);
        assert_eq!(ctx.execute_sync(IoRequest::read(f, &back, 8 * 4096, 0)), Ok(8 * 4096));
        let data = back.to_vec().unwrap();
        for i in 0..8 {
            assert!(data[i * 4096..(i + 1) * 4096].iter().all(|&x| x == i as u8));
        }
        assert_eq!(
            ctx.submit(IoRequest::read(f, &IoBuffer::unbacked(8), 8, 0)),
            Err(IoError::UnbackedBuffer)
        );
    }

    #[test]
    fn pool_vectored_read_stops_at_eof() {
        let tmp = tempfile::tempfile().unwrap();
        tmp.write_all_at(&[7u8; 1000], 0).unwrap();
        let ctx = IoContext::create(ContextConfig::pool(4, 1), Arc::new(RealClock::new())).unwrap();
        let f = ctx.register_file(tmp).unwrap();
        let (a, b) = (IoBuffer::new(600), IoBuffer::new(600));
        let req = IoRequest::new(IoKind::Read, f, 0, vec![(a.clone(), 600), (b.clone(), 600)]);
        assert_eq!(ctx.execute_sync(req), Ok(1000));
        assert!(b.to_vec().unwrap()[..400].iter().all(|&x| x == 7));
    }

    #[test]
    fn strict_mode_completes_extending_writes_inline() {
        let tmp = tempfile::tempfile().unwrap();
        let mut cfg = ContextConfig::pool(4, 1);
        cfg.strict_extend = true;
        let ctx = IoContext::create(cfg, Arc::new(RealClock::new())).unwrap();
        let f = ctx.register_file(tmp).unwrap();
        let b = IoBuffer::from_slice(&[1; 512]);
        assert_eq!(
            ctx.submit(IoRequest::write(f, &b, 512, 0)).unwrap(),
            SubmitResult::Completed(512)
        );
        assert!(matches!(
            ctx.submit(IoRequest::write(f, &b, 512, 0)).unwrap(),
            SubmitResult::InFlight(_)
        ));
    }
}
