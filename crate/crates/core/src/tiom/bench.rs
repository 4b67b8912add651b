use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{build_task_graph, io_offsets};
use super::kernel::{compute_kernel, iterations_per_us};
use super::{Api, TiomConfig, TiomError};
use crate::io::{
    BackendKind, ContextConfig, DeviceModel, FileHandle, IoBuffer, IoContext, IoError, IoFailure, IoKind, IoRequest,
};
use crate::runtime::{ClockMode, Runtime, RuntimeConfig, RuntimeHandle, TaskId};
use crate::tasio::{Tasio, TasioConfig, TasioError};

/// Where and how a benchmark runs.
#[derive(Debug, Clone)]
pub struct BenchEnv {
    pub workers: usize,
    pub clock_mode: ClockMode,
    pub poll_period: Duration,
    pub backend: BackendKind,
    /// Simulated backend only.
    pub model: DeviceModel,
    pub delegates: usize,
    pub max_in_flight: usize,
    /// Pool backend file. A temporary file is used (and removed) when unset.
    pub file_path: Option<PathBuf>,
    pub direct: bool,
}

impl Default for BenchEnv {
    fn default() -> Self {
        Self {
            workers: 56,
            clock_mode: ClockMode::Virtual,
            poll_period: Duration::from_micros(100),
            backend: BackendKind::Simulated,
            model: DeviceModel::optane_905p(),
            delegates: 4,
            max_in_flight: 1000,
            file_path: None,
            direct: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub elapsed: Duration,
    pub bytes: u64,
    pub bandwidth_mibs: f64,
    pub tasks_executed: u64,
    /// False when the time limit cut the run short.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub result: BenchResult,
    /// Bytes transferred per I/O slot; `None` for slots skipped by the time
    /// limit.
    pub per_call: Vec<Option<usize>>,
}

/// The I/O surface a run uses: synchronous calls on a bare context, or the
/// task-aware layer.
#[derive(Clone)]
pub enum BenchIo {
    Standalone(IoContext),
    Tasio(Tasio),
}

impl BenchIo {
    fn context(&self) -> &IoContext {
        match self {
            BenchIo::Standalone(c) => c,
            BenchIo::Tasio(t) => t.context(),
        }
    }
}

/// Builds a runtime and I/O stack from `env`, runs `cfg` once and tears
/// everything down.
pub fn run_benchmark(cfg: &TiomConfig, env: &BenchEnv) -> Result<BenchReport, TiomError> {
    cfg.validate()?;
    let rt = Runtime::new(RuntimeConfig::new(env.workers, env.clock_mode).with_poll_period(env.poll_period))?;
    let h = rt.handle();
    if env.clock_mode == ClockMode::Real {
        iterations_per_us();
    }
    let model = (env.backend == BackendKind::Simulated).then(|| env.model.clone());
    let io = match cfg.api {
        Api::Standalone => {
            let ctx_cfg = ContextConfig {
                capacity: env.max_in_flight,
                backend: env.backend,
                model,
                delegates: env.delegates,
                strict_extend: false,
            };
            BenchIo::Standalone(IoContext::create(ctx_cfg, Arc::new(h.clone()))?)
        }
        Api::Blocking | Api::NonBlocking => {
            let t_cfg = TasioConfig {
                max_in_flight: env.max_in_flight,
                backend: env.backend,
                model,
                delegates: env.delegates,
                direct: env.direct,
                ..Default::default()
            };
            BenchIo::Tasio(Tasio::init(&h, t_cfg)?)
        }
    };
    let (file, temp) = match env.backend {
        BackendKind::Simulated => (io.context().create_sim_file(cfg.file_size)?, None),
        BackendKind::Pool => {
            let (path, temp) = match &env.file_path {
                Some(p) => (p.clone(), None),
                None => {
                    let p = std::env::temp_dir().join(format!("tiom-{}-{}.dat", std::process::id(), cfg.seed));
                    (p.clone(), Some(p))
                }
            };
            let f = prepare_file(&path, cfg.file_size)?;
            (io.context().register_file(f)?, temp)
        }
    };
    let report = run_on(cfg, &rt, &io, file, env.direct);
    if let BenchIo::Tasio(t) = &io {
        t.shutdown();
    }
    rt.shutdown();
    if let Some(p) = temp {
        let _ = std::fs::remove_file(p);
    }
    report
}

/// Creates `path` with `size` zero bytes written out, so timed writes never
/// extend the file.
fn prepare_file(path: &Path, size: u64) -> Result<File, TiomError> {
    let err = |e: std::io::Error| TiomError::File(format!("{}: {e}", path.display()));
    let mut f = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(true)
        .open(path)
        .map_err(err)?;
    let zeros = vec![0u8; 1 << 20];
    let mut left = size;
    while left > 0 {
        let n = left.min(zeros.len() as u64) as usize;
        f.write_all(&zeros[..n]).map_err(err)?;
        left -= n as u64;
    }
    f.sync_all().map_err(err)?;
    Ok(f)
}

/// Deterministic block content for a write at `offset`.
pub(crate) fn fill_block(buf: &IoBuffer, seed: u64, offset: u64) {
    buf.with_mut(|b| ChaCha8Rng::seed_from_u64(seed ^ offset.wrapping_mul(0x9e37_79b9_7f4a_7c15)).fill_bytes(b));
}

struct Shared {
    results: Mutex<Vec<Option<Result<usize, IoFailure>>>>,
    failed: AtomicBool,
    start: Duration,
    limit: Option<Duration>,
}

impl Shared {
    fn skip(&self, h: &RuntimeHandle) -> bool {
        self.failed.load(Ordering::Relaxed) || self.limit.is_some_and(|l| h.now().saturating_sub(self.start) >= l)
    }

    fn record(&self, slot: usize, r: Result<usize, IoFailure>) {
        if r.is_err() {
            self.failed.store(true, Ordering::Relaxed);
        }
        self.results.lock().unwrap()[slot] = Some(r);
    }
}

fn failure(e: impl std::fmt::Display) -> IoFailure {
    IoFailure {
        kind: std::io::ErrorKind::Other,
        message: e.to_string(),
    }
}

fn from_io(e: IoError) -> IoFailure {
    match e {
        IoError::Io(f) => f,
        e => failure(e),
    }
}

fn from_tasio(e: TasioError) -> IoFailure {
    match e {
        TasioError::Io(e) => from_io(e),
        e => failure(e),
    }
}

/// Runs `cfg` on an existing runtime and I/O stack against `file`.
pub fn run_on(
    cfg: &TiomConfig,
    rt: &Runtime,
    io: &BenchIo,
    file: FileHandle,
    direct: bool,
) -> Result<BenchReport, TiomError> {
    let graph = build_task_graph(cfg)?;
    let offsets = Arc::new(io_offsets(cfg));
    let h = rt.handle();
    let resources: Vec<_> = (0..graph.resources).map(|_| h.register_resource()).collect();
    let kind = cfg.pattern.kind();
    let shared = Arc::new(Shared {
        results: Mutex::new(vec![None; offsets.len()]),
        failed: AtomicBool::new(false),
        start: h.now(),
        limit: cfg.time_limit,
    });
    let mut slot_tasks: Vec<Option<TaskId>> = vec![None; offsets.len()];
    for spec in &graph.tasks {
        let work = spec.work;
        let (h2, io2, sh, offs) = (h.clone(), io.clone(), shared.clone(), offsets.clone());
        let seed = cfg.seed;
        let api = cfg.api;
        let body = move || {
            if sh.skip(&h2) {
                return;
            }
            compute_kernel(&h2, work.compute());
            let Some(slot) = work.slot() else { return };
            let (off, len) = offs[slot];
            let buf = io2.context().alloc_buffer(len);
            if kind == IoKind::Write {
                fill_block(&buf, seed, off);
            }
            match (&io2, api) {
                (BenchIo::Standalone(ctx), _) => {
                    let req = IoRequest::new(kind, file, off, vec![(buf, len)]).direct(direct);
                    sh.record(slot, ctx.execute_sync(req).map_err(from_io));
                }
                (BenchIo::Tasio(t), Api::NonBlocking) => {
                    let r = match kind {
                        IoKind::Read => t.ta_pread(file, &buf, len, off),
                        IoKind::Write => t.ta_pwrite(file, &buf, len, off),
                    };
                    if let Err(e) = r {
                        sh.record(slot, Err(from_tasio(e)));
                    }
                }
                (BenchIo::Tasio(t), _) => {
                    let r = match kind {
                        IoKind::Read => t.ta_pread_blocking(file, &buf, len, off),
                        IoKind::Write => t.ta_pwrite_blocking(file, &buf, len, off),
                    };
                    sh.record(slot, r.map_err(from_tasio));
                }
            }
        };
        let reads: Vec<_> = spec.reads.iter().map(|&r| resources[r]).collect();
        let writes: Vec<_> = spec.writes.iter().map(|&r| resources[r]).collect();
        let id = h.spawn_task(body, &reads, &writes)?;
        if let Some(slot) = work.slot() {
            slot_tasks[slot] = Some(id);
        }
    }
    let stats = rt.run_to_completion()?;
    let mut results = std::mem::take(&mut *shared.results.lock().unwrap());
    if let BenchIo::Tasio(t) = io {
        if cfg.api == Api::NonBlocking {
            for (slot, task) in slot_tasks.iter().enumerate() {
                if let Some(r) = t.take_results(task.expect("every slot has a task")).pop() {
                    results[slot] = Some(r);
                }
            }
        }
    }
    let mut per_call = Vec::with_capacity(results.len());
    for (slot, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(n)) => per_call.push(Some(n)),
            Some(Err(failure)) => {
                return Err(TiomError::BlockIo {
                    offset: offsets[slot].0,
                    failure,
                })
            }
            None => per_call.push(None),
        }
    }
    let bytes: u64 = per_call.iter().flatten().map(|&n| n as u64).sum();
    let secs = stats.elapsed.as_secs_f64();
    Ok(BenchReport {
        result: BenchResult {
            elapsed: stats.elapsed,
            bytes,
            bandwidth_mibs: if secs > 0.0 {
                bytes as f64 / (1024.0 * 1024.0) / secs
            } else {
                0.0
            },
            tasks_executed: stats.tasks_executed,
            completed: per_call.iter().all(Option::is_some),
        },
        per_call,
    })
}
