use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::clock::as_nanos;
use super::real_engine::Parker;
use super::trace::{TraceEvent, TraceKind};
use super::virtual_engine::Handoff;
use super::{ResourceId, RuntimeError, ServiceId, StuckTask, TaskId, TaskState};

pub(crate) type Body = Box<dyn FnOnce() + Send + 'static>;
pub(crate) type PollFn = Box<dyn FnMut() -> usize + Send + 'static>;

pub(crate) struct TaskEntry {
    pub state: TaskState,
    pub body: Option<Body>,
    pub pending_preds: usize,
    pub successors: Vec<u64>,
    pub event_count: u64,
    pub increments: u64,
    pub decrements: u64,
    pub pause_epoch: u64,
    pub redeemed_epoch: u64,
    pub wake_gen: u64,
    pub waiting_cell: Option<u64>,
    pub handoff: Option<Arc<Handoff>>,
    pub parker: Option<Arc<Parker>>,
    pub resources: Vec<ResourceId>,
}

#[derive(Default)]
pub(crate) struct ResourceState {
    last_writer: Option<u64>,
    readers: Vec<u64>,
}

#[derive(Clone)]
pub(crate) struct ServiceEntry {
    pub id: ServiceId,
    pub name: String,
    pub period_hint: Duration,
    pub callback: Arc<Mutex<PollFn>>,
    pub active: Arc<AtomicBool>,
    pub invocations: Arc<AtomicU64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Event {
    Wake { task: u64, gen: u64 },
    Timer { key: (u64, u64) },
    Poll,
}

#[derive(Default)]
pub(crate) struct VirtualState {
    pub now: u64,
    pub events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    pub seq: u64,
    pub free_agents: usize,
    pub running_loop: bool,
    pub poll_scheduled: bool,
    pub last_progress: u64,
    pub pool: Vec<Arc<Handoff>>,
    pub threads: Vec<JoinHandle<()>>,
    pub assigned_contexts: usize,
    pub cell_waiters: HashMap<u64, Vec<(u64, u64)>>,
}

impl VirtualState {
    pub fn push(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, ev)));
    }
}

#[derive(Default)]
pub(crate) struct RealState {
    pub started: bool,
    pub threads: Vec<JoinHandle<()>>,
    pub spares: Vec<Arc<Parker>>,
    pub total_threads: usize,
    pub next_poll: u64,
    /// Timer callbacks taken from `timers` but not yet finished.
    pub timers_firing: usize,
}

pub(crate) struct State {
    pub virtual_mode: bool,
    pub epoch: Instant,
    pub tasks: Vec<TaskEntry>,
    pub resources: Vec<ResourceState>,
    pub ready: BTreeSet<(u64, u64)>,
    pub live: usize,
    pub running: usize,
    pub paused: usize,
    pub pending: usize,
    pub completed: u64,
    pub services: Vec<ServiceEntry>,
    pub next_service: u64,
    pub timers: BTreeMap<(u64, u64), Body>,
    pub next_timer: u64,
    pub trace: Option<Vec<TraceEvent>>,
    pub shutdown: bool,
    pub panics: Vec<(TaskId, String)>,
    pub extensions: HashSet<&'static str>,
    pub v: VirtualState,
    pub r: RealState,
}

impl State {
    pub fn new(virtual_mode: bool, workers: usize, trace: bool) -> Self {
        State {
            virtual_mode,
            epoch: Instant::now(),
            tasks: Vec::new(),
            resources: Vec::new(),
            ready: BTreeSet::new(),
            live: 0,
            running: 0,
            paused: 0,
            pending: 0,
            completed: 0,
            services: Vec::new(),
            next_service: 0,
            timers: BTreeMap::new(),
            next_timer: 0,
            trace: trace.then(Vec::new),
            shutdown: false,
            panics: Vec::new(),
            extensions: HashSet::new(),
            v: VirtualState {
                free_agents: workers,
                ..Default::default()
            },
            r: RealState::default(),
        }
    }

    pub fn now_ns(&self) -> u64 {
        if self.virtual_mode {
            self.v.now
        } else {
            as_nanos(self.epoch.elapsed())
        }
    }

    pub fn record(&mut self, kind: TraceKind, id: u64) {
        let time_ns = self.now_ns();
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent { time_ns, kind, id });
        }
    }

    pub fn progress(&mut self) {
        if self.virtual_mode {
            self.v.last_progress = self.v.now;
        }
    }

    pub fn entry(&self, task: TaskId) -> Result<&TaskEntry, RuntimeError> {
        self.tasks.get(task.0 as usize).ok_or(RuntimeError::UnknownTask(task))
    }

    pub fn entry_mut(&mut self, task: TaskId) -> Result<&mut TaskEntry, RuntimeError> {
        self.tasks
            .get_mut(task.0 as usize)
            .ok_or(RuntimeError::UnknownTask(task))
    }

    pub fn register_resource(&mut self) -> ResourceId {
        self.resources.push(ResourceState::default());
        ResourceId(self.resources.len() as u64 - 1)
    }

    fn is_done(&self, id: u64) -> bool {
        self.tasks[id as usize].state == TaskState::Completed
    }

    pub fn spawn(&mut self, body: Body, reads: &[ResourceId], writes: &[ResourceId]) -> Result<TaskId, RuntimeError> {
        if self.shutdown {
            return Err(RuntimeError::ShutDown);
        }
        for r in reads.iter().chain(writes) {
            if r.0 as usize >= self.resources.len() {
                return Err(RuntimeError::UnknownResource(*r));
            }
        }
        let id = self.tasks.len() as u64;
        let write_set: BTreeSet<u64> = writes.iter().map(|r| r.0).collect();
        let read_set: BTreeSet<u64> = reads.iter().map(|r| r.0).filter(|r| !write_set.contains(r)).collect();

        let mut preds: Vec<u64> = Vec::new();
        for &r in &read_set {
            if let Some(w) = self.resources[r as usize].last_writer {
                if !self.is_done(w) {
                    preds.push(w);
                }
            }
        }
        for &r in &write_set {
            let res = &self.resources[r as usize];
            if let Some(w) = res.last_writer {
                if !self.is_done(w) {
                    preds.push(w);
                }
            }
            for &rd in &res.readers {
                if !self.is_done(rd) {
                    preds.push(rd);
                }
            }
        }
        preds.sort_unstable();
        preds.dedup();

        for &r in &read_set {
            let tasks = &self.tasks;
            let res = &mut self.resources[r as usize];
            res.readers.retain(|&t| tasks[t as usize].state != TaskState::Completed);
            res.readers.push(id);
        }
        for &r in &write_set {
            let res = &mut self.resources[r as usize];
            res.last_writer = Some(id);
            res.readers.clear();
        }
        for &p in &preds {
            self.tasks[p as usize].successors.push(id);
        }

        let mut resources: Vec<ResourceId> = reads.to_vec();
        resources.extend_from_slice(writes);
        self.tasks.push(TaskEntry {
            state: TaskState::Created,
            body: Some(body),
            pending_preds: preds.len(),
            successors: Vec::new(),
            event_count: 0,
            increments: 0,
            decrements: 0,
            pause_epoch: 0,
            redeemed_epoch: 0,
            wake_gen: 0,
            waiting_cell: None,
            handoff: None,
            parker: None,
            resources,
        });
        self.live += 1;
        self.record(TraceKind::Spawn, id);
        if preds.is_empty() {
            self.make_ready(id);
        }
        Ok(TaskId(id))
    }

    pub fn make_ready(&mut self, id: u64) {
        self.tasks[id as usize].state = TaskState::Ready;
        let now = self.now_ns();
        self.ready.insert((now, id));
        self.record(TraceKind::Ready, id);
        self.progress();
    }

    pub fn complete(&mut self, id: u64) {
        let entry = &mut self.tasks[id as usize];
        entry.state = TaskState::Completed;
        let succ = std::mem::take(&mut entry.successors);
        self.live -= 1;
        self.completed += 1;
        self.record(TraceKind::Complete, id);
        self.progress();
        for s in succ {
            let e = &mut self.tasks[s as usize];
            e.pending_preds -= 1;
            if e.pending_preds == 0 {
                self.make_ready(s);
            }
        }
    }

    pub fn body_end(&mut self, id: u64) {
        self.running -= 1;
        self.record(TraceKind::BodyEnd, id);
        let entry = &mut self.tasks[id as usize];
        if entry.event_count == 0 {
            self.complete(id);
        } else {
            entry.state = TaskState::BodyFinishedEventsPending;
            self.pending += 1;
            self.progress();
        }
    }

    pub fn increase_events(&mut self, task: TaskId, n: u64) -> Result<(), RuntimeError> {
        if n == 0 {
            return Err(RuntimeError::InvalidCount);
        }
        let entry = self.entry_mut(task)?;
        match entry.state {
            TaskState::Running | TaskState::Paused => {
                entry.event_count += n;
                entry.increments += n;
                Ok(())
            }
            TaskState::Completed => Err(RuntimeError::TaskCompleted(task)),
            TaskState::BodyFinishedEventsPending => Err(RuntimeError::IncrementAfterBodyExit(task)),
            TaskState::Created | TaskState::Ready => Err(RuntimeError::TaskNotStarted(task)),
        }
    }

    pub fn decrease_events(&mut self, task: TaskId, n: u64) -> Result<(), RuntimeError> {
        if n == 0 {
            return Err(RuntimeError::InvalidCount);
        }
        let entry = self.entry_mut(task)?;
        if entry.state == TaskState::Completed {
            return Err(RuntimeError::TaskCompleted(task));
        }
        if n > entry.event_count {
            return Err(RuntimeError::CounterUnderflow {
                task,
                count: entry.event_count,
                requested: n,
            });
        }
        entry.event_count -= n;
        entry.decrements += n;
        if entry.event_count == 0 && entry.state == TaskState::BodyFinishedEventsPending {
            self.pending -= 1;
            self.complete(task.0);
        }
        Ok(())
    }

    pub fn stuck_tasks(&self) -> Vec<StuckTask> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, e)| e.state != TaskState::Completed)
            .map(|(i, e)| StuckTask {
                task: TaskId(i as u64),
                state: e.state,
                event_count: e.event_count,
                resources: e.resources.clone(),
            })
            .collect()
    }
}
