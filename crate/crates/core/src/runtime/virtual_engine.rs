//! Deterministic discrete-event execution.
//!
//! Every task body runs on its own context thread, but only one thread (the
//! driver or exactly one body) executes at any moment: control is handed back
//! and forth through a [`Handoff`]. Bodies yield to the driver whenever they
//! consume virtual time, pause, block on a [`WaitCell`](super::WaitCell) or
//! finish, so the schedule depends only on virtual time and spawn order.

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::clock::as_nanos;
use super::state::{Body, Event, State};
use super::trace::TraceKind;
use super::{set_current, RunStats, RuntimeError, Shared, TaskCtx, TaskId, TaskState};

pub(crate) enum CtxMsg {
    Start(TaskId, Body),
    Continue,
    Exit,
}

#[derive(Debug)]
pub(crate) enum Yield {
    Compute(u64),
    Hold(Option<u64>),
    Pause,
    End(Option<String>),
}

/// Unwinds a suspended body when the runtime is torn down.
pub(crate) struct ShutdownUnwind;

#[derive(Default)]
struct Slot {
    to_ctx: Option<CtxMsg>,
    to_driver: Option<Yield>,
}

#[derive(Default)]
pub(crate) struct Handoff {
    slot: Mutex<Slot>,
    cv: Condvar,
}

impl Handoff {
    /// Driver side: pass control to the context and wait for it to yield.
    fn drive(&self, msg: CtxMsg) -> Yield {
        let mut s = self.slot.lock().unwrap();
        s.to_ctx = Some(msg);
        self.cv.notify_all();
        loop {
            if let Some(y) = s.to_driver.take() {
                return y;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    fn send(&self, msg: CtxMsg) {
        let mut s = self.slot.lock().unwrap();
        s.to_ctx = Some(msg);
        self.cv.notify_all();
    }

    fn recv(&self) -> CtxMsg {
        let mut s = self.slot.lock().unwrap();
        loop {
            if let Some(m) = s.to_ctx.take() {
                return m;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    /// Context side: hand control back to the driver and wait to be resumed.
    pub(crate) fn yield_to_driver(&self, y: Yield) {
        {
            let mut s = self.slot.lock().unwrap();
            s.to_driver = Some(y);
            self.cv.notify_all();
        }
        match self.recv() {
            CtxMsg::Continue => {}
            CtxMsg::Exit => panic::resume_unwind(Box::new(ShutdownUnwind)),
            CtxMsg::Start(..) => unreachable!("start message delivered to a busy context"),
        }
    }
}

pub(crate) fn panic_message(p: &(dyn Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "task panicked".to_string()
    }
}

fn context_main(shared: std::sync::Weak<Shared>, h: Arc<Handoff>) {
    loop {
        match h.recv() {
            CtxMsg::Start(task, body) => {
                set_current(Some(TaskCtx {
                    shared: shared.clone(),
                    task,
                    handoff: Some(h.clone()),
                    parker: None,
                }));
                let r = panic::catch_unwind(AssertUnwindSafe(body));
                set_current(None);
                match r {
                    Err(p) if p.is::<ShutdownUnwind>() => return,
                    Err(p) => h.yield_to_end(Some(panic_message(p.as_ref()))),
                    Ok(()) => h.yield_to_end(None),
                }
            }
            CtxMsg::Continue => {}
            CtxMsg::Exit => return,
        }
    }
}

impl Handoff {
    fn yield_to_end(&self, panic: Option<String>) {
        let mut s = self.slot.lock().unwrap();
        s.to_driver = Some(Yield::End(panic));
        self.cv.notify_all();
    }
}

impl Shared {
    fn acquire_context(self: &Arc<Self>, st: &mut State) -> Arc<Handoff> {
        st.v.assigned_contexts += 1;
        if let Some(h) = st.v.pool.pop() {
            return h;
        }
        let h = Arc::new(Handoff::default());
        let weak = Arc::downgrade(self);
        let hc = h.clone();
        let jh = std::thread::Builder::new()
            .name("task-context".into())
            .spawn(move || context_main(weak, hc))
            .expect("failed to spawn context thread");
        st.v.threads.push(jh);
        h
    }

    pub(crate) fn ensure_poll(&self, st: &mut State) {
        if st.virtual_mode && !st.v.poll_scheduled && !st.services.is_empty() {
            let p = as_nanos(self.config.poll_period).max(1);
            let at = (st.v.now / p + 1) * p;
            st.v.push(at, Event::Poll);
            st.v.poll_scheduled = true;
        }
    }

    pub(crate) fn run_virtual(self: &Arc<Self>) -> Result<RunStats, RuntimeError> {
        let (start, done0) = {
            let mut st = self.state.lock().unwrap();
            if st.v.running_loop {
                return Err(RuntimeError::AlreadyRunning);
            }
            st.v.running_loop = true;
            st.v.last_progress = st.v.now;
            self.ensure_poll(&mut st);
            (st.v.now, st.completed)
        };
        let result = self.virtual_loop();
        let mut st = self.state.lock().unwrap();
        st.v.running_loop = false;
        result?;
        if let Some((task, message)) = st.panics.first().cloned() {
            return Err(RuntimeError::TaskPanicked { task, message });
        }
        Ok(RunStats {
            elapsed: Duration::from_nanos(st.v.now - start),
            tasks_executed: st.completed - done0,
        })
    }

    fn virtual_loop(self: &Arc<Self>) -> Result<(), RuntimeError> {
        let stall = as_nanos(self.config.stall_timeout);
        loop {
            // Settle everything at the current instant before dispatching.
            loop {
                let ev = {
                    let mut st = self.state.lock().unwrap();
                    let now = st.v.now;
                    match st.v.events.peek() {
                        Some(top) if top.0 .0 <= now => st.v.events.pop().unwrap().0 .2,
                        _ => break,
                    }
                };
                self.process_event(ev);
            }
            self.dispatch();

            let mut st = self.state.lock().unwrap();
            let now = st.v.now;
            if matches!(st.v.events.peek(), Some(top) if top.0 .0 <= now) {
                continue;
            }
            if st.live == 0 {
                return Ok(());
            }
            let Some(top) = st.v.events.peek() else {
                return Err(RuntimeError::Deadlock {
                    stuck: st.stuck_tasks(),
                });
            };
            let next = top.0 .0;
            if next.saturating_sub(st.v.last_progress) > stall {
                return Err(RuntimeError::Deadlock {
                    stuck: st.stuck_tasks(),
                });
            }
            st.v.now = next;
        }
    }

    fn process_event(self: &Arc<Self>, ev: Event) {
        match ev {
            Event::Wake { task, gen } => {
                let h = {
                    let mut st = self.state.lock().unwrap();
                    let e = &mut st.tasks[task as usize];
                    if e.wake_gen != gen {
                        return;
                    }
                    e.wake_gen += 1;
                    let h = e.handoff.clone().expect("woken task has no context");
                    if let Some(cell) = e.waiting_cell.take() {
                        if let Some(list) = st.v.cell_waiters.get_mut(&cell) {
                            list.retain(|&(t, _)| t != task);
                            if list.is_empty() {
                                st.v.cell_waiters.remove(&cell);
                            }
                        }
                    }
                    h
                };
                let y = h.drive(CtxMsg::Continue);
                self.handle_yield(task, y);
            }
            Event::Timer { key } => {
                let cb = {
                    let mut st = self.state.lock().unwrap();
                    st.progress();
                    st.timers.remove(&key)
                };
                if let Some(cb) = cb {
                    cb();
                }
            }
            Event::Poll => {
                self.run_polls();
                let mut st = self.state.lock().unwrap();
                st.v.poll_scheduled = false;
                if st.live > 0 {
                    self.ensure_poll(&mut st);
                }
            }
        }
    }

    fn dispatch(self: &Arc<Self>) {
        loop {
            let (task, h, msg) = {
                let mut st = self.state.lock().unwrap();
                if st.v.free_agents == 0 {
                    return;
                }
                let Some((t, id)) = st.ready.pop_first() else {
                    return;
                };
                let _ = t;
                st.v.free_agents -= 1;
                st.running += 1;
                st.progress();
                match st.tasks[id as usize].state {
                    TaskState::Ready => {
                        st.tasks[id as usize].state = TaskState::Running;
                        st.record(TraceKind::Start, id);
                        let body = st.tasks[id as usize].body.take().expect("body already taken");
                        let h = self.acquire_context(&mut st);
                        st.tasks[id as usize].handoff = Some(h.clone());
                        (id, h, CtxMsg::Start(TaskId(id), body))
                    }
                    TaskState::Paused => {
                        st.paused -= 1;
                        st.tasks[id as usize].state = TaskState::Running;
                        st.record(TraceKind::Resume, id);
                        let h = st.tasks[id as usize]
                            .handoff
                            .clone()
                            .expect("paused task has no context");
                        (id, h, CtxMsg::Continue)
                    }
                    other => unreachable!("task {id} in ready queue while {other:?}"),
                }
            };
            let y = h.drive(msg);
            self.handle_yield(task, y);
        }
    }

    fn handle_yield(&self, task: u64, y: Yield) {
        let mut st = self.state.lock().unwrap();
        let now = st.v.now;
        match y {
            Yield::Compute(d) => {
                let gen = st.tasks[task as usize].wake_gen;
                st.v.push(now + d, Event::Wake { task, gen });
            }
            Yield::Hold(deadline) => {
                if let Some(t) = deadline {
                    let gen = st.tasks[task as usize].wake_gen;
                    st.v.push(t.max(now), Event::Wake { task, gen });
                }
            }
            Yield::Pause => {
                st.v.free_agents += 1;
            }
            Yield::End(panic) => {
                st.v.free_agents += 1;
                st.v.assigned_contexts -= 1;
                if let Some(h) = st.tasks[task as usize].handoff.take() {
                    st.v.pool.push(h);
                }
                if let Some(message) = panic {
                    st.panics.push((TaskId(task), message));
                }
                st.body_end(task);
            }
        }
    }

    /// Virtual-mode wait from inside a task body.
    pub(crate) fn virtual_wait(&self, ctx: &TaskCtx, cell: &super::WaitCell, seen: u64, deadline: Option<u64>) {
        {
            let mut st = self.state.lock().unwrap();
            if cell.generation() != seen {
                return;
            }
            let gen = st.tasks[ctx.task.0 as usize].wake_gen;
            st.tasks[ctx.task.0 as usize].waiting_cell = Some(cell.id());
            st.v.cell_waiters.entry(cell.id()).or_default().push((ctx.task.0, gen));
        }
        ctx.handoff
            .as_ref()
            .expect("virtual task without context")
            .yield_to_driver(Yield::Hold(deadline));
    }

    pub(crate) fn virtual_notify(&self, cell: &super::WaitCell) {
        let mut st = self.state.lock().unwrap();
        let Some(waiters) = st.v.cell_waiters.remove(&cell.id()) else {
            return;
        };
        let now = st.v.now;
        for (task, gen) in waiters {
            if st.tasks[task as usize].wake_gen == gen {
                st.v.push(now, Event::Wake { task, gen });
            }
        }
    }

    pub(crate) fn shutdown_virtual(&self, st: &mut State) -> Vec<std::thread::JoinHandle<()>> {
        for h in st.v.pool.drain(..) {
            h.send(CtxMsg::Exit);
        }
        for e in st.tasks.iter_mut() {
            if let Some(h) = e.handoff.take() {
                h.send(CtxMsg::Exit);
            }
        }
        std::mem::take(&mut st.v.threads)
    }
}
