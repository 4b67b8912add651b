//! Stand-alone discrete-event model of a TIOM run.
//!
//! Shares nothing with the runtime but the graph description and the device
//! model: agents take ready tasks in `(ready time, task index)` order, the
//! device is a shared-rate server admitting at most `max_depth` requests in
//! arrival order, and task-aware completions are only noticed on polling
//! ticks.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::time::Duration;

use crate::io::{DeviceModel, IoKind};
use crate::tiom::{Api, TaskGraph};

#[derive(Debug, Clone)]
pub struct OracleSetup {
    pub workers: usize,
    pub model: DeviceModel,
    pub api: Api,
    pub kind: IoKind,
    /// Bytes per I/O slot.
    pub block_size: u64,
    pub poll_period: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("task graph has a cycle through task {0}")]
    Cyclic(usize),
    #[error("edge ({0}, {1}) references a missing task")]
    DanglingEdge(usize, usize),
    #[error("at least one worker is needed")]
    NoWorkers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    /// Compute phase finished; continue the body.
    Step(usize),
    /// Synchronous I/O visible; continue the body on the same agent.
    SyncDone(usize),
    /// Blocking-wrapper I/O noticed by the poller; the task becomes ready.
    Resume(usize),
    /// Non-blocking I/O noticed by the poller.
    EventDone(usize),
}

struct Device {
    depth: usize,
    at: f64,
    active: Vec<(usize, f64)>,
    queue: VecDeque<(usize, f64)>,
}

impl Device {
    fn fill(&mut self) {
        while self.active.len() < self.depth {
            let Some(j) = self.queue.pop_front() else { break };
            self.active.push(j);
        }
    }

    fn next_end(&self) -> Option<f64> {
        let n = self.active.len() as f64;
        self.active
            .iter()
            .map(|&(_, w)| w)
            .reduce(f64::min)
            .map(|w| self.at + w * n)
    }

    /// Moves to `t`, returning `(task, end)` for every request finishing on
    /// the way.
    fn run_to(&mut self, t: f64) -> Vec<(usize, f64)> {
        let mut done = Vec::new();
        loop {
            self.fill();
            let n = self.active.len() as f64;
            match self.next_end() {
                Some(end) if end <= t => {
                    let share = self.active.iter().map(|j| j.1).fold(f64::INFINITY, f64::min);
                    self.at = end;
                    for j in &mut self.active {
                        j.1 -= share;
                    }
                    let (fin, keep): (Vec<_>, Vec<_>) = self.active.iter().partition(|j| j.1 <= 1e-6);
                    done.extend(fin.into_iter().map(|(task, _)| (task, end)));
                    self.active = keep;
                }
                _ => {
                    if n > 0.0 && t > self.at {
                        let share = (t - self.at) / n;
                        for j in &mut self.active {
                            j.1 -= share;
                        }
                    }
                    self.at = self.at.max(t);
                    return done;
                }
            }
        }
    }
}

fn check_acyclic(graph: &TaskGraph) -> Result<Vec<usize>, OracleError> {
    let n = graph.tasks.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in &graph.edges {
        if a >= n || b >= n {
            return Err(OracleError::DanglingEdge(a, b));
        }
        indeg[b] += 1;
        succ[a].push(b);
    }
    let initial = indeg.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                stack.push(s);
            }
        }
    }
    match (0..n).find(|&i| indeg[i] > 0) {
        Some(i) if seen < n => Err(OracleError::Cyclic(i)),
        _ => Ok(initial),
    }
}

/// Predicted makespan of `graph` under `setup`.
pub fn oracle_makespan(graph: &TaskGraph, setup: &OracleSetup) -> Result<Duration, OracleError> {
    if setup.workers == 0 {
        return Err(OracleError::NoWorkers);
    }
    let mut waiting_on = check_acyclic(graph)?;
    let n = graph.tasks.len();
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in &graph.edges {
        succ[a].push(b);
    }
    let bw = setup.model.effective_bw_mib_s(setup.kind, setup.block_size) * 1024.0 * 1024.0;
    let io_work = setup.block_size as f64 / bw * 1e9;
    let latency = setup.model.base_latency.as_nanos() as u64;
    let period = setup.poll_period.as_nanos().max(1) as u64;
    let tick = |t: u64| t.div_ceil(period) * period;

    // Phase program: 0 = not started, 1 = compute issued, 2 = I/O issued, 3 = body over.
    let mut phase = vec![0u8; n];
    let mut pending_io = vec![0u32; n];
    let mut body_over = vec![false; n];
    let mut ready: BTreeSet<(u64, usize)> = (0..n).filter(|&i| waiting_on[i] == 0).map(|i| (0, i)).collect();
    let mut free = setup.workers;
    let mut events: BinaryHeap<Reverse<(u64, Ev)>> = BinaryHeap::new();
    let mut dev = Device {
        depth: setup.model.max_depth.max(1),
        at: 0.0,
        active: Vec::new(),
        queue: VecDeque::new(),
    };
    let mut now = 0u64;
    let mut finished = 0usize;
    let mut makespan = 0u64;

    // Completion of a whole task: release successors.
    let complete = |task: usize,
                    at: u64,
                    waiting_on: &mut Vec<usize>,
                    ready: &mut BTreeSet<(u64, usize)>,
                    finished: &mut usize,
                    makespan: &mut u64| {
        *finished += 1;
        *makespan = (*makespan).max(at);
        for &s in &succ[task] {
            waiting_on[s] -= 1;
            if waiting_on[s] == 0 {
                ready.insert((at, s));
            }
        }
    };

    while finished < n {
        // Drive the device up to the next scheduled event.
        let top = events.peek().map(|Reverse((t, _))| *t);
        if let Some(end) = dev.next_end() {
            if top.is_none_or(|t| end <= t as f64) {
                for (task, end) in dev.run_to(end) {
                    let visible = (end - 1e-4).ceil().max(0.0) as u64 + latency;
                    let ev = match setup.api {
                        Api::Standalone => (visible, Ev::SyncDone(task)),
                        Api::Blocking => (tick(visible), Ev::Resume(task)),
                        Api::NonBlocking => (tick(visible), Ev::EventDone(task)),
                    };
                    events.push(Reverse(ev));
                }
                continue;
            }
        }

        // Agents run bodies until each blocks, yields or ends.
        let mut runnable: Vec<usize> = Vec::new();
        if let Some(t) = top {
            now = t;
            while let Some(Reverse((t, ev))) = events.peek().copied() {
                if t != now {
                    break;
                }
                events.pop();
                match ev {
                    Ev::Step(task) | Ev::SyncDone(task) => runnable.push(task),
                    Ev::Resume(task) => {
                        ready.insert((now, task));
                    }
                    Ev::EventDone(task) => {
                        pending_io[task] -= 1;
                        if pending_io[task] == 0 && body_over[task] {
                            complete(task, now, &mut waiting_on, &mut ready, &mut finished, &mut makespan);
                        }
                    }
                }
            }
        } else if ready.is_empty() {
            break;
        }
        dev.run_to(now as f64);

        loop {
            while let Some(task) = runnable.pop() {
                let work = graph.tasks[task].work;
                loop {
                    match phase[task] {
                        0 => {
                            phase[task] = 1;
                            let c = work.compute().as_nanos() as u64;
                            if c > 0 {
                                events.push(Reverse((now + c, Ev::Step(task))));
                                break;
                            }
                        }
                        1 => {
                            phase[task] = 2;
                            if work.slot().is_some() && io_work > 0.0 {
                                dev.queue.push_back((task, io_work));
                                match setup.api {
                                    Api::Standalone => break,
                                    Api::Blocking => {
                                        free += 1;
                                        break;
                                    }
                                    Api::NonBlocking => pending_io[task] += 1,
                                }
                            }
                        }
                        _ => {
                            phase[task] = 3;
                            body_over[task] = true;
                            free += 1;
                            if pending_io[task] == 0 {
                                complete(task, now, &mut waiting_on, &mut ready, &mut finished, &mut makespan);
                            }
                            break;
                        }
                    }
                }
            }
            // Fresh and resumed tasks take free agents.
            while free > 0 {
                let Some(&(t, task)) = ready.iter().next() else { break };
                ready.remove(&(t, task));
                free -= 1;
                runnable.push(task);
            }
            if runnable.is_empty() {
                break;
            }
        }
        dev.fill();
    }
    Ok(Duration::from_nanos(makespan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiom::{build_task_graph, Mode, Pattern, TaskSpec, TiomConfig, Work};

    fn setup(workers: usize, api: Api) -> OracleSetup {
        OracleSetup {
            workers,
            model: DeviceModel::optane_905p(),
            api,
            kind: IoKind::Read,
            block_size: 64 << 10,
            poll_period: Duration::from_micros(100),
        }
    }

    fn compute_only(n: usize, c: Duration) -> TaskGraph {
        TaskGraph {
            tasks: (0..n)
                .map(|_| TaskSpec {
                    series: 0,
                    work: Work::Compute(c),
                    reads: vec![],
                    writes: vec![],
                })
                .collect(),
            edges: vec![],
            resources: 0,
            series: n,
        }
    }

    #[test]
    fn single_compute_task() {
        let c = Duration::from_millis(3);
        assert_eq!(
            oracle_makespan(&compute_only(1, c), &setup(1, Api::Standalone)).unwrap(),
            c
        );
    }

    #[test]
    fn independent_compute_waves() {
        let c = Duration::from_millis(2);
        for (n, p) in [(10, 3), (8, 4), (1, 5), (7, 7)] {
            let m = oracle_makespan(&compute_only(n, c), &setup(p, Api::NonBlocking)).unwrap();
            assert_eq!(m, c * n.div_ceil(p) as u32, "{n} tasks on {p}");
        }
    }

    #[test]
    fn standalone_chain_is_the_serial_sum() {
        let cfg = TiomConfig {
            mode: Mode::Mix,
            block_size: 64 << 10,
            file_size: 8 * (64 << 10),
            max_parallel: 1,
            pattern: Pattern::SeqRead,
            ..Default::default()
        };
        let g = build_task_graph(&cfg).unwrap();
        let d = ((65536.0 / (2548.0 * 1048576.0)) * 1e9f64).ceil() as u64;
        let m = oracle_makespan(&g, &setup(1, Api::Standalone)).unwrap();
        assert_eq!(m, Duration::from_nanos(8 * (1_000_000 + d)));
    }

    #[test]
    fn nonblocking_beats_standalone_with_two_series() {
        let cfg = TiomConfig {
            mode: Mode::Mix,
            block_size: 1 << 20,
            file_size: 16 << 20,
            max_parallel: 2,
            ..Default::default()
        };
        let g = build_task_graph(&cfg).unwrap();
        let s = |api| OracleSetup {
            block_size: 1 << 20,
            ..setup(1, api)
        };
        let sa = oracle_makespan(&g, &s(Api::Standalone)).unwrap();
        let nb = oracle_makespan(&g, &s(Api::NonBlocking)).unwrap();
        assert!(nb < sa, "{nb:?} !< {sa:?}");
    }

    #[test]
    fn cycles_are_rejected() {
        let mut g = compute_only(3, Duration::from_millis(1));
        g.edges = vec![(0, 1), (1, 2), (2, 1)];
        assert!(matches!(
            oracle_makespan(&g, &setup(1, Api::Standalone)),
            Err(OracleError::Cyclic(_))
        ));
    }
}
