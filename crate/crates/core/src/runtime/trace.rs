//! Scheduler trace log and replay checks.
//!
//! One event per line: `<time_ns> <event> <id>`, where `id` is a task id for
//! task events and a service id for `poll`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceKind {
    Spawn,
    Ready,
    Start,
    Pause,
    Resume,
    BodyEnd,
    Complete,
    Poll,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Spawn => "spawn",
            TraceKind::Ready => "ready",
            TraceKind::Start => "start",
            TraceKind::Pause => "pause",
            TraceKind::Resume => "resume",
            TraceKind::BodyEnd => "body_end",
            TraceKind::Complete => "complete",
            TraceKind::Poll => "poll",
        }
    }
}

impl FromStr for TraceKind {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "spawn" => TraceKind::Spawn,
            "ready" => TraceKind::Ready,
            "start" => TraceKind::Start,
            "pause" => TraceKind::Pause,
            "resume" => TraceKind::Resume,
            "body_end" => TraceKind::BodyEnd,
            "complete" => TraceKind::Complete,
            "poll" => TraceKind::Poll,
            other => return Err(TraceParseError(format!("unknown event `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub time_ns: u64,
    pub kind: TraceKind,
    pub id: u64,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time_ns, self.kind.as_str(), self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed trace line: {0}")]
pub struct TraceParseError(pub String);

impl FromStr for TraceEvent {
    type Err = TraceParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.split_whitespace();
        let (Some(t), Some(k), Some(id), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(TraceParseError(line.to_string()));
        };
        Ok(TraceEvent {
            time_ns: t.parse().map_err(|_| TraceParseError(line.to_string()))?,
            kind: k.parse()?,
            id: id.parse().map_err(|_| TraceParseError(line.to_string()))?,
        })
    }
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 16);
    for ev in events {
        out.push_str(&ev.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceParseError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// A violated trace property, with a human-readable explanation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct Violation(pub String);

fn task_events(trace: &[TraceEvent]) -> impl Iterator<Item = (usize, &TraceEvent)> {
    trace.iter().enumerate().filter(|(_, e)| e.kind != TraceKind::Poll)
}

/// Every task follows spawn → ready → start → (pause → ready → resume)* →
/// body_end → complete.
pub fn check_lifecycle(trace: &[TraceEvent]) -> Result<(), Violation> {
    #[derive(Clone, Copy, PartialEq, Debug)]
    enum S {
        Spawned,
        Ready,
        Running,
        Paused,
        Requeued,
        BodyDone,
        Completed,
    }
    let mut states: HashMap<u64, S> = HashMap::new();
    for (i, ev) in task_events(trace) {
        let cur = states.get(&ev.id).copied();
        let next = match (cur, ev.kind) {
            (None, TraceKind::Spawn) => S::Spawned,
            (Some(S::Spawned), TraceKind::Ready) => S::Ready,
            (Some(S::Ready), TraceKind::Start) => S::Running,
            (Some(S::Running), TraceKind::Pause) => S::Paused,
            (Some(S::Paused), TraceKind::Ready) => S::Requeued,
            (Some(S::Requeued), TraceKind::Resume) => S::Running,
            (Some(S::Running), TraceKind::BodyEnd) => S::BodyDone,
            (Some(S::BodyDone), TraceKind::Complete) => S::Completed,
            (cur, kind) => {
                return Err(Violation(format!(
                    "line {i}: task {} saw `{}` in state {cur:?}",
                    ev.id,
                    kind.as_str()
                )))
            }
        };
        states.insert(ev.id, next);
    }
    Ok(())
}

/// For each edge `(before, after)`, `before` completes before `after` starts.
pub fn check_dependency_safety(trace: &[TraceEvent], edges: &[(u64, u64)]) -> Result<(), Violation> {
    let mut completed_at = HashMap::new();
    let mut started_at = HashMap::new();
    for (i, ev) in task_events(trace) {
        match ev.kind {
            TraceKind::Complete => {
                completed_at.insert(ev.id, i);
            }
            TraceKind::Start => {
                started_at.insert(ev.id, i);
            }
            _ => {}
        }
    }
    for &(a, b) in edges {
        let Some(&s) = started_at.get(&b) else {
            continue;
        };
        match completed_at.get(&a) {
            Some(&c) if c < s => {}
            _ => {
                return Err(Violation(format!(
                    "task {b} started before its predecessor {a} completed"
                )))
            }
        }
    }
    Ok(())
}

/// At the end of every timestamp, if any task sat in the ready queue then all
/// `workers` execution agents were occupied.
pub fn check_no_idle_with_work(trace: &[TraceEvent], workers: usize) -> Result<(), Violation> {
    let mut queued: i64 = 0;
    let mut running: i64 = 0;
    let mut i = 0;
    let events: Vec<&TraceEvent> = task_events(trace).map(|(_, e)| e).collect();
    while i < events.len() {
        let t = events[i].time_ns;
        while i < events.len() && events[i].time_ns == t {
            match events[i].kind {
                TraceKind::Ready => queued += 1,
                TraceKind::Start | TraceKind::Resume => {
                    queued -= 1;
                    running += 1;
                }
                TraceKind::Pause | TraceKind::BodyEnd => running -= 1,
                _ => {}
            }
            i += 1;
        }
        if running > workers as i64 {
            return Err(Violation(format!("t={t}: {running} tasks running on {workers} agents")));
        }
        if queued > 0 && running < workers as i64 {
            return Err(Violation(format!(
                "t={t}: {queued} ready task(s) while only {running}/{workers} agents busy"
            )));
        }
    }
    Ok(())
}

/// Between a task's pause and its resume, some other task starts or resumes
/// whenever ready work existed at the pause instant.
pub fn check_pause_liberates(trace: &[TraceEvent]) -> Result<(), Violation> {
    let events: Vec<&TraceEvent> = task_events(trace).map(|(_, e)| e).collect();
    let mut queued: HashSet<u64> = HashSet::new();
    let mut open: BTreeMap<u64, (bool, bool)> = BTreeMap::new(); // task -> (work existed, someone ran)
    for ev in events {
        match ev.kind {
            TraceKind::Ready => {
                queued.insert(ev.id);
            }
            TraceKind::Start | TraceKind::Resume => {
                queued.remove(&ev.id);
                if ev.kind == TraceKind::Resume {
                    if let Some((existed, ran)) = open.remove(&ev.id) {
                        if existed && !ran {
                            return Err(Violation(format!(
                                "task {} paused with ready work but nothing else ran",
                                ev.id
                            )));
                        }
                    }
                }
                for (t, (_, ran)) in open.iter_mut() {
                    if *t != ev.id {
                        *ran = true;
                    }
                }
            }
            TraceKind::Pause => {
                open.insert(ev.id, (!queued.is_empty(), false));
            }
            _ => {}
        }
    }
    Ok(())
}

/// While any task is paused or waiting on events, polls happen at least
/// `min_fraction × window / period` times per window of `10 × period`.
pub fn check_polling_liveness(trace: &[TraceEvent], period_ns: u64, min_fraction: f64) -> Result<(), Violation> {
    // Intervals during which some task waits on an external wake source.
    let mut waiting: HashMap<u64, u64> = HashMap::new();
    let mut intervals: Vec<(u64, u64)> = Vec::new();
    for (_, ev) in task_events(trace) {
        match ev.kind {
            TraceKind::Pause | TraceKind::BodyEnd => {
                waiting.insert(ev.id, ev.time_ns);
            }
            TraceKind::Ready | TraceKind::Complete => {
                if let Some(t0) = waiting.remove(&ev.id) {
                    intervals.push((t0, ev.time_ns));
                }
            }
            _ => {}
        }
    }
    let polls: Vec<u64> = trace
        .iter()
        .filter(|e| e.kind == TraceKind::Poll)
        .map(|e| e.time_ns)
        .collect();
    let window = 10 * period_ns;
    let needed = (min_fraction * 10.0).ceil() as usize;
    for (a, b) in intervals {
        let mut w = a;
        while w + window <= b {
            let lo = polls.partition_point(|&p| p < w);
            let hi = polls.partition_point(|&p| p < w + window);
            let distinct: HashSet<u64> = polls[lo..hi].iter().copied().collect();
            if distinct.len() < needed {
                return Err(Violation(format!(
                    "only {} poll instants in [{w}, {})",
                    distinct.len(),
                    w + window
                )));
            }
            w += window;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, k: TraceKind, id: u64) -> TraceEvent {
        TraceEvent {
            time_ns: t,
            kind: k,
            id,
        }
    }

    #[test]
    fn line_format_round_trips() {
        let events = vec![ev(0, TraceKind::Spawn, 3), ev(1500, TraceKind::BodyEnd, 3)];
        let text = format_trace(&events);
        assert_eq!(text, "0 spawn 3\n1500 body_end 3\n");
        assert_eq!(parse_trace(&text).unwrap(), events);
        assert!(parse_trace("12 explode 1").is_err());
    }

    #[test]
    fn dependency_checker_catches_early_start() {
        use TraceKind::*;
        let trace = vec![
            ev(0, Spawn, 0),
            ev(0, Spawn, 1),
            ev(0, Ready, 0),
            ev(0, Ready, 1),
            ev(0, Start, 1),
            ev(0, Start, 0),
        ];
        assert!(check_dependency_safety(&trace, &[(0, 1)]).is_err());
        assert!(check_dependency_safety(&trace, &[]).is_ok());
    }

    #[test]
    fn idle_checker_flags_waiting_work() {
        use TraceKind::*;
        let trace = vec![ev(0, Spawn, 0), ev(0, Ready, 0), ev(5, Start, 0)];
        assert!(check_no_idle_with_work(&trace, 1).is_err());
    }
}
