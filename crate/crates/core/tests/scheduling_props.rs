//! Randomized runtime and task-aware I/O properties.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use tasio_core::runtime::trace::{check_lifecycle, check_no_idle_with_work, TraceKind};
use tasio_core::runtime::{ClockMode, Runtime, RuntimeConfig};
use tasio_core::tasio::{OpMode, Tasio, TasioConfig};

#[derive(Debug, Clone)]
struct TaskDesc {
    reads: Vec<usize>,
    writes: Vec<usize>,
    compute_us: u64,
}

fn task_desc(resources: usize) -> impl Strategy<Value = TaskDesc> {
    (
        prop::collection::vec(0..resources, 0..3),
        prop::collection::vec(0..resources, 0..3),
        0u64..200,
    )
        .prop_map(|(reads, writes, compute_us)| TaskDesc {
            reads,
            writes,
            compute_us,
        })
}

fn dag() -> impl Strategy<Value = (usize, usize, Vec<TaskDesc>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(workers, resources)| {
        (
            Just(workers),
            Just(resources),
            prop::collection::vec(task_desc(resources), 1..30),
        )
    })
}

/// Pairs of tasks that must run in spawn order: they share a resource and at
/// least one of them writes it.
fn conflicts(tasks: &[TaskDesc]) -> Vec<(usize, usize)> {
    let touches = |t: &TaskDesc, r: usize| (t.reads.contains(&r), t.writes.contains(&r));
    let mut out = Vec::new();
    for j in 0..tasks.len() {
        for i in 0..j {
            let clash = tasks[i].reads.iter().chain(&tasks[i].writes).any(|&r| {
                let (ri, wi) = touches(&tasks[i], r);
                let (rj, wj) = touches(&tasks[j], r);
                (wi && (rj || wj)) || (ri && wj)
            });
            if clash {
                out.push((i, j));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_dags_respect_declared_accesses((workers, nres, tasks) in dag()) {
        let rt = Runtime::new(RuntimeConfig::new(workers, ClockMode::Virtual).with_trace()).unwrap();
        let h = rt.handle();
        let res: Vec<_> = (0..nres).map(|_| h.register_resource()).collect();
        let seq = Arc::new(AtomicU64::new(0));
        let spans = Arc::new(Mutex::new(vec![(u64::MAX, u64::MAX); tasks.len()]));
        let runs = Arc::new(AtomicU64::new(0));
        let mut ids = Vec::new();
        for (i, t) in tasks.iter().enumerate() {
            let (h2, seq2, spans2, runs2) = (h.clone(), seq.clone(), spans.clone(), runs.clone());
            let c = Duration::from_micros(t.compute_us);
            let reads: Vec<_> = t.reads.iter().map(|&r| res[r]).collect();
            let writes: Vec<_> = t.writes.iter().map(|&r| res[r]).collect();
            ids.push(h.spawn_task(move || {
                runs2.fetch_add(1, Ordering::SeqCst);
                let start = seq2.fetch_add(1, Ordering::SeqCst);
                h2.compute(c);
                let end = seq2.fetch_add(1, Ordering::SeqCst);
                spans2.lock().unwrap()[i] = (start, end);
            }, &reads, &writes).unwrap());
        }
        let stats = rt.run_to_completion().unwrap();

        // Every id is distinct and every body ran exactly once.
        prop_assert_eq!(ids.iter().collect::<HashSet<_>>().len(), tasks.len());
        prop_assert_eq!(runs.load(Ordering::SeqCst), tasks.len() as u64);
        prop_assert_eq!(stats.tasks_executed, tasks.len() as u64);

        let spans = spans.lock().unwrap();
        for (i, j) in conflicts(&tasks) {
            prop_assert!(spans[i].1 < spans[j].0, "task {} overlapped or followed task {}", i, j);
        }

        let trace = h.trace_events();
        prop_assert!(check_lifecycle(&trace).is_ok());
        prop_assert!(check_no_idle_with_work(&trace, workers).is_ok());
        let completes = trace.iter().filter(|e| e.kind == TraceKind::Complete).count();
        prop_assert_eq!(completes, tasks.len());

        // Makespan is at least the longest conflict chain and the work per agent.
        let mut chain = vec![0u64; tasks.len()];
        let edges = conflicts(&tasks);
        for j in 0..tasks.len() {
            let before = edges.iter().filter(|e| e.1 == j).map(|e| chain[e.0]).max().unwrap_or(0);
            chain[j] = before + tasks[j].compute_us * 1000;
        }
        let total: u64 = tasks.iter().map(|t| t.compute_us * 1000).sum();
        let bound = chain.iter().copied().max().unwrap().max(total.div_ceil(workers as u64));
        prop_assert!(stats.elapsed.as_nanos() as u64 >= bound);
        prop_assert!(stats.elapsed.as_nanos() as u64 <= total);
    }
}

#[derive(Debug, Clone)]
struct IoPlan {
    workers: usize,
    cap: usize,
    ops: Vec<Vec<(bool, usize)>>,
}

fn io_plan() -> impl Strategy<Value = IoPlan> {
    (
        1usize..4,
        1usize..9,
        prop::collection::vec(
            prop::collection::vec((any::<bool>(), prop::sample::select(vec![4096usize, 65536])), 1..12),
            1..10,
        ),
    )
        .prop_map(|(workers, cap, ops)| IoPlan { workers, cap, ops })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nonblocking_ops_respect_the_cap_and_complete_once(plan in io_plan()) {
        let rt = Runtime::new(RuntimeConfig::new(plan.workers, ClockMode::Virtual)).unwrap();
        let h = rt.handle();
        let cfg = TasioConfig { max_in_flight: plan.cap, record_ops: true, ..Default::default() };
        let io = Tasio::init_with_env(&h, cfg, |_| None).unwrap();
        let f = io.context().create_sim_file(16 << 20).unwrap();
        let mut tasks = Vec::new();
        for ops in &plan.ops {
            let (io2, ops2) = (io.clone(), ops.clone());
            let id = h.spawn_task(move || {
                for (k, &(write, size)) in ops2.iter().enumerate() {
                    let b = io2.alloc_buffer(size);
                    let off = (k * 65536) as u64;
                    if write {
                        io2.ta_pwrite(f, &b, size, off).unwrap();
                    } else {
                        io2.ta_pread(f, &b, size, off).unwrap();
                    }
                }
            }, &[], &[]).unwrap();
            tasks.push(id);
        }
        rt.run_to_completion().unwrap();

        let total: usize = plan.ops.iter().map(Vec::len).sum();
        let s = io.stats();
        prop_assert_eq!(s.submitted, total as u64);
        prop_assert_eq!(s.decrements, total as u64);
        prop_assert_eq!((s.orphans, s.guard_trips), (0, 0));
        let log = io.op_log();
        prop_assert_eq!(log.len(), total);
        prop_assert!(log.iter().all(|e| e.mode == OpMode::NonBlocking));
        prop_assert!(log.iter().all(|e| e.outstanding_after_submit <= plan.cap));
        prop_assert_eq!(log.iter().map(|e| e.retries as u64).sum::<u64>(), s.retries);
        prop_assert!(log.iter().all(|e| e.submitted_at >= e.first_attempt));
        for (id, ops) in tasks.iter().zip(&plan.ops) {
            let got: Vec<usize> = io.take_results(*id).into_iter().map(Result::unwrap).collect();
            let want: Vec<usize> = ops.iter().map(|o| o.1).collect();
            prop_assert_eq!(got, want);
        }
        io.shutdown();
        prop_assert_eq!(io.pending_ops(), 0);
    }

    #[test]
    fn blocking_ops_wake_each_task_once(plan in io_plan()) {
        let rt = Runtime::new(RuntimeConfig::new(plan.workers, ClockMode::Virtual).with_trace()).unwrap();
        let h = rt.handle();
        let cfg = TasioConfig { max_in_flight: plan.cap, record_ops: true, ..Default::default() };
        let io = Tasio::init_with_env(&h, cfg, |_| None).unwrap();
        let f = io.context().create_sim_file(16 << 20).unwrap();
        for ops in &plan.ops {
            let (io2, ops2) = (io.clone(), ops.clone());
            h.spawn_task(move || {
                for (k, &(write, size)) in ops2.iter().enumerate() {
                    let b = io2.alloc_buffer(size);
                    let off = (k * 65536) as u64;
                    let n = if write {
                        io2.ta_pwrite_blocking(f, &b, size, off)
                    } else {
                        io2.ta_pread_blocking(f, &b, size, off)
                    };
                    assert_eq!(n.unwrap(), size);
                }
            }, &[], &[]).unwrap();
        }
        rt.run_to_completion().unwrap();

        let total: u64 = plan.ops.iter().map(|o| o.len() as u64).sum();
        let s = io.stats();
        prop_assert_eq!(s.submitted, total);
        prop_assert_eq!(s.resumes + s.inline_completions, total);
        let trace = h.trace_events();
        let pauses = trace.iter().filter(|e| e.kind == TraceKind::Pause).count() as u64;
        let resumes = trace.iter().filter(|e| e.kind == TraceKind::Resume).count() as u64;
        prop_assert_eq!(pauses, resumes);
        prop_assert_eq!(pauses, s.resumes);
        prop_assert!(io.op_log().iter().all(|e| e.outstanding_after_submit <= plan.cap));
        io.shutdown();
    }

    #[test]
    fn env_overrides_round_trip(n in 1usize..1_000_000, us in 1u64..1_000_000) {
        let cfg = TasioConfig::default()
            .with_env_overrides(|k| match k {
                "TASIO_MAX_INFLIGHT" => Some(format!(" {n} ")),
                "TASIO_RETRY_US" => Some(us.to_string()),
                _ => None,
            })
            .unwrap();
        prop_assert_eq!(cfg.max_in_flight, n);
        prop_assert_eq!(cfg.retry_sleep, Duration::from_micros(us));
        prop_assert!(cfg.validate().is_ok());
    }

    #[test]
    fn env_overrides_reject_garbage(v in "[a-z-][a-z0-9.]{0,6}") {
        let r = TasioConfig::default().with_env_overrides(|k| (k == "TASIO_MAX_INFLIGHT").then(|| v.clone()));
        prop_assert!(r.is_err());
    }
}
