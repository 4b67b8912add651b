use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, TiomConfig, TiomError};
use crate::io::AccessPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Work {
    Compute(Duration),
    /// One block of I/O; `slot` indexes [`io_offsets`].
    Io {
        slot: usize,
    },
    /// Compute, then one block of I/O.
    Mix {
        compute: Duration,
        slot: usize,
    },
}

impl Work {
    pub fn compute(&self) -> Duration {
        match *self {
            Work::Compute(d) | Work::Mix { compute: d, .. } => d,
            Work::Io { .. } => Duration::ZERO,
        }
    }

    pub fn slot(&self) -> Option<usize> {
        match *self {
            Work::Io { slot } | Work::Mix { slot, .. } => Some(slot),
            Work::Compute(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub series: usize,
    pub work: Work,
    /// Resource indices, declared to the runtime in this form.
    pub reads: Vec<usize>,
    pub writes: Vec<usize>,
}

/// Tasks in spawn order plus the direct dependency edges between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    pub tasks: Vec<TaskSpec>,
    /// `(predecessor, successor)`; never transitively redundant.
    pub edges: Vec<(usize, usize)>,
    pub resources: usize,
    pub series: usize,
}

impl TaskGraph {
    pub fn io_tasks(&self) -> usize {
        self.tasks.iter().filter(|t| t.work.slot().is_some()).count()
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut p = vec![Vec::new(); self.tasks.len()];
        for &(a, b) in &self.edges {
            p[b].push(a);
        }
        p
    }

    pub fn total_compute(&self) -> Duration {
        self.tasks.iter().map(|t| t.work.compute()).sum()
    }
}

struct Builder {
    tasks: Vec<TaskSpec>,
    edges: Vec<(usize, usize)>,
    resources: usize,
    series: usize,
    next_slot: usize,
}

impl Builder {
    fn resource(&mut self) -> usize {
        self.resources += 1;
        self.resources - 1
    }

    fn slot(&mut self) -> usize {
        self.next_slot += 1;
        self.next_slot - 1
    }

    fn task(&mut self, work: Work, reads: Vec<usize>, writes: Vec<usize>, preds: &[usize]) -> usize {
        let id = self.tasks.len();
        self.tasks.push(TaskSpec {
            series: self.series,
            work,
            reads,
            writes,
        });
        self.edges.extend(preds.iter().map(|&p| (p, id)));
        id
    }
}

/// Builds the task graph for `cfg`. Series are laid out one after another;
/// I/O slots are numbered in that same order.
pub fn build_task_graph(cfg: &TiomConfig) -> Result<TaskGraph, TiomError> {
    cfg.validate()?;
    let c = cfg.compute_time;
    let series = cfg.series();
    let units = (cfg.blocks() / cfg.mode.blocks_per_stage()) as usize;
    let mut b = Builder {
        tasks: Vec::new(),
        edges: Vec::new(),
        resources: 0,
        series: 0,
        next_slot: 0,
    };
    for s in 0..series {
        b.series = s;
        let stages = units / series + usize::from(s < units % series);
        match cfg.mode {
            Mode::Mix => {
                let r = b.resource();
                let mut prev: Option<usize> = None;
                for _ in 0..stages {
                    let slot = b.slot();
                    let preds: Vec<usize> = prev.into_iter().collect();
                    prev = Some(b.task(Work::Mix { compute: c, slot }, vec![], vec![r], &preds));
                }
            }
            Mode::OneToOne => {
                let r = b.resource();
                let mut prev: Option<usize> = None;
                for _ in 0..stages {
                    let preds: Vec<usize> = prev.into_iter().collect();
                    let ct = b.task(Work::Compute(c), vec![], vec![r], &preds);
                    let slot = b.slot();
                    prev = Some(b.task(Work::Io { slot }, vec![], vec![r], &[ct]));
                }
            }
            Mode::ForkJoinIo => {
                let join = b.resource();
                let lanes: Vec<usize> = (0..4).map(|_| b.resource()).collect();
                let mut prev: Option<usize> = None;
                for _ in 0..stages {
                    let preds: Vec<usize> = prev.into_iter().collect();
                    let fan: Vec<usize> = lanes
                        .iter()
                        .map(|&lane| {
                            let slot = b.slot();
                            b.task(Work::Io { slot }, vec![join], vec![lane], &preds)
                        })
                        .collect();
                    prev = Some(b.task(Work::Compute(c * 4), lanes.clone(), vec![join], &fan));
                }
            }
            Mode::ForkJoinCompute => {
                let join = b.resource();
                let lanes: Vec<usize> = (0..4).map(|_| b.resource()).collect();
                let mut prev: Option<usize> = None;
                for _ in 0..stages {
                    let preds: Vec<usize> = prev.into_iter().collect();
                    let fan: Vec<usize> = lanes
                        .iter()
                        .map(|&lane| b.task(Work::Compute(c / 4), vec![join], vec![lane], &preds))
                        .collect();
                    let slot = b.slot();
                    prev = Some(b.task(Work::Io { slot }, lanes.clone(), vec![join], &fan));
                }
            }
        }
    }
    Ok(TaskGraph {
        tasks: b.tasks,
        edges: b.edges,
        resources: b.resources,
        series,
    })
}

/// `(offset, length)` of every I/O slot. Sequential patterns walk the file
/// in slot order, so each series covers one contiguous range; random
/// patterns use a seeded permutation of the blocks.
pub fn io_offsets(cfg: &TiomConfig) -> Vec<(u64, usize)> {
    let n = cfg.blocks();
    let mut blocks: Vec<u64> = (0..n).collect();
    if cfg.pattern.access() == AccessPattern::Rand {
        blocks.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }
    blocks
        .into_iter()
        .map(|b| (b * cfg.block_size, cfg.block_size as usize))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiom::Pattern;

    fn cfg(mode: Mode, blocks: u64, mp: usize) -> TiomConfig {
        TiomConfig {
            mode,
            block_size: 4096,
            file_size: blocks * 4096,
            max_parallel: mp,
            ..Default::default()
        }
    }

    #[test]
    fn fjio_single_series_of_eight() {
        let g = build_task_graph(&cfg(Mode::ForkJoinIo, 8, 4)).unwrap();
        assert_eq!(g.series, 1);
        let preds = g.predecessors();
        let computes: Vec<usize> = (0..g.tasks.len())
            .filter(|&i| matches!(g.tasks[i].work, Work::Compute(_)))
            .collect();
        assert_eq!((g.io_tasks(), computes.len()), (8, 2));
        for &c in &computes {
            assert_eq!(preds[c].len(), 4);
            assert!(preds[c].iter().all(|&p| matches!(g.tasks[p].work, Work::Io { .. })));
        }
    }

    #[test]
    fn mix_single_chain() {
        let g = build_task_graph(&cfg(Mode::Mix, 16, 1)).unwrap();
        assert_eq!((g.tasks.len(), g.edges.len()), (16, 15));
        assert!(g.edges.iter().all(|&(a, b)| b == a + 1));
    }

    #[test]
    fn compute_budget_is_mode_independent() {
        let mut totals = Vec::new();
        for mode in Mode::ALL {
            let g = build_task_graph(&cfg(mode, 64, 8)).unwrap();
            totals.push(g.total_compute());
            assert_eq!(g.io_tasks(), 64);
        }
        assert!(totals.iter().all(|&t| t == Duration::from_millis(64)), "{totals:?}");
    }

    #[test]
    fn seq_offsets_are_consecutive() {
        let c = TiomConfig {
            pattern: Pattern::SeqRead,
            ..cfg(Mode::Mix, 4, 1)
        };
        assert_eq!(
            io_offsets(&c),
            vec![(0, 4096), (4096, 4096), (8192, 4096), (12288, 4096)]
        );
    }

    #[test]
    fn rand_offsets_are_deterministic_permutations() {
        let c = TiomConfig {
            pattern: Pattern::RandWrite,
            seed: 9,
            ..cfg(Mode::Mix, 256, 8)
        };
        let a = io_offsets(&c);
        assert_eq!(a, io_offsets(&c));
        let mut sorted: Vec<u64> = a.iter().map(|o| o.0).collect();
        assert_ne!(sorted, (0..256).map(|b| b * 4096).collect::<Vec<_>>());
        sorted.sort_unstable();
        assert_eq!(sorted, (0..256).map(|b| b * 4096).collect::<Vec<_>>());
        let other = io_offsets(&TiomConfig { seed: 10, ..c });
        assert_ne!(a, other);
    }
}
