//! Task I/O Meter: a benchmark interleaving busy-wait computation with
//! block I/O, both wrapped in tasks.
//!
//! Work is organised in independent *series*. Within a series tasks are
//! chained by dependencies; the four modes differ in how compute and I/O are
//! split into tasks:
//!
//! | mode   | per stage                          | compute per compute task |
//! |--------|------------------------------------|--------------------------|
//! | `mix`  | one task: compute, then one block   | `c`                      |
//! | `1to1` | compute task → I/O task             | `c`                      |
//! | `fjio` | four I/O tasks → one compute task   | `4c`                     |
//! | `fjc`  | four compute tasks → one I/O task   | `c/4`                    |
//!
//! Every mode therefore moves `file_size` bytes and burns `blocks × c` of
//! compute in total.

mod bench;
mod graph;
mod kernel;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

pub use bench::{run_benchmark, run_on, BenchEnv, BenchIo, BenchReport, BenchResult};
pub use graph::{build_task_graph, io_offsets, TaskGraph, TaskSpec, Work};
pub use kernel::{busy_wait, calibrate, compute_kernel, iterations_per_us};

use crate::io::{AccessPattern, IoError, IoFailure, IoKind};
use crate::runtime::RuntimeError;
use crate::tasio::TasioError;

const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Mix,
    OneToOne,
    ForkJoinIo,
    ForkJoinCompute,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mix, Mode::OneToOne, Mode::ForkJoinIo, Mode::ForkJoinCompute];

    /// Parallel tasks per series inside one stage.
    pub fn width(self) -> usize {
        match self {
            Mode::Mix | Mode::OneToOne => 1,
            Mode::ForkJoinIo | Mode::ForkJoinCompute => 4,
        }
    }

    /// Blocks consumed by one stage.
    pub fn blocks_per_stage(self) -> u64 {
        match self {
            Mode::ForkJoinIo => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mix => "mix",
            Mode::OneToOne => "1to1",
            Mode::ForkJoinIo => "fjio",
            Mode::ForkJoinCompute => "fjc",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mix" => Ok(Mode::Mix),
            "1to1" => Ok(Mode::OneToOne),
            "fjio" => Ok(Mode::ForkJoinIo),
            "fjc" => Ok(Mode::ForkJoinCompute),
            _ => Err(format!("unknown mode `{s}` (expected mix, 1to1, fjio or fjc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    SeqRead,
    SeqWrite,
    RandRead,
    RandWrite,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::SeqRead,
        Pattern::SeqWrite,
        Pattern::RandRead,
        Pattern::RandWrite,
    ];

    pub fn kind(self) -> IoKind {
        match self {
            Pattern::SeqRead | Pattern::RandRead => IoKind::Read,
            Pattern::SeqWrite | Pattern::RandWrite => IoKind::Write,
        }
    }

    pub fn access(self) -> AccessPattern {
        match self {
            Pattern::SeqRead | Pattern::SeqWrite => AccessPattern::Seq,
            Pattern::RandRead | Pattern::RandWrite => AccessPattern::Rand,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::SeqRead => "sr",
            Pattern::SeqWrite => "sw",
            Pattern::RandRead => "rr",
            Pattern::RandWrite => "rw",
        })
    }
}

impl FromStr for Pattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sr" | "seq_read" => Ok(Pattern::SeqRead),
            "sw" | "seq_write" => Ok(Pattern::SeqWrite),
            "rr" | "rand_read" => Ok(Pattern::RandRead),
            "rw" | "rand_write" => Ok(Pattern::RandWrite),
            _ => Err(format!("unknown pattern `{s}` (expected sr, sw, rr or rw)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Api {
    /// Synchronous I/O inline in the task body.
    Standalone,
    /// Blocking wrappers: the task pauses while its request is in flight.
    Blocking,
    /// Non-blocking calls gated through the task's event counter.
    NonBlocking,
}

impl Api {
    pub const ALL: [Api; 3] = [Api::Standalone, Api::Blocking, Api::NonBlocking];
}

impl fmt::Display for Api {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Api::Standalone => "standalone",
            Api::Blocking => "bq",
            Api::NonBlocking => "nb",
        })
    }
}

impl FromStr for Api {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standalone" | "sa" => Ok(Api::Standalone),
            "bq" | "blocking" => Ok(Api::Blocking),
            "nb" | "nonblocking" => Ok(Api::NonBlocking),
            _ => Err(format!("unknown api `{s}` (expected standalone, bq or nb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiomConfig {
    pub mode: Mode,
    pub block_size: u64,
    pub compute_time: Duration,
    pub pattern: Pattern,
    pub max_parallel: usize,
    pub file_size: u64,
    pub api: Api,
    /// Tasks starting after this much elapsed time skip their work.
    pub time_limit: Option<Duration>,
    pub seed: u64,
}

impl Default for TiomConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mix,
            block_size: 64 << 10,
            compute_time: Duration::from_millis(1),
            pattern: Pattern::SeqRead,
            max_parallel: 128,
            file_size: 256 * MIB,
            api: Api::Standalone,
            time_limit: None,
            seed: 0,
        }
    }
}

impl TiomConfig {
    pub fn blocks(&self) -> u64 {
        self.file_size / self.block_size.max(1)
    }

    pub fn series(&self) -> usize {
        let units = (self.blocks() / self.mode.blocks_per_stage()) as usize;
        (self.max_parallel / self.mode.width()).min(units).max(1)
    }

    pub fn validate(&self) -> Result<(), TiomError> {
        if self.block_size == 0 || self.file_size == 0 {
            return Err(TiomError::Config("block and file size must be positive".into()));
        }
        if !self.file_size.is_multiple_of(self.block_size) {
            return Err(TiomError::Config(format!(
                "block size {} does not divide file size {}",
                self.block_size, self.file_size
            )));
        }
        if !self.blocks().is_multiple_of(self.mode.blocks_per_stage()) {
            return Err(TiomError::Config(format!(
                "{} blocks do not split into {} stages of {}",
                self.blocks(),
                self.mode,
                self.mode.blocks_per_stage()
            )));
        }
        if self.max_parallel == 0 {
            return Err(TiomError::Config("max_parallel must be at least 1".into()));
        }
        if self.block_size > usize::MAX as u64 {
            return Err(TiomError::Config("block size exceeds addressable memory".into()));
        }
        Ok(())
    }
}

/// File size used by desk-scale sweeps: at least 64 MiB and 1024 blocks, so
/// every cell runs long enough to reach its steady state.
pub fn desk_file_size(block_size: u64) -> u64 {
    (64 * MIB).max(1024 * block_size)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TiomError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("I/O on block at offset {offset} failed: {failure}")]
    BlockIo { offset: u64, failure: IoFailure },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Tasio(#[from] TasioError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("cannot prepare benchmark file: {0}")]
    File(String),
}
