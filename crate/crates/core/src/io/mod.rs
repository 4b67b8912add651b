//! Asynchronous positional storage I/O.
//!
//! An [`IoContext`] accepts read/write requests and reports their completion
//! later, in the style of kernel AIO: `submit` returns immediately and
//! finished requests are reaped with `poll_completions` or
//! `wait_completions`. Two backends are available:
//!
//! * **simulated**: a processor-sharing model of a storage device driven by a
//!   [`Clock`](crate::runtime::Clock); no data is moved.
//! * **pool**: delegate threads performing real positional I/O on files.

mod buffer;
mod context;
mod model;
mod profile;
mod sim;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

pub use buffer::{IoBuffer, BUFFER_ALIGN};
pub use context::{BackendKind, ContextConfig, IoContext};
pub use model::{DeviceModel, ModelError};
pub use profile::{device_profile, AccessPattern, ProfileCell, ProfileSpec};

/// Alignment unit required for direct I/O offsets, lengths and addresses.
pub const DIRECT_ALIGN: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoKind {
    Read,
    Write,
}

impl fmt::Display for IoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IoKind::Read => "read",
            IoKind::Write => "write",
        })
    }
}

impl FromStr for IoKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "read" | "r" => Ok(IoKind::Read),
            "write" | "w" => Ok(IoKind::Write),
            _ => Err(format!("unknown I/O kind `{s}` (expected read or write)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FileHandle(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub u64);

/// One positional operation over one or more buffer segments.
#[derive(Debug, Clone)]
pub struct IoRequest {
    pub kind: IoKind,
    pub file: FileHandle,
    pub offset: u64,
    /// `(buffer, length)` pairs; `length` bytes from the start of each buffer.
    pub segments: Vec<(IoBuffer, usize)>,
    /// Enforce [`DIRECT_ALIGN`] on offset, lengths and buffer addresses.
    pub direct: bool,
}

impl IoRequest {
    pub fn new(kind: IoKind, file: FileHandle, offset: u64, segments: Vec<(IoBuffer, usize)>) -> Self {
        Self {
            kind,
            file,
            offset,
            segments,
            direct: false,
        }
    }

    pub fn read(file: FileHandle, buf: &IoBuffer, count: usize, offset: u64) -> Self {
        Self::new(IoKind::Read, file, offset, vec![(buf.clone(), count)])
    }

    pub fn write(file: FileHandle, buf: &IoBuffer, count: usize, offset: u64) -> Self {
        Self::new(IoKind::Write, file, offset, vec![(buf.clone(), count)])
    }

    pub fn direct(mut self, direct: bool) -> Self {
        self.direct = direct;
        self
    }

    pub fn total_len(&self) -> u64 {
        self.segments.iter().map(|(_, l)| *l as u64).sum()
    }
}

/// A failed operation, clonable so it can be stored and reported repeatedly.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct IoFailure {
    pub kind: std::io::ErrorKind,
    pub message: String,
}

impl From<std::io::Error> for IoFailure {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRecord {
    pub id: RequestId,
    pub result: Result<usize, IoFailure>,
    /// When the result became visible, on the context's clock.
    pub completion_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitResult {
    Completed(usize),
    InFlight(RequestId),
    QueueFull,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WaitResult {
    pub records: Vec<CompletionRecord>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("context capacity must be at least 1")]
    ZeroCapacity,
    #[error("the simulated backend needs a device model")]
    MissingModel,
    #[error("the pool backend needs at least one delegate thread")]
    NoDelegates,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("direct I/O needs {field} to be a multiple of {unit} bytes, got {value}")]
    Misaligned { field: &'static str, value: u64, unit: u64 },
    #[error("invalid file handle {0:?}")]
    InvalidFile(FileHandle),
    #[error("segment of {len} bytes exceeds its {capacity}-byte buffer")]
    SegmentOverrun { len: usize, capacity: usize },
    #[error("buffers without storage only work with the simulated backend")]
    UnbackedBuffer,
    #[error("I/O failed: {0}")]
    Io(#[from] IoFailure),
    #[error("profiling depth must be at least 1")]
    InvalidDepth,
    #[error("invalid profile request: {0}")]
    InvalidProfile(String),
}
