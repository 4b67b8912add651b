//! Task-aware storage I/O on a dependency-driven task runtime, plus the
//! TIOM benchmark and its sweep tooling.
//!
//! - [`runtime`]: task scheduler with data dependencies, pause/resume,
//!   event counters and polling services, on a real or virtual clock.
//! - [`io`]: asynchronous I/O contexts over a simulated device or a thread
//!   pool of blocking syscalls.
//! - [`tasio`]: blocking and non-blocking task-aware I/O calls.
//! - [`tiom`]: the benchmark's task graphs, compute kernel and driver.
//! - [`sweep`]: parameter grids, CSV output, speedup tables, plot data and
//!   the discrete-event oracle.

pub mod io;
pub mod runtime;
pub mod sweep;
pub mod tasio;
pub mod tiom;
