//! fio-style throughput measurement: keep `depth` requests of one size in
//! flight for a fixed duration and count the bytes that complete in time.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FileHandle, IoContext, IoError, IoKind, IoRequest, SubmitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessPattern {
    Seq,
    Rand,
}

impl fmt::Display for AccessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessPattern::Seq => "seq",
            AccessPattern::Rand => "rand",
        })
    }
}

impl FromStr for AccessPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seq" => Ok(AccessPattern::Seq),
            "rand" => Ok(AccessPattern::Rand),
            _ => Err(format!("unknown access pattern `{s}` (expected seq or rand)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileSpec {
    pub block_sizes: Vec<usize>,
    pub depths: Vec<usize>,
    pub duration: Duration,
    pub pattern: AccessPattern,
    pub kind: IoKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileCell {
    pub block_size: usize,
    pub depth: usize,
    pub mib_s: f64,
}

/// Measures sustained throughput for every `(block size, depth)` pair, in
/// the order given.
pub fn device_profile(ctx: &IoContext, file: FileHandle, spec: &ProfileSpec) -> Result<Vec<ProfileCell>, IoError> {
    if spec.depths.contains(&0) {
        return Err(IoError::InvalidDepth);
    }
    if spec.duration.is_zero() {
        return Err(IoError::InvalidProfile("duration must be positive".into()));
    }
    let file_size = ctx.file_size(file)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells = Vec::new();
    for &bs in &spec.block_sizes {
        if bs == 0 || bs as u64 > file_size {
            return Err(IoError::InvalidProfile(format!(
                "block size {bs} does not fit a {file_size}-byte file"
            )));
        }
        let blocks = file_size / bs as u64;
        let buf = ctx.alloc_buffer(bs);
        for &depth in &spec.depths {
            let clock = ctx.clock();
            let start = clock.now();
            let end = start + spec.duration;
            let mut next_block = 0u64;
            let mut inflight = 0usize;
            let mut bytes = 0u64;
            loop {
                while inflight < depth {
                    let block = match spec.pattern {
                        AccessPattern::Seq => {
                            let b = next_block % blocks;
                            next_block += 1;
                            b
                        }
                        AccessPattern::Rand => rng.gen_range(0..blocks),
                    };
                    let req = IoRequest::new(spec.kind, file, block * bs as u64, vec![(buf.clone(), bs)]);
                    match ctx.submit(req)? {
                        SubmitResult::InFlight(_) => inflight += 1,
                        SubmitResult::Completed(n) => {
                            if clock.now() <= end {
                                bytes += n as u64;
                            }
                        }
                        SubmitResult::QueueFull => break,
                    }
                }
                let now = clock.now();
                if now >= end {
                    break;
                }
                for rec in ctx.wait_completions(1, end - now).records {
                    inflight -= 1;
                    if rec.completion_time <= end {
                        bytes += rec.result? as u64;
                    }
                }
            }
            while inflight > 0 {
                inflight -= ctx.wait_completions(inflight, Duration::from_secs(3600)).records.len();
            }
            cells.push(ProfileCell {
                block_size: bs,
                depth,
                mib_s: bytes as f64 / (1024.0 * 1024.0) / spec.duration.as_secs_f64(),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::io::{ContextConfig, DeviceModel};
    use crate::runtime::ManualClock;

    fn profile(kind: IoKind, bs: usize, depths: Vec<usize>) -> Result<Vec<ProfileCell>, IoError> {
        let ctx = IoContext::create(
            ContextConfig::simulated(64, DeviceModel::optane_905p()),
            Arc::new(ManualClock::new()),
        )
        .unwrap();
        let f = ctx.create_sim_file(1 << 30).unwrap();
        device_profile(
            &ctx,
            f,
            &ProfileSpec {
                block_sizes: vec![bs],
                depths,
                duration: Duration::from_millis(200),
                pattern: AccessPattern::Rand,
                kind,
                seed: 1,
            },
        )
    }

    #[test]
    fn read_rate_is_depth_independent() {
        for cell in profile(IoKind::Read, 1 << 20, vec![1, 2, 3, 4]).unwrap() {
            assert!((cell.mib_s / 2548.0 - 1.0).abs() < 0.02, "{cell:?}");
        }
    }

    #[test]
    fn zero_depth_is_rejected() {
        assert_eq!(profile(IoKind::Read, 4096, vec![0]).unwrap_err(), IoError::InvalidDepth);
    }
}
