use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use super::IoKind;

const MIB: f64 = 1024.0 * 1024.0;

/// Parametric throughput model of a storage device.
///
/// Up to `max_depth` requests are serviced concurrently and share the rated
/// bandwidth equally; further requests queue FIFO. Writes are additionally
/// slowed by a block-size-dependent multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub read_bw_mib_s: f64,
    pub write_bw_mib_s: f64,
    pub base_latency: Duration,
    pub max_depth: usize,
    /// `(block size in KiB, multiplier)` breakpoints, interpolated linearly
    /// and clamped at both ends. Empty means no degradation.
    pub write_degradation: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("write degradation multiplier {0} outside (0, 1]")]
    BadMultiplier(f64),
    #[error("write degradation breakpoints must have strictly increasing sizes")]
    UnsortedBreakpoints,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read device model: {0}")]
    Read(String),
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self::optane_905p()
    }
}

impl DeviceModel {
    /// Calibration of the Intel Optane 905P profile: 2548 MiB/s reads and
    /// 2255 MiB/s writes regardless of depth up to four requests in flight.
    pub fn optane_905p() -> Self {
        Self {
            read_bw_mib_s: 2548.0,
            write_bw_mib_s: 2255.0,
            base_latency: Duration::ZERO,
            max_depth: 4,
            write_degradation: vec![(1024, 1.0), (8192, 0.6)],
        }
    }

    pub fn without_degradation(mut self) -> Self {
        self.write_degradation.clear();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.read_bw_mib_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ModelError::NonPositive("read_bw_mib_s"));
        }
        if self.write_bw_mib_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ModelError::NonPositive("write_bw_mib_s"));
        }
        if self.max_depth == 0 {
            return Err(ModelError::NonPositive("max_depth"));
        }
        for w in self.write_degradation.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(ModelError::UnsortedBreakpoints);
            }
        }
        for &(_, m) in &self.write_degradation {
            if !(m > 0.0 && m <= 1.0) {
                return Err(ModelError::BadMultiplier(m));
            }
        }
        Ok(())
    }

    /// Write bandwidth multiplier for a request of `bytes`.
    pub fn degradation(&self, bytes: u64) -> f64 {
        let pts = &self.write_degradation;
        let Some(&(first_kib, first_m)) = pts.first() else {
            return 1.0;
        };
        let kib = bytes as f64 / 1024.0;
        if kib <= first_kib as f64 {
            return first_m;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = ((w[0].0 as f64, w[0].1), (w[1].0 as f64, w[1].1));
            if kib <= x1 {
                return y0 + (y1 - y0) * (kib - x0) / (x1 - x0);
            }
        }
        pts.last().unwrap().1
    }

    /// Effective bandwidth in MiB/s seen by a request of `bytes` when it has
    /// the device to itself.
    pub fn effective_bw_mib_s(&self, kind: IoKind, bytes: u64) -> f64 {
        match kind {
            IoKind::Read => self.read_bw_mib_s,
            IoKind::Write => self.write_bw_mib_s * self.degradation(bytes),
        }
    }

    /// Service demand of a request in nanoseconds at full device bandwidth.
    pub fn work_ns(&self, kind: IoKind, bytes: u64) -> f64 {
        bytes as f64 / (self.effective_bw_mib_s(kind, bytes) * MIB) * 1e9
    }

    /// Completion time of a request submitted together with `depth - 1`
    /// identical requests to an idle device.
    pub fn simulated_completion_time(&self, kind: IoKind, bytes: u64, depth: usize) -> Duration {
        let share = depth.max(1) as f64;
        let ns = self.work_ns(kind, bytes) * share;
        self.base_latency + Duration::from_nanos(ns.round() as u64)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        std::fs::read_to_string(path)
            .map_err(|e| ModelError::Read(format!("{}: {e}", path.display())))?
            .parse()
    }
}

impl fmt::Display for DeviceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "read_bw_mib_s={}", self.read_bw_mib_s)?;
        writeln!(f, "write_bw_mib_s={}", self.write_bw_mib_s)?;
        writeln!(f, "base_latency_us={}", self.base_latency.as_secs_f64() * 1e6)?;
        writeln!(f, "max_depth={}", self.max_depth)?;
        let pts: Vec<String> = self.write_degradation.iter().map(|(k, m)| format!("{k}:{m}")).collect();
        writeln!(f, "write_degradation={}", pts.join(","))
    }
}

impl FromStr for DeviceModel {
    type Err = ModelError;

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// keys not given keep the 905P calibration.
    fn from_str(text: &str) -> Result<Self, ModelError> {
        let mut m = DeviceModel::optane_905p();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ModelError::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64, ModelError> {
                v.parse::<f64>().map_err(|_| err(format!("`{v}` is not a number")))
            };
            match key {
                "read_bw_mib_s" => m.read_bw_mib_s = num(value)?,
                "write_bw_mib_s" => m.write_bw_mib_s = num(value)?,
                "base_latency_us" => {
                    let us = num(value)?;
                    if us < 0.0 {
                        return Err(err("base_latency_us must be non-negative".into()));
                    }
                    m.base_latency = Duration::from_secs_f64(us / 1e6);
                }
                "max_depth" => m.max_depth = value.parse().map_err(|_| err(format!("`{value}` is not a count")))?,
                "write_degradation" => {
                    m.write_degradation.clear();
                    for pt in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                        let (k, v) = pt
                            .split_once(':')
                            .ok_or_else(|| err(format!("expected size_kib:multiplier, got `{pt}`")))?;
                        let k = k
                            .trim()
                            .parse()
                            .map_err(|_| err(format!("`{k}` is not a size in KiB")))?;
                        m.write_degradation.push((k, num(v.trim())?));
                    }
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degradation_curve_is_flat_then_linear() {
        let m = DeviceModel::optane_905p();
        assert_eq!(m.degradation(4096), 1.0);
        assert_eq!(m.degradation(1 << 20), 1.0);
        assert!((m.degradation(8 << 20) - 0.6).abs() < 1e-12);
        let mid = m.degradation((1024 + 3584) * 1024);
        assert!((mid - 0.8).abs() < 1e-12);
        assert!((m.degradation(64 << 20) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn completion_time_arithmetic() {
        let m = DeviceModel::optane_905p();
        let t = m.simulated_completion_time(IoKind::Read, 1 << 20, 1);
        assert_eq!(t.as_nanos(), (1e9 / 2548.0_f64).round() as u128);
        let t = m.simulated_completion_time(IoKind::Write, 4096, 1);
        assert!((t.as_secs_f64() * 1e6 - 1.732).abs() < 0.001);
        let t = m.simulated_completion_time(IoKind::Read, 1 << 20, 2);
        assert!((t.as_secs_f64() * 1e6 - 784.93).abs() < 0.01);
        let mut lat = m.clone();
        lat.base_latency = Duration::from_micros(7);
        assert_eq!(
            lat.simulated_completion_time(IoKind::Read, 0, 1),
            Duration::from_micros(7)
        );
    }

    #[test]
    fn config_text_round_trips() {
        let mut m = DeviceModel::optane_905p();
        m.base_latency = Duration::from_micros(12);
        let back: DeviceModel = m.to_string().parse().unwrap();
        assert_eq!(back, m);
        let partial: DeviceModel = "# slower disk\nread_bw_mib_s = 500\n".parse().unwrap();
        assert_eq!(partial.read_bw_mib_s, 500.0);
        assert_eq!(partial.write_bw_mib_s, 2255.0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!("max_depth=0".parse::<DeviceModel>().is_err());
        assert!("write_degradation=1024:1.5".parse::<DeviceModel>().is_err());
        assert!("write_degradation=8:1,4:0.5".parse::<DeviceModel>().is_err());
        assert!("colour=blue".parse::<DeviceModel>().is_err());
        assert!(matches!(
            "read_bw_mib_s".parse::<DeviceModel>(),
            Err(ModelError::Parse { line: 1, .. })
        ));
    }
}
