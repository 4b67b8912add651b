//! Parameter sweeps over TIOM, speedup tables and plot data.

mod oracle;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use oracle::{oracle_makespan, OracleError, OracleSetup};

use crate::tiom::{desk_file_size, run_benchmark, Api, BenchEnv, BenchResult, Mode, Pattern, TiomConfig, TiomError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub compute_ms: Vec<f64>,
    pub block_kib: Vec<u64>,
    pub patterns: Vec<Pattern>,
    pub modes: Vec<Mode>,
    pub apis: Vec<Api>,
    pub max_parallel: Vec<usize>,
    pub reps: usize,
}

fn powers_of_two(lo: u64, hi: u64) -> impl Iterator<Item = u64> {
    (lo.trailing_zeros()..=hi.trailing_zeros()).map(|e| 1u64 << e)
}

impl SweepGrid {
    /// 1–128 ms × 4 KiB–8 MiB in powers of two, four repetitions.
    pub fn full() -> Self {
        Self {
            compute_ms: powers_of_two(1, 128).map(|m| m as f64).collect(),
            block_kib: powers_of_two(4, 8192).collect(),
            patterns: vec![Pattern::SeqRead],
            modes: vec![Mode::Mix],
            apis: vec![Api::Standalone],
            max_parallel: vec![128],
            reps: 4,
        }
    }

    /// {1, 4, 16, 64} ms × {4, 64, 1024, 8192} KiB, one repetition.
    pub fn desk() -> Self {
        Self {
            compute_ms: vec![1.0, 4.0, 16.0, 64.0],
            block_kib: vec![4, 64, 1024, 8192],
            reps: 1,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let empty = [
            ("compute_ms", self.compute_ms.is_empty()),
            ("block_kib", self.block_kib.is_empty()),
            ("patterns", self.patterns.is_empty()),
            ("modes", self.modes.is_empty()),
            ("apis", self.apis.is_empty()),
            ("max_parallel", self.max_parallel.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(SweepError::Grid(format!("axis {axis} is empty")));
        }
        if self.reps == 0 {
            return Err(SweepError::Grid("reps must be at least 1".into()));
        }
        if self.compute_ms.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(SweepError::Grid("compute times must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.compute_ms.len()
            * self.block_kib.len()
            * self.patterns.len()
            * self.modes.len()
            * self.apis.len()
            * self.max_parallel.len()
    }
}

/// Run-wide settings shared by every grid cell.
#[derive(Debug, Clone, Default)]
pub struct SweepSettings {
    pub env: BenchEnv,
    /// Fixed file size; the desk rule applies when unset.
    pub file_size: Option<u64>,
    pub time_limit: Option<Duration>,
    pub seed: u64,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub mode: String,
    pub api: String,
    pub pattern: String,
    pub block_kib: u64,
    pub compute_ms: f64,
    pub max_parallel: usize,
    pub rep: usize,
    pub elapsed_s: f64,
    pub bytes: u64,
    pub bandwidth_mibs: f64,
    pub completed: bool,
}

pub const CSV_HEADER: &str =
    "mode,api,pattern,block_kib,compute_ms,max_parallel,rep,elapsed_s,bytes,bandwidth_mibs,completed";

impl SweepRecord {
    pub fn new(cfg: &TiomConfig, rep: usize, r: &BenchResult) -> Self {
        Self {
            mode: cfg.mode.to_string(),
            api: cfg.api.to_string(),
            pattern: cfg.pattern.to_string(),
            block_kib: cfg.block_size / 1024,
            compute_ms: cfg.compute_time.as_secs_f64() * 1e3,
            max_parallel: cfg.max_parallel,
            rep,
            elapsed_s: r.elapsed.as_secs_f64(),
            bytes: r.bytes,
            bandwidth_mibs: r.bandwidth_mibs,
            completed: r.completed,
        }
    }

    /// Row for a run that failed outright.
    pub fn failed(cfg: &TiomConfig, rep: usize) -> Self {
        Self::new(
            cfg,
            rep,
            &BenchResult {
                elapsed: Duration::ZERO,
                bytes: 0,
                bandwidth_mibs: 0.0,
                tasks_executed: 0,
                completed: false,
            },
        )
    }

    /// Single CSV line without the trailing newline.
    pub fn to_csv_line(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self).expect("record serializes");
        let mut s = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
        s.truncate(s.trim_end().len());
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tiom(#[from] TiomError),
}

/// Benchmark configuration for one grid point.
#[allow(clippy::too_many_arguments)]
pub fn cell_config(
    settings: &SweepSettings,
    mode: Mode,
    api: Api,
    pattern: Pattern,
    block_kib: u64,
    compute_ms: f64,
    max_parallel: usize,
    rep: usize,
) -> TiomConfig {
    let block_size = block_kib * 1024;
    TiomConfig {
        mode,
        block_size,
        compute_time: Duration::from_secs_f64(compute_ms / 1e3),
        pattern,
        max_parallel,
        file_size: settings.file_size.unwrap_or_else(|| desk_file_size(block_size)),
        api,
        time_limit: settings.time_limit,
        seed: settings.seed.wrapping_add(rep as u64),
    }
}

/// Runs every cell and repetition, writing one CSV row each to `out` as it
/// finishes. Failed runs produce a row with `completed = false`.
pub fn run_sweep(grid: &SweepGrid, settings: &SweepSettings, out: &Path) -> Result<usize, SweepError> {
    grid.validate()?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    let mut rows = 0;
    for &mode in &grid.modes {
        for &pattern in &grid.patterns {
            for &mp in &grid.max_parallel {
                for &api in &grid.apis {
                    for &c in &grid.compute_ms {
                        for &b in &grid.block_kib {
                            for rep in 0..grid.reps {
                                let cfg = cell_config(settings, mode, api, pattern, b, c, mp, rep);
                                let rec = match run_benchmark(&cfg, &settings.env) {
                                    Ok(r) => SweepRecord::new(&cfg, rep, &r.result),
                                    Err(e) => {
                                        log::error!("{mode}/{api}/{pattern} {b} KiB {c} ms rep {rep}: {e}");
                                        SweepRecord::failed(&cfg, rep)
                                    }
                                };
                                log::info!("{}", rec.to_csv_line());
                                w.serialize(&rec)?;
                                w.flush()?;
                                rows += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>, SweepError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    })
}

/// `100 × (baseline / variant − 1)`.
pub fn speedup_percent(baseline: f64, variant: f64) -> f64 {
    100.0 * (baseline / variant - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupCell {
    pub mode: String,
    pub pattern: String,
    pub max_parallel: usize,
    pub compute_ms: f64,
    pub block_kib: u64,
    /// `None` when either api has no rows for the cell.
    pub speedup_percent: Option<f64>,
}

type CellKey = (String, String, usize, u64, u64);

fn cell_key(r: &SweepRecord) -> CellKey {
    (
        r.mode.clone(),
        r.pattern.clone(),
        r.max_parallel,
        r.compute_ms.to_bits(),
        r.block_kib,
    )
}

fn medians_by_cell(records: &[SweepRecord], api: &str, value: impl Fn(&SweepRecord) -> f64) -> BTreeMap<CellKey, f64> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.api == api) {
        groups.entry(cell_key(r)).or_default().push(value(r));
    }
    groups
        .into_iter()
        .filter_map(|(k, mut v)| median(&mut v).map(|m| (k, m)))
        .collect()
}

/// Per-cell speedup of `variant` over `baseline` from median elapsed times.
pub fn speedup_table(records: &[SweepRecord], baseline: Api, variant: Api) -> Vec<SpeedupCell> {
    let base = medians_by_cell(records, &baseline.to_string(), |r| r.elapsed_s);
    let var = medians_by_cell(records, &variant.to_string(), |r| r.elapsed_s);
    let mut keys: Vec<&CellKey> = base.keys().chain(var.keys()).collect();
    keys.sort_by(|a, b| {
        (&a.0, &a.1, a.2, f64::from_bits(a.3), a.4)
            .partial_cmp(&(&b.0, &b.1, b.2, f64::from_bits(b.3), b.4))
            .unwrap()
    });
    keys.dedup();
    keys.into_iter()
        .map(|k| SpeedupCell {
            mode: k.0.clone(),
            pattern: k.1.clone(),
            max_parallel: k.2,
            compute_ms: f64::from_bits(k.3),
            block_kib: k.4,
            speedup_percent: match (base.get(k), var.get(k)) {
                (Some(&b), Some(&v)) if v > 0.0 => Some(speedup_percent(b, v)),
                _ => None,
            },
        })
        .collect()
}

pub fn compute_speedup(csv: &Path, baseline: Api, variant: Api) -> Result<Vec<SpeedupCell>, SweepError> {
    Ok(speedup_table(&read_records(csv)?, baseline, variant))
}

/// One point of a plotted surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotCell {
    pub compute_ms: f64,
    pub block_kib: u64,
    pub z: Option<f64>,
}

impl From<&SpeedupCell> for PlotCell {
    fn from(c: &SpeedupCell) -> Self {
        Self {
            compute_ms: c.compute_ms,
            block_kib: c.block_kib,
            z: c.speedup_percent,
        }
    }
}

/// Median bandwidth per cell for one api (and optionally one mode/pattern).
pub fn bandwidth_surface(
    records: &[SweepRecord],
    api: Api,
    mode: Option<Mode>,
    pattern: Option<Pattern>,
) -> Vec<PlotCell> {
    let kept: Vec<SweepRecord> = records
        .iter()
        .filter(|r| mode.is_none_or(|m| r.mode == m.to_string()))
        .filter(|r| pattern.is_none_or(|p| r.pattern == p.to_string()))
        .cloned()
        .collect();
    medians_by_cell(&kept, &api.to_string(), |r| r.bandwidth_mibs)
        .into_iter()
        .map(|(k, z)| PlotCell {
            compute_ms: f64::from_bits(k.3),
            block_kib: k.4,
            z: Some(z),
        })
        .collect()
}

fn fmt_z(z: Option<f64>) -> String {
    z.map_or_else(|| "NaN".to_string(), |v| format!("{v:.4}"))
}

/// Path of the CSV written next to the matrix file.
pub fn csv_twin(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".csv");
    PathBuf::from(s)
}

/// Writes a gnuplot matrix (`compute_ms block_kib z`, one blank line between
/// scan rows of equal compute time) to `out` and the same points as CSV to
/// [`csv_twin`]`(out)`.
pub fn emit_plot_data(cells: &[PlotCell], out: &Path) -> Result<(), SweepError> {
    let mut sorted = cells.to_vec();
    sorted.sort_by(|a, b| {
        a.compute_ms
            .total_cmp(&b.compute_ms)
            .then(a.block_kib.cmp(&b.block_kib))
    });
    let mut m = BufWriter::new(File::create(out)?);
    let mut c = BufWriter::new(File::create(csv_twin(out))?);
    writeln!(m, "# compute_ms block_kib z")?;
    writeln!(c, "compute_ms,block_kib,z")?;
    let mut prev: Option<f64> = None;
    for p in &sorted {
        if prev.is_some_and(|x| x != p.compute_ms) {
            writeln!(m)?;
        }
        prev = Some(p.compute_ms);
        writeln!(m, "{} {} {}", p.compute_ms, p.block_kib, fmt_z(p.z))?;
        writeln!(c, "{},{},{}", p.compute_ms, p.block_kib, fmt_z(p.z))?;
    }
    m.flush()?;
    c.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(api: &str, c: f64, b: u64, rep: usize, elapsed: f64) -> SweepRecord {
        SweepRecord {
            mode: "mix".into(),
            api: api.into(),
            pattern: "sr".into(),
            block_kib: b,
            compute_ms: c,
            max_parallel: 128,
            rep,
            elapsed_s: elapsed,
            bytes: 1 << 20,
            bandwidth_mibs: 1.0 / elapsed,
            completed: true,
        }
    }

    #[test]
    fn grid_sizes() {
        let full = SweepGrid::full();
        assert_eq!((full.compute_ms.len(), full.block_kib.len()), (8, 12));
        assert_eq!(full.cell_count() * full.reps, 384);
        assert_eq!(SweepGrid::desk().cell_count(), 16);
        let bad = SweepGrid {
            reps: 0,
            ..SweepGrid::desk()
        };
        assert!(bad.validate().is_err());
        let empty = SweepGrid {
            apis: vec![],
            ..SweepGrid::desk()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn header_matches_record_layout() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(rec("nb", 1.0, 4, 0, 1.0)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn speedup_formula() {
        assert_eq!(speedup_percent(2.0, 2.0), 0.0);
        assert_eq!(speedup_percent(60.0, 30.0), 100.0);
    }

    #[test]
    fn medians_drive_the_table() {
        let rows = vec![
            rec("standalone", 1.0, 4, 0, 10.0),
            rec("standalone", 1.0, 4, 1, 30.0),
            rec("standalone", 1.0, 4, 2, 12.0),
            rec("nb", 1.0, 4, 0, 6.0),
            rec("nb", 1.0, 4, 1, 4.0),
            rec("nb", 1.0, 4, 2, 100.0),
            rec("standalone", 2.0, 4, 0, 5.0),
        ];
        let t = speedup_table(&rows, Api::Standalone, Api::NonBlocking);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].speedup_percent, Some(100.0));
        assert_eq!(t[1].speedup_percent, None);
    }

    #[test]
    fn plot_rows_are_grouped_by_compute_time() {
        let dir = std::env::temp_dir().join(format!("sweep-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("m.dat");
        let cells = [
            PlotCell {
                compute_ms: 2.0,
                block_kib: 4,
                z: Some(1.5),
            },
            PlotCell {
                compute_ms: 1.0,
                block_kib: 64,
                z: None,
            },
            PlotCell {
                compute_ms: 1.0,
                block_kib: 4,
                z: Some(-2.0),
            },
        ];
        emit_plot_data(&cells, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text, "# compute_ms block_kib z\n1 4 -2.0000\n1 64 NaN\n\n2 4 1.5000\n");
        let twin = std::fs::read_to_string(csv_twin(&out)).unwrap();
        assert_eq!(twin.lines().count(), 4);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
