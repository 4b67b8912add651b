use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tasio_core::io::{
    device_profile, AccessPattern, BackendKind, ContextConfig, DeviceModel, IoContext, IoKind, ProfileSpec,
};
use tasio_core::runtime::{ClockMode, ManualClock, RealClock};
use tasio_core::sweep::{
    bandwidth_surface, compute_speedup, csv_twin, emit_plot_data, oracle_makespan, read_records, run_sweep,
    OracleSetup, PlotCell, SweepGrid, SweepRecord, SweepSettings, CSV_HEADER,
};
use tasio_core::tiom::{build_task_graph, run_benchmark, Api, BenchEnv, Mode, Pattern, TiomConfig};

#[derive(Parser)]
#[command(
    name = "tiom",
    version,
    about = "Task I/O Meter: task-aware storage I/O benchmark and sweep harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark configuration and print CSV rows.
    Run(RunArgs),
    /// Run a parameter grid, writing one CSV row per run.
    Sweep(SweepArgs),
    /// Speedup per cell between two apis of a sweep CSV.
    Speedup(SpeedupArgs),
    /// Emit gnuplot matrix data (plus a CSV twin) from a sweep CSV.
    Plot(PlotArgs),
    /// Predict a configuration's makespan with the discrete-event oracle.
    Oracle(BenchArgs),
    /// Measure device throughput per block size and queue depth.
    Profile(ProfileArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Sim,
    Pool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Real,
    Virtual,
}

#[derive(Args, Clone)]
struct EnvArgs {
    #[arg(long, value_enum, default_value = "sim")]
    backend: Backend,
    /// Device model file (key=value lines); the Optane 905P profile otherwise.
    #[arg(long)]
    device_model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "virtual")]
    clock: Clock,
    #[arg(long, default_value_t = 56)]
    workers: usize,
    /// Polling period in microseconds.
    #[arg(long, default_value_t = 100)]
    poll_us: u64,
    #[arg(long, default_value_t = 1000)]
    max_in_flight: usize,
    /// Delegate threads for the pool backend.
    #[arg(long, default_value_t = 4)]
    delegates: usize,
    /// Benchmark file for the pool backend (a temporary file otherwise).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Enforce direct-I/O alignment on every request.
    #[arg(long)]
    direct: bool,
}

impl EnvArgs {
    fn model(&self) -> Result<DeviceModel> {
        match &self.device_model {
            Some(p) => DeviceModel::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(DeviceModel::optane_905p()),
        }
    }

    fn env(&self) -> Result<BenchEnv> {
        Ok(BenchEnv {
            workers: self.workers,
            clock_mode: match self.clock {
                Clock::Real => ClockMode::Real,
                Clock::Virtual => ClockMode::Virtual,
            },
            poll_period: Duration::from_micros(self.poll_us),
            backend: match self.backend {
                Backend::Sim => BackendKind::Simulated,
                Backend::Pool => BackendKind::Pool,
            },
            model: self.model()?,
            delegates: self.delegates,
            max_in_flight: self.max_in_flight,
            file_path: self.file.clone(),
            direct: self.direct,
        })
    }
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[arg(long, default_value = "mix")]
    mode: Mode,
    /// Block size in KiB.
    #[arg(long, default_value_t = 64)]
    block_size: u64,
    #[arg(long, default_value_t = 1.0)]
    compute_ms: f64,
    #[arg(long, default_value = "sr")]
    pattern: Pattern,
    #[arg(long, default_value_t = 128)]
    max_parallel: usize,
    /// File size in MiB.
    #[arg(long, default_value_t = 256)]
    file_size: u64,
    #[arg(long, default_value = "standalone")]
    api: Api,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time limit in seconds; tasks starting later skip their work.
    #[arg(long)]
    time_limit: Option<f64>,
    #[command(flatten)]
    env: EnvArgs,
}

impl BenchArgs {
    fn config(&self, rep: usize) -> Result<TiomConfig> {
        if !(self.compute_ms.is_finite() && self.compute_ms >= 0.0) {
            bail!("--compute-ms must be a non-negative number");
        }
        let cfg = TiomConfig {
            mode: self.mode,
            block_size: self.block_size * 1024,
            compute_time: Duration::from_secs_f64(self.compute_ms / 1e3),
            pattern: self.pattern,
            max_parallel: self.max_parallel,
            file_size: self.file_size << 20,
            api: self.api,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            seed: self.seed.wrapping_add(rep as u64),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Start from the full grid (1–128 ms × 4 KiB–8 MiB, 4 reps) instead of
    /// the desk grid.
    #[arg(long)]
    full: bool,
    #[arg(long, value_delimiter = ',')]
    compute_ms: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    block_kib: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    patterns: Option<Vec<Pattern>>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    #[arg(long, value_delimiter = ',', default_value = "standalone,bq,nb")]
    apis: Vec<Api>,
    #[arg(long, value_delimiter = ',')]
    max_parallel: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Fixed file size in MiB; otherwise max(64 MiB, 1024 blocks).
    #[arg(long)]
    file_size: Option<u64>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    env: EnvArgs,
}

#[derive(Args)]
struct SpeedupArgs {
    csv: PathBuf,
    #[arg(long, default_value = "standalone")]
    baseline: Api,
    #[arg(long, default_value = "nb")]
    variant: Api,
}

#[derive(Clone, Copy, ValueEnum)]
enum Surface {
    Speedup,
    Bandwidth,
}

#[derive(Args)]
struct PlotArgs {
    csv: PathBuf,
    #[arg(long, value_enum, default_value = "speedup")]
    surface: Surface,
    #[arg(long, default_value = "standalone")]
    baseline: Api,
    /// Variant api for speedup, or the api whose bandwidth is plotted.
    #[arg(long, default_value = "nb")]
    api: Api,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    pattern: Option<Pattern>,
    /// Matrix output; the CSV twin gets a `.csv` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Access {
    Seq,
    Rand,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,1024")]
    block_kib: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    duration_ms: u64,
    #[arg(long, value_enum, default_value = "rand")]
    access: Access,
    #[arg(long, default_value = "read")]
    kind: IoKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated file size in MiB (or size to prepare for the pool backend).
    #[arg(long, default_value_t = 1024)]
    file_size: u64,
    #[command(flatten)]
    env: EnvArgs,
}

fn run(args: RunArgs) -> Result<()> {
    let env = args.bench.env.env()?;
    let mut out = match &args.out {
        Some(p) => {
            let mut f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            writeln!(f, "{CSV_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    println!("{CSV_HEADER}");
    for rep in 0..args.reps.max(1) {
        let cfg = args.bench.config(rep)?;
        let rep_out = run_benchmark(&cfg, &env).with_context(|| format!("rep {rep}"))?;
        let rec = SweepRecord::new(&cfg, rep, &rep_out.result);
        let line = rec.to_csv_line();
        println!("{line}");
        if let Some(f) = out.as_mut() {
            writeln!(f, "{line}")?;
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let base = if args.full {
        SweepGrid::full()
    } else {
        SweepGrid::desk()
    };
    let grid = SweepGrid {
        compute_ms: args.compute_ms.unwrap_or(base.compute_ms),
        block_kib: args.block_kib.unwrap_or(base.block_kib),
        patterns: args.patterns.unwrap_or(base.patterns),
        modes: args.modes.unwrap_or(base.modes),
        apis: args.apis,
        max_parallel: args.max_parallel.unwrap_or(base.max_parallel),
        reps: args.reps.unwrap_or(base.reps),
    };
    let settings = SweepSettings {
        env: args.env.env()?,
        file_size: args.file_size.map(|m| m << 20),
        time_limit: args.time_limit.map(Duration::from_secs_f64),
        seed: args.seed,
    };
    let rows = run_sweep(&grid, &settings, &args.out)?;
    eprintln!("{rows} rows written to {}", args.out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".into(), |x| format!("{x:.2}"))
}

fn speedup(args: SpeedupArgs) -> Result<()> {
    let cells = compute_speedup(&args.csv, args.baseline, args.variant)?;
    println!("mode,pattern,max_parallel,compute_ms,block_kib,speedup_percent");
    for c in cells {
        println!(
            "{},{},{},{},{},{}",
            c.mode,
            c.pattern,
            c.max_parallel,
            c.compute_ms,
            c.block_kib,
            fmt_opt(c.speedup_percent)
        );
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let keep = |mode: &str, pattern: &str| {
        args.mode.is_none_or(|m| m.to_string() == mode) && args.pattern.is_none_or(|p| p.to_string() == pattern)
    };
    let cells: Vec<PlotCell> = match args.surface {
        Surface::Speedup => compute_speedup(&args.csv, args.baseline, args.api)?
            .iter()
            .filter(|c| keep(&c.mode, &c.pattern))
            .map(PlotCell::from)
            .collect(),
        Surface::Bandwidth => bandwidth_surface(&read_records(&args.csv)?, args.api, args.mode, args.pattern),
    };
    emit_plot_data(&cells, &args.out)?;
    eprintln!(
        "{} points written to {} and {}",
        cells.len(),
        args.out.display(),
        csv_twin(&args.out).display()
    );
    Ok(())
}

fn oracle(args: BenchArgs) -> Result<()> {
    let cfg = args.config(0)?;
    let env = args.env.env()?;
    let graph = build_task_graph(&cfg)?;
    let setup = OracleSetup {
        workers: env.workers,
        model: env.model,
        api: cfg.api,
        kind: cfg.pattern.kind(),
        block_size: cfg.block_size,
        poll_period: env.poll_period,
    };
    let m = oracle_makespan(&graph, &setup)?;
    println!(
        "tasks={} edges={} series={} makespan_s={:.9}",
        graph.tasks.len(),
        graph.edges.len(),
        graph.series,
        m.as_secs_f64()
    );
    Ok(())
}

fn profile(args: ProfileArgs) -> Result<()> {
    let env = args.env.env()?;
    let size = args.file_size << 20;
    let (ctx, file) = match env.backend {
        BackendKind::Simulated => {
            let ctx = IoContext::create(
                ContextConfig::simulated(env.max_in_flight, env.model.clone()),
                Arc::new(ManualClock::new()),
            )?;
            let f = ctx.create_sim_file(size)?;
            (ctx, f)
        }
        BackendKind::Pool => {
            let path = env
                .file_path
                .clone()
                .context("--file is required with --backend pool")?;
            let f = File::options()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            if f.metadata()?.len() < size {
                f.set_len(size)?;
            }
            let ctx = IoContext::create(
                ContextConfig::pool(env.max_in_flight, env.delegates),
                Arc::new(RealClock::new()),
            )?;
            let h = ctx.register_file(f)?;
            (ctx, h)
        }
    };
    let spec = ProfileSpec {
        block_sizes: args.block_kib.iter().map(|k| k * 1024).collect(),
        depths: args.depths.clone(),
        duration: Duration::from_millis(args.duration_ms),
        pattern: match args.access {
            Access::Seq => AccessPattern::Seq,
            Access::Rand => AccessPattern::Rand,
        },
        kind: args.kind,
        seed: args.seed,
    };
    let cells = device_profile(&ctx, file, &spec)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "kind,access,block_kib,depth,mib_s")?;
    for c in cells {
        writeln!(
            stdout,
            "{},{},{},{},{:.1}",
            args.kind,
            spec.pattern,
            c.block_size / 1024,
            c.depth,
            c.mib_s
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Speedup(a) => speedup(a),
        Command::Plot(a) => plot(a),
        Command::Oracle(a) => oracle(a),
        Command::Profile(a) => profile(a),
    }
}
