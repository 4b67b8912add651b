use std::path::Path;
use std::process::{Command, Output};

fn tiom(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tiom"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "tiom {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_prints_header_and_one_row_per_rep() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&tiom(
        &[
            "run",
            "--mode",
            "1to1",
            "--file-size",
            "4",
            "--api",
            "bq",
            "--workers",
            "4",
            "--reps",
            "3",
        ],
        dir.path(),
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("mode,api,pattern"));
    for (rep, l) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(&f[..3], ["1to1", "bq", "sr"]);
        assert_eq!(f[6], rep.to_string());
        assert_eq!(f[8], (4u64 << 20).to_string());
        assert_eq!(f[10], "true");
    }
}

#[test]
fn oracle_matches_a_virtual_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--mode",
        "fjc",
        "--file-size",
        "8",
        "--api",
        "nb",
        "--workers",
        "3",
        "--pattern",
        "rr",
    ];
    let run = stdout(&tiom(&[&["run"][..], &args].concat(), dir.path()));
    let elapsed: f64 = run.lines().nth(1).unwrap().split(',').nth(7).unwrap().parse().unwrap();
    let oracle = stdout(&tiom(&[&["oracle"][..], &args].concat(), dir.path()));
    let makespan: f64 = oracle.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert!((elapsed - makespan).abs() < 1e-9, "{elapsed} vs {makespan}");
}

#[test]
fn sweep_speedup_and_plot_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiom(
        &[
            "sweep",
            "--compute-ms",
            "1,2",
            "--block-kib",
            "4,64",
            "--apis",
            "standalone,nb",
            "--file-size",
            "2",
            "--workers",
            "8",
            "--out",
            "s.csv",
        ],
        p,
    );
    let csv = std::fs::read_to_string(p.join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);

    let table = stdout(&tiom(&["speedup", "s.csv"], p));
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(5).unwrap().parse::<f64>().is_ok()));

    tiom(&["plot", "s.csv", "--out", "m.dat"], p);
    let m = std::fs::read_to_string(p.join("m.dat")).unwrap();
    assert!(m.starts_with("# compute_ms block_kib z\n"));
    assert_eq!(m.lines().filter(|l| l.is_empty()).count(), 1);
    assert_eq!(std::fs::read_to_string(p.join("m.dat.csv")).unwrap().lines().count(), 5);
}

#[test]
fn profile_echoes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("flat.model");
    std::fs::write(
        &model,
        "read_bw_mib_s = 1000\nwrite_bw_mib_s = 500\nbase_latency_us = 10\nmax_depth = 4\n",
    )
    .unwrap();
    let out = stdout(&tiom(
        &[
            "profile",
            "--device-model",
            model.to_str().unwrap(),
            "--block-kib",
            "1024",
            "--depths",
            "4",
            "--duration-ms",
            "1000",
        ],
        dir.path(),
    ));
    let mib_s: f64 = out.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((mib_s - 1000.0).abs() < 20.0, "{out}");
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["run", "--api", "async"][..], &["run", "--file-size", "0"], &["sweep"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_tiom"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} accepted");
    }
}
