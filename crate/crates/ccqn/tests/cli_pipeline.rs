//! End-to-end command surface: gen → run → profile → trace through the same
//! functions the binary dispatches to, including flag validation and
//! byte-level determinism of every emitted file.

use std::collections::BTreeMap;
use std::path::Path;

use ccqn::cli::{
    cmd_gen, cmd_profile, cmd_run, cmd_trace, execute, Cli, CliError, GenArgs, MethodName,
    MetricName, ProfileArgs, RunArgs, TraceArgs,
};
use clap::Parser;

fn gen_args(dir: &Path, n: usize, seed: u64) -> GenArgs {
    GenArgs {
        n,
        a: -1.0,
        b: 1.0,
        eps: 0.3,
        seed,
        out: dir.join("p.qp"),
    }
}

fn run_args(dir: &Path) -> RunArgs {
    RunArgs {
        problem: vec![dir.join("p.qp")],
        method: vec![MethodName::Sd, MethodName::Mlbfgs, MethodName::Ccqn],
        beta: None,
        window: None,
        sigma2: 1e-2,
        samples: 5,
        seeds: 3,
        seed_base: 1,
        tol: 1e-8,
        maxk: 25,
        out_dir: dir.join("traces"),
    }
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
    out
}

fn run_pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    cmd_gen(&gen_args(dir, 10, 5)).unwrap();
    cmd_run(&run_args(dir)).unwrap();
    cmd_profile(&ProfileArgs {
        traces: dir.join("traces"),
        metric: MetricName::Steps,
        tol: Some(1e-1),
        out: dir.join("profile.csv"),
    })
    .unwrap();
    cmd_profile(&ProfileArgs {
        traces: dir.join("traces"),
        metric: MetricName::MinNorm,
        tol: None,
        out: dir.join("minnorm.csv"),
    })
    .unwrap();
    cmd_trace(&TraceArgs {
        traces: dir.join("traces"),
        problem: None,
        out: dir.join("curves.csv"),
    })
    .unwrap();

    let mut all = read_dir_bytes(dir);
    all.extend(read_dir_bytes(&dir.join("traces")));
    all
}

#[test]
fn pipeline_is_deterministic_and_complete() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let run1 = run_pipeline(d1.path());
    let run2 = run_pipeline(d2.path());
    assert_eq!(run1.keys().collect::<Vec<_>>(), run2.keys().collect::<Vec<_>>());
    for (name, bytes) in &run1 {
        // the manifest echoes absolute input paths, so it differs across
        // temp directories; every CSV and problem file must be identical
        if name != "manifest.txt" {
            assert_eq!(bytes, &run2[name], "{name} differs between runs");
        }
    }

    // 1 problem × 3 methods × 3 seeds + manifest
    let traces = read_dir_bytes(&d1.path().join("traces"));
    let csvs = traces.keys().filter(|k| k.ends_with(".csv")).count();
    assert_eq!(csvs, 9);
    assert!(traces.contains_key("manifest.txt"));

    // profile CSV header and method coverage
    let profile = String::from_utf8(run1["profile.csv"].clone()).unwrap();
    assert!(profile.starts_with("method,tau,fraction\n"));
    for m in ["sd", "mlbfgs", "ccqn-b0"] {
        assert!(profile.contains(m), "profile missing {m}");
    }
    let curves = String::from_utf8(run1["curves.csv"].clone()).unwrap();
    assert!(curves.starts_with("method,k,mean_log10_norm\n"));
}

#[test]
fn run_rejects_bad_flag_combinations() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(&gen_args(dir.path(), 4, 1)).unwrap();

    let mut args = run_args(dir.path());
    args.method = vec![MethodName::Sd];
    args.beta = Some(0.1);
    assert!(matches!(cmd_run(&args), Err(CliError::Usage(_))));

    let mut args = run_args(dir.path());
    args.method = vec![MethodName::Ccqn];
    args.window = Some(4);
    assert!(matches!(cmd_run(&args), Err(CliError::Usage(_))));

    let mut args = run_args(dir.path());
    args.method = vec![MethodName::Lmccqn];
    args.beta = Some(1.5);
    assert!(matches!(cmd_run(&args), Err(CliError::Usage(_))));
}

#[test]
fn gen_rejects_zero_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = gen_args(dir.path(), 1, 1);
    args.n = 0;
    assert!(matches!(cmd_gen(&args), Err(CliError::Usage(_))));
}

#[test]
fn unknown_method_fails_argument_parsing() {
    let result = Cli::try_parse_from([
        "ccqn", "run", "--problem", "p.qp", "--method", "nonsense", "--sigma2", "1e-2",
        "--out-dir", "out",
    ]);
    assert!(result.is_err());
}

#[test]
fn gen_cli_parse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.qp");
    let cli = Cli::try_parse_from([
        "ccqn", "gen", "--n", "6", "--a", "-1", "--b", "1", "--eps", "0.3", "--seed", "9",
        "--out", out.to_str().unwrap(),
    ])
    .unwrap();
    execute(cli).unwrap();
    let problem = ccqn::problem::load_problem(&out).unwrap();
    assert_eq!(problem.dim(), 6);
}

#[test]
fn profile_of_empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("traces");
    std::fs::create_dir_all(&empty).unwrap();
    let result = cmd_profile(&ProfileArgs {
        traces: empty,
        metric: MetricName::MinNorm,
        tol: None,
        out: dir.path().join("out.csv"),
    });
    assert!(result.is_err());
}

#[test]
fn trace_command_requires_problem_filter_for_mixed_directories() {
    let dir = tempfile::tempdir().unwrap();
    cmd_gen(&gen_args(dir.path(), 5, 1)).unwrap();
    let mut args = run_args(dir.path());
    args.method = vec![MethodName::Sd];
    args.maxk = 5;
    cmd_run(&args).unwrap();

    // second problem into the same trace dir
    let mut gen2 = gen_args(dir.path(), 5, 2);
    gen2.out = dir.path().join("q.qp");
    cmd_gen(&gen2).unwrap();
    let mut args2 = run_args(dir.path());
    args2.problem = vec![dir.path().join("q.qp")];
    args2.method = vec![MethodName::Sd];
    args2.maxk = 5;
    cmd_run(&args2).unwrap();

    let unfiltered = cmd_trace(&TraceArgs {
        traces: dir.path().join("traces"),
        problem: None,
        out: dir.path().join("curves.csv"),
    });
    assert!(matches!(unfiltered, Err(CliError::Usage(_))));

    let label = ccqn::problem::load_problem(&dir.path().join("q.qp"))
        .unwrap()
        .label()
        .to_string();
    cmd_trace(&TraceArgs {
        traces: dir.path().join("traces"),
        problem: Some(ccqn::harness::sanitize_label(&label)),
        out: dir.path().join("curves.csv"),
    })
    .unwrap();
}
