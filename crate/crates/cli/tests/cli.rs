use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gta_core::ops::reference_gemm;
use gta_core::scheduler::scatter_import;
use gta_core::{GemmOperands, PGemmOp, Wide};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gta")).args(args).env_remove("GTA_CALIBRATION").output().expect("spawn gta")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).filter(|rest| rest.starts_with(' ')).map(str::trim))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

#[test]
fn simulate_small_int8_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sim.json");
    let o = gta(&[
        "simulate",
        "--op",
        "M=4,N=4,K=4,prec=int8",
        "--lanes",
        "1",
        "--dataflow",
        "ws",
        "--seed",
        "7",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "output"), "exact");

    // Recompute the product the binary should have produced from the same seed.
    let op: PGemmOp = "M=4,N=4,K=4,prec=int8".parse().unwrap();
    let data = GemmOperands::random(&op, &mut ChaCha8Rng::seed_from_u64(7));
    let expected = reference_gemm(&data.a, &data.b);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rows = json["output"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            let got: Wide = v.as_str().unwrap().parse().unwrap();
            assert_eq!(got, expected[(i, j)], "C[{i}][{j}]");
        }
    }
    assert_eq!(json["verdict"]["exact"], true);
}

#[test]
fn os_int64_on_one_lane_uses_the_whole_mpra() {
    let o = gta(&["simulate", "--dataflow", "os", "--prec", "int64", "--lanes", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "arrangement"), "8x8");
    assert_eq!(field(&out, "pe_count"), "64");
    assert_eq!(field(&out, "output"), "exact");
}

#[test]
fn trace_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = gta(&["simulate", "--op", "M=2,N=2,K=2,prec=int16", "--lanes", "1", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(trace).unwrap();
    assert!(text.lines().count() > 0);
    assert!(text.lines().all(|l| l.split(',').count() == 6), "{text}");
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[gta]\nlanes = 4\nlanez = 8\n").unwrap();
    let o = gta(&["--config", path.to_str().unwrap(), "cost"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("lanez"), "{err}");

    fs::write(&path, "[gta]\nlanes = 0\n").unwrap();
    assert_eq!(gta(&["--config", path.to_str().unwrap(), "cost"]).status.code(), Some(1));
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[gta]\nlanes = 4\n").unwrap();
    let cfg = path.to_str().unwrap();
    let o = gta(&["--config", cfg, "cost", "--op", "M=64,N=64,K=64,prec=int8"]);
    assert_eq!(field(&stdout(&o), "arrangement"), "16x16");
    let o = gta(&["--config", cfg, "--lanes", "2", "cost", "--op", "M=64,N=64,K=64,prec=int8"]);
    assert_eq!(field(&stdout(&o), "arrangement"), "16x8");
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(gta(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gta(&["simulate", "--op", "M=4,N=4"]).status.code(), Some(1));
    assert_eq!(gta(&["simulate", "--arrangement", "3x5"]).status.code(), Some(1));
    assert_eq!(gta(&["--help"]).status.code(), Some(0));
    assert_eq!(gta(&["--version"]).status.code(), Some(0));
}

#[test]
fn calibration_env_var_is_the_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gains.toml");
    fs::write(&path, "[int8]\ngain = \"1\"\n").unwrap();
    let run = |env: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gta"));
        cmd.args(["cost", "--op", "M=64,N=64,K=64,prec=int8"]).env_remove("GTA_CALIBRATION");
        if let Some(p) = env {
            cmd.env("GTA_CALIBRATION", p);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        field(&stdout(&o), "simd_cycles").parse::<u64>().unwrap()
    };
    // Gain 8 by default, 1 with the calibration file.
    assert_eq!(run(Some(&path)), 8 * run(None));
}

fn schedule_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["schedule", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    gta(&args)
}

#[test]
fn schedule_outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--op", "M=96,N=40,K=72,prec=fp16", "--precisions", "int8,fp16"];
    let (oa, ob) = (schedule_into(a.path(), &args), schedule_into(b.path(), &args));
    assert_eq!(oa.status.code(), Some(0), "{}", stderr(&oa));
    assert_eq!(oa.stdout, ob.stdout);
    for name in ["schedule.json", "scatter.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn alexnet_conv_scatter_spans_three_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let o = schedule_into(dir.path(), &["--workload", "ALI", "--label", "conv2", "--precisions", "int8,fp16,fp32"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = scatter_import(fs::File::open(dir.path().join("scatter.csv")).unwrap()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), report["candidates"].as_array().unwrap().len());
    for prec in ["int8", "fp16", "fp32"] {
        assert!(rows.iter().any(|r| r.precision == prec), "{prec} missing");
    }
    let min = |f: fn(&gta_core::scheduler::ScatterRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    assert_eq!(min(|r| r.cycles_ratio), 1.0);
    assert_eq!(min(|r| r.mem_ratio), 1.0);
    assert!(rows.iter().all(|r| r.cycles_ratio >= 1.0 && r.mem_ratio >= 1.0));
    assert!(stdout(&o).contains("chosen"));
}

#[test]
fn single_candidate_space_is_chosen_trivially() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[gta]\nlanes = 1\n[knobs]\ndataflows = [\"ws\"]\nmax_k_segments = 1\ndirections = [\"lateral\"]\nedge_fill = [false]\n").unwrap();
    let out = dir.path().join("out");
    let o = gta(&[
        "--config",
        cfg.to_str().unwrap(),
        "schedule",
        "--op",
        "M=8,N=8,K=8,prec=int8",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = scatter_import(fs::File::open(out.join("scatter.csv")).unwrap()).unwrap();
    // One systolic configuration plus the SIMD candidate.
    assert_eq!(rows.len(), 2);
}

#[test]
fn workload_schedule_writes_per_op_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = schedule_into(dir.path(), &["--workload", "BNM"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("workload.json")).unwrap()).unwrap();
    assert_eq!(json["name"], "BNM");
    let csvs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("scatter-"));
    assert_eq!(csvs.count(), 1);
}

#[test]
fn workloads_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.toml");
    let o = gta(&["workloads", "--export", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("ALI"));
    let o = gta(&["--workloads", path.to_str().unwrap(), "workloads", "ALI"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("conv2"));
}

#[test]
fn verify_quick_passes_and_faults_exit_two() {
    let o = gta(&["verify", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("7 of 7 suites passed"));
    for fault in ["arithmetic", "cost"] {
        let o = gta(&["verify", "--quick", "--inject-fault", fault]);
        assert_eq!(o.status.code(), Some(2), "{fault}: {}", stdout(&o));
        assert!(stdout(&o).contains("FAIL"));
    }
}

#[test]
fn precision_changes_the_shape_of_the_scatter() {
    // Normalised point sets for one layer at two precisions. A uniform cost
    // scaling would leave them identical.
    let points = |prec: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = schedule_into(dir.path(), &["--workload", "ALI", "--label", "conv2", "--prec", prec]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let rows = scatter_import(fs::File::open(dir.path().join("scatter.csv")).unwrap()).unwrap();
        rows.iter()
            .map(|r| {
                (
                    r.dataflow.clone(),
                    r.rows,
                    r.cols,
                    r.k_segments,
                    r.direction.clone(),
                    r.edge_fill,
                    r.cycles_ratio,
                    r.mem_ratio,
                )
            })
            .collect::<Vec<_>>()
    };
    let (int8, fp32) = (points("int8"), points("fp32"));
    assert_ne!(int8, fp32);
}
