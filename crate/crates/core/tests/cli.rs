use std::path::Path;
use std::process::{Command, Output};

const WORKED: &str = "c_in = 2\nh_in = 5\nw_in = 5\nn_kernels = 2\nh_k = 3\nw_k = 3\nnbop_pe = 72\nsize_mem = 100\n";

fn convstep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convstep")).args(args).env_remove("CONVSTEP_BUDGET").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{WORKED}strategy = \"rowbyrow\"\ngroup_size = 2\n"));
    let trace = dir.path().join("t.jsonl");
    let o = convstep(&["simulate", "--config", &cfg, "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("step 2: loads 6 pixels, writes 2 positions"));
    let trace = std::fs::read_to_string(trace).unwrap();
    assert_eq!(trace.lines().count(), 6);
    assert!(trace.lines().nth(1).unwrap().contains("\"i_slice\":6"));
}

#[test]
fn simulate_reports_capacity_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{WORKED}strategy = \"rowbyrow\"\n").replace("size_mem = 100", "size_mem = 70"),
    );
    let o = convstep(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step 2"), "{}", stderr(&o));
}

#[test]
fn verify_names_bad_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{WORKED}strategy = \"zigzag\"\n"));
    let csv = write(dir.path(), "s.csv", "step,patch_ids\n1,0;1\n2,2;3\n3,4;40\n");
    let o = convstep(&["verify", "--config", &cfg, "--strategy", &csv]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn verify_flags_reload_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{WORKED}strategy = \"zigzag\"\n"));
    let csv = dir.path().join("s.csv");
    let g = convstep(&[
        "generate",
        "--strategy",
        "s1-baseline",
        "--group-size",
        "1",
        "--config",
        &cfg,
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(g.status.code(), Some(0));
    let o = convstep(&["verify", "--config", &cfg, "--strategy", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["valid"], false);
    assert_eq!(report["numeric_match"], true);
    assert_eq!(report["violations"][0]["kind"], "ReloadLimit");
}

#[test]
fn optimize_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{WORKED}strategy = \"optimize\"\n"));
    let out = dir.path().join("best.csv");
    let o = convstep(&["optimize", "--config", &cfg, "--k", "kmin", "--budget", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "optimal");
    assert!(summary["objective"].as_u64().unwrap() <= summary["start_objective"].as_u64().unwrap());
    let v = convstep(&["verify", "--config", &cfg, "--strategy", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
}

#[test]
fn optimize_without_solution_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // reload bound 1 cannot be met with overlapping 3x3 patches in singleton groups
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{WORKED}strategy = \"optimize\"\nnb_data_reload = 1\nnb_patches_max = 1\n"),
    );
    let out = dir.path().join("best.csv");
    let o = convstep(&["optimize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_5() {
    let o = convstep(&["simulate", "--config", "/nonexistent/c.toml"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn compare_writes_sweep_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{WORKED}strategy = \"zigzag\"\n"));
    let out = dir.path().join("cmp");
    let o = convstep(&["compare", "--config", &cfg, "--sweep", "group-size=1..2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("axis,strategy,duration,peak_footprint,load_traffic,write_traffic\n"));
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(std::fs::read_to_string(out.join("grid_zigzag_g2.txt")).unwrap(), "1 1 2\n3 3 2\n4 4 5\n");
    assert!(out.join("grid_rowbyrow_g1.svg").exists());
}
