use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tlayer-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn tlayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlayer"))
        .args(args)
        .env_remove("TLAYER_WORKERS")
        .output()
        .expect("run tlayer")
}

fn run_config(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join(config);
    let mut args = vec![
        cmd,
        "-c",
        cfg.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    tlayer(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const MM_JUMP: &str = r#"
[density]
name = "modica-mortola"
dim = 2

[jump]
nu = [1.0, 0.0]
v_plus = [1.0]
v_minus = [-1.0]
"#;

#[test]
fn e1_on_bundled_config_matches_eight_thirds() {
    let out = scratch("e1");
    let o = run_config("e1", "mm_e1.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    assert!(stdout.starts_with("tlayer e1: "));
    let j = read_json(&out.join("e1.json"));
    assert_eq!(j["schema"], 1);
    assert_eq!(j["command"], "e1");
    let v = j["result"]["value"].as_f64().unwrap();
    assert!((v - 8.0 / 3.0).abs() < 1e-3, "{v}");
    assert!(j["inputs"].get("workers").is_none());
    let csv = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,theta0");
    assert_eq!(lines.count(), 1025);
}

#[test]
fn empty_interface_list_gives_zero_trace() {
    let out = scratch("empty");
    let o = run_config("recover", "recover_constant.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("recover.json"));
    assert_eq!(j["result"]["interfaces"], 0);
    let pts = j["result"]["primary"]["points"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    for p in pts {
        assert_eq!(p["energy"].as_f64().unwrap(), 0.0);
    }
    let csv = std::fs::read_to_string(out.join("trace_primary.csv")).unwrap();
    assert!(csv.starts_with("epsilon,energy,predicted,gap\n"));
}

#[test]
fn limit_density_writes_tables() {
    let out = scratch("limit");
    let o = run_config("limit-density", "mm_limit_density.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("limit_density.json"));
    assert!(j["result"]["value"].as_f64().unwrap() >= 8.0 / 3.0);
    let gamma = std::fs::read_to_string(out.join("gamma.csv")).unwrap();
    let rows: Vec<&str> = gamma.lines().collect();
    assert_eq!(rows[0], "t,gamma0");
    assert_eq!(rows.len(), 1 + 129);
    // '.' decimal separator and no locale grouping
    assert!(rows[1].split(',').all(|c| c.parse::<f64>().is_ok()));
    assert!(out.join("kernel_profile.csv").exists());
}

#[test]
fn missing_or_malformed_config_exits_with_one() {
    let out = scratch("bad");
    let o = tlayer(&[
        "e1",
        "-c",
        "/nonexistent/run.toml",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let p = write_config(&out, &format!("{MM_JUMP}\nbogus_key = 3\n"));
    let o = tlayer(&[
        "e1",
        "-c",
        p.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let p = write_config(&out, "[density]\nname = \"modica-mortola\"\ndim = 2\n");
    let o = tlayer(&[
        "e1",
        "-c",
        p.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "missing jump section");
}

#[test]
fn incompatible_jump_is_a_config_error() {
    let out = scratch("incompatible");
    let body = r#"
[density]
name = "aviles-giga"
dim = 2

[jump]
nu = [1.0, 0.0]
v_plus = [0.6, 0.8]
v_minus = [0.6, -0.8]
"#;
    let p = write_config(&out, body);
    let o = tlayer(&[
        "e1",
        "-c",
        p.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn invalid_worker_environment_exits_with_one() {
    let out = scratch("env");
    let cfg = configs().join("mm_e1.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_tlayer"))
        .args([
            "e1",
            "-c",
            cfg.to_str().unwrap(),
            "--output-dir",
            out.to_str().unwrap(),
        ])
        .env("TLAYER_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unconverged_solve_exits_with_two() {
    let out = scratch("unconverged");
    let p = write_config(
        &out,
        &format!("{MM_JUMP}\n[e1]\ngrid_n = 256\nmax_iter = 1\n"),
    );
    let o = tlayer(&[
        "e1",
        "-c",
        p.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert_eq!(
        read_json(&out.join("e1.json"))["result"]["converged"],
        false
    );
}

#[test]
fn flags_override_the_file() {
    let out = scratch("flags");
    let o = run_config(
        "e1",
        "mm_e1.toml",
        &out,
        &["--grid-n", "256", "--seed", "42"],
    );
    assert_eq!(o.status.code(), Some(0));
    let j = read_json(&out.join("e1.json"));
    assert_eq!(j["seed"], 42);
    assert_eq!(j["result"]["grid_n"], 256);
    assert_eq!(j["inputs"]["e1"]["grid_n"], 256);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = scratch("w1");
    let b = scratch("w3");
    assert_eq!(
        run_config("eper", "ag_eper.toml", &a, &["--workers", "1"])
            .status
            .code(),
        Some(0)
    );
    let cfg = configs().join("ag_eper.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_tlayer"))
        .args([
            "eper",
            "-c",
            cfg.to_str().unwrap(),
            "--output-dir",
            b.to_str().unwrap(),
        ])
        .env("TLAYER_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["eper.json", "cell.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let j = read_json(&a.join("eper.json"));
    assert!(j["result"].get("field").is_none());
    assert!(j["result"]["invariants"].as_array().unwrap().is_empty());
}

#[test]
fn scan_includes_cell_values() {
    let out = scratch("scan");
    let o = run_config("scan", "mm_scan.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("scan.json"));
    assert_eq!(j["result"]["e1"].as_array().unwrap().len(), 5);
    assert_eq!(j["result"]["eper"]["table"].as_array().unwrap().len(), 5);
    let csv = std::fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(csv.starts_with("L,R_L,converged,grad_norm,iterations\n"));
    assert!(out.join("scan_eper.csv").exists());
}

#[test]
fn recover_with_field_flag_and_modified_sequence() {
    let out = scratch("recover2d");
    let o = run_config("recover", "mm_recover_2d.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("recover.json"));
    let primary = j["result"]["primary"]["extrapolated"].as_f64().unwrap();
    let modified = j["result"]["modified"]["trace"]["extrapolated"]
        .as_f64()
        .unwrap();
    assert!(modified <= primary + 1e-3);
    assert!(out.join("trace_modified.csv").exists());

    let field = configs().join("fields/mm_step_1d.toml");
    let out1 = scratch("recover1d");
    let o = tlayer(&[
        "recover",
        "--field",
        field.to_str().unwrap(),
        "--output-dir",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn check_suite_passes() {
    let out = scratch("check");
    let o = run_config("check", "check.toml", &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let j = read_json(&out.join("check.json"));
    assert_eq!(j["result"]["failed"], 0);
    let reports = j["result"]["reports"].as_array().unwrap();
    assert!(reports.len() > 50);
    assert!(reports.iter().all(|r| r.get("runtime").is_none()));
}

#[test]
fn unwritable_output_directory_is_a_config_error() {
    let dir = scratch("ro");
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("not-a-dir");
    std::fs::write(&file, "x").unwrap();
    let o = run_config("e1", "mm_e1.toml", &file, &[]);
    assert_eq!(o.status.code(), Some(1));
}
