//! End-to-end checks of the command-line surface: subcommands, flags,
//! output files, and exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coopbev"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("coopbev-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_run_and_outputs() {
    let dir = workdir("run");
    let scenario = dir.join("occ.json");
    let status = bin()
        .args(["gen-scenario", "--preset", "occlusion", "--frames", "3"])
        .arg("--out")
        .arg(&scenario)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(scenario.exists());

    let out = dir.join("stt");
    let status = bin()
        .args(["run", "--mode", "stt", "--threshold", "0.01", "--dump-boxes"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["frames.csv", "summary.json", "detections.rec", "ground_truth.rec"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    // identical invocation produces identical bytes
    let first = std::fs::read(out.join("frames.csv")).unwrap();
    let status = bin()
        .args(["run", "--mode", "stt", "--threshold", "0.01"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(out.join("frames.csv")).unwrap(), first);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gradcheck_exits_zero() {
    let output = bin().arg("gradcheck").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("mada_agent_features"));
    assert!(text.contains("pass"));
}

#[test]
fn sweeps_and_ablation_write_tables() {
    let dir = workdir("sweep");
    let scenario = dir.join("s.json");
    assert!(bin()
        .args(["gen-scenario", "--preset", "occlusion", "--frames", "2"])
        .arg("--out")
        .arg(&scenario)
        .status()
        .unwrap()
        .success());

    let out = dir.join("rob");
    assert!(bin()
        .args(["sweep-robustness", "--axis", "latency_ms", "--values", "0,100"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(out.join("robustness-latency_ms.csv").exists());

    let out = dir.join("abl");
    assert!(bin()
        .args(["ablate"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5); // header + 4 rows
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_inputs_exit_nonzero() {
    // missing scenario file
    let status = bin()
        .args(["run", "--scenario", "/nonexistent/nope.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // empty robustness values
    let dir = workdir("bad");
    let scenario = dir.join("s.json");
    assert!(bin()
        .args(["gen-scenario", "--preset", "sparse", "--frames", "2"])
        .arg("--out")
        .arg(&scenario)
        .status()
        .unwrap()
        .success());
    let status = bin()
        .args(["sweep-robustness", "--axis", "latency_ms", "--values", ""])
        .arg("--scenario")
        .arg(&scenario)
        .status()
        .unwrap();
    assert_ne!(status.code(), Some(0));
    std::fs::remove_dir_all(&dir).ok();
}
