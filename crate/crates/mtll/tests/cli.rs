//! End-to-end checks of the CLI subcommands that are not already exercised
//! by the campaign criteria: simulate -> filter round trip and compare.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtll"))
}

fn tmpdir(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_then_filter_round_trip() {
    let dir = tmpdir("cli-roundtrip");
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[grid]\ndt = 1e-2\nhorizon = 2.0\n[campaign]\nseed = 3\n",
    )
    .unwrap();

    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let path_csv = dir.join("path.csv");
    let text = std::fs::read_to_string(&path_csv).unwrap();
    assert!(text.starts_with("t,"), "unexpected header: {}", text.lines().next().unwrap());
    assert!(text.lines().count() > 200);

    for kind in ["mne", "ekf", "pll"] {
        let out = dir.join(kind);
        let status = bin()
            .args(["filter", "--kind", kind, "--input"])
            .arg(&path_csv)
            .args(["--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "filter --kind {kind} failed");
        let est = std::fs::read_to_string(out.join("estimate.csv")).unwrap();
        let rows: Vec<&str> = est.lines().collect();
        assert_eq!(rows[0], "t,xhat");
        assert_eq!(rows.len(), 202); // header + initial estimate + 200 steps
        for row in &rows[1..] {
            let xh: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
            assert!(xh.is_finite());
        }
    }
}

#[test]
fn compare_merges_sweep_reports() {
    let dir = tmpdir("cli-compare");
    let mut reports = Vec::new();
    for eps in ["0.6", "0.45"] {
        let cfg = dir.join(format!("cfg-{eps}.toml"));
        std::fs::write(
            &cfg,
            format!(
                "[model]\neps = {eps}\n[grid]\ndt = 1e-2\nhorizon = 20.0\n\
                 [filters]\nrun = [\"pll\"]\n[campaign]\nrealizations = 20\nseed = 5\n"
            ),
        )
        .unwrap();
        let out = dir.join(format!("run-{eps}"));
        let status = bin()
            .args(["mtll", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--workers", "1"])
            .status()
            .unwrap();
        assert!(status.success());
        reports.push(out.join("report.json"));
    }

    let mut cmd = bin();
    cmd.arg("compare");
    for r in &reports {
        cmd.arg("--report").arg(r);
    }
    let status = cmd.arg("--out").arg(&dir).status().unwrap();
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("compare.json")).unwrap()).unwrap();
    let scalings = summary["scalings"].as_array().unwrap();
    assert_eq!(scalings.len(), 1);
    assert_eq!(scalings[0]["kind"], "pll");
    assert!(scalings[0]["slope"].as_f64().unwrap().is_finite());
    assert_eq!(summary["ratios"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_config_exits_nonzero_with_json_error() {
    let dir = tmpdir("cli-badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[grid]\ndt = -1.0\n").unwrap();
    let out = bin()
        .args(["mtll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr should end with JSON");
    assert!(record["error"].as_str().unwrap().contains("dt"));
}
