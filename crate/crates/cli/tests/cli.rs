use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const SMALL: &str = r#"{
  "data": {"shapes": 10, "resolution": 16, "per_shape": 2},
  "pcn": {
    "lr_ae": 0.001, "lr_stn": 0.001, "epochs_joint": 2, "epochs_stn": 1, "batch_size": 8,
    "arch": {"latent_dim": 16, "encoder_widths": [2, 4, 4, 8, 8], "localizer_widths": [2, 4, 4, 4], "localizer_fc": [16, 8, 8]}
  },
  "implicit": {"width": 32, "epochs": 300, "lr": 0.003, "points_per_code": 1024, "prior_codes": 8},
  "psn": {"kind": "cimle", "epochs": 2, "lr": 0.001, "hidden": 16, "noise_dim": 4, "batch_size": 8}
}"#;

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn partsynth(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partsynth")).arg("--config").arg(cfg).args(args).output().unwrap()
}

fn ok(out: Output) -> Value {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn dependency_and_usage_errors_exit_2() {
    let (dir, cfg) = workspace();
    assert_eq!(partsynth(&cfg, &["train", "psn", "--model", "cimle"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["train", "implicit"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["train", "pcn"]).status.code(), Some(2), "no dataset yet");
    assert_eq!(partsynth(&cfg, &["synth", "--auto", "0", "3"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["synth", "--auto", "1", "3"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["serve", "--port", "0"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["psn-info", "--model", "mdn"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["train", "psn", "--model", "gan"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["frobnicate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataa": {}}"#).unwrap();
    assert_eq!(partsynth(&bad, &["gen-data"]).status.code(), Some(2));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let e = empty.to_str().unwrap();
    assert_eq!(partsynth(&cfg, &["evaluate", "--gen", e, "--ref", e, "--protocol", "table4"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["evaluate", "--gen", e, "--protocol", "table4"]).status.code(), Some(2));
    assert_eq!(partsynth(&cfg, &["evaluate", "--gen", e, "--protocol", "table1"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let (_dir, cfg) = workspace();
    ok(partsynth(&cfg, &["gen-data"]));
    let out = partsynth(&cfg, &["train", "pcn", "--lr", "3e38", "--epochs-joint", "3", "--epochs-stn", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline() {
    let (dir, cfg) = workspace();
    let root = dir.path();
    let data = ok(partsynth(&cfg, &["gen-data", "--seed", "7"]));
    assert_eq!((data["train_shapes"].as_u64(), data["test_shapes"].as_u64()), (Some(8), Some(2)));
    assert!(root.join("data/manifest.json").exists());

    let pcn = ok(partsynth(&cfg, &["train", "pcn", "--epochs-joint", "30", "--epochs-stn", "15"]));
    assert_eq!(pcn["epochs"], 45);
    let csv = std::fs::read_to_string(root.join("checkpoints/pcn_loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 46);
    assert!(csv.starts_with("epoch,"));

    ok(partsynth(&cfg, &["train", "implicit"]));
    ok(partsynth(&cfg, &["train", "psn", "--model", "cimle"]));
    assert!(root.join("checkpoints/psn_cimle_loss.csv").exists());

    let info = ok(partsynth(&cfg, &["psn-info", "--model", "cimle"]));
    assert_eq!(info["kind"], "cimle");
    assert_eq!(info["d"], 16);
    assert_eq!(info["trained"], true);

    let a = ok(partsynth(&cfg, &["synth", "--auto", "2", "3", "--seed", "1", "--out", root.join("a").to_str().unwrap()]));
    let b = ok(partsynth(&cfg, &["synth", "--auto", "2", "3", "--seed", "1", "--out", root.join("b").to_str().unwrap()]));
    let digests = |v: &Value| v.as_array().unwrap().iter().map(|o| o["digest"].as_str().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(digests(&a).len(), 3);
    assert_eq!(digests(&a), digests(&b));
    for o in a.as_array().unwrap() {
        assert_eq!(o["parts"], 3);
        assert!(Path::new(o["session"].as_str().unwrap()).exists());
    }

    let gen = root.join("a");
    let g = gen.to_str().unwrap();
    let same = ok(partsynth(&cfg, &["evaluate", "--gen", g, "--ref", g, "--protocol", "table4"]));
    assert_eq!((same["cov"].as_f64(), same["mmd"].as_f64(), same["jsd"].as_f64()), (Some(1.0), Some(0.0), Some(0.0)));
    assert!(root.join("out/evaluate_table4.json").exists());
    let vs = ok(partsynth(&cfg, &["evaluate", "--gen", g, "--ref", root.join("data").to_str().unwrap(), "--protocol", "table4"]));
    assert_eq!((vs["n_gen"].as_u64(), vs["n_ref"].as_u64()), (Some(3), Some(2)));

    let parts = root.join("parts");
    std::fs::create_dir(&parts).unwrap();
    let mut grids: Vec<_> = std::fs::read_dir(root.join("data")).unwrap().map(|e| e.unwrap().path()).filter(|p| p.to_string_lossy().ends_with("_t.vgrid")).collect();
    grids.sort();
    for p in &grids[..4] {
        std::fs::copy(p, parts.join(p.file_name().unwrap())).unwrap();
    }
    let t1 = ok(partsynth(&cfg, &["evaluate", "--gen", parts.to_str().unwrap(), "--protocol", "table1"]));
    assert_eq!(t1["protocol"], "table1");
    assert_eq!(t1["pair_count"], 6);
    assert_eq!(partsynth(&cfg, &["evaluate", "--gen", g, "--protocol", "table1"]).status.code(), Some(2));

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut server = Command::new(env!("CARGO_BIN_EXE_partsynth"))
        .arg("--config")
        .arg(&cfg)
        .args(["synth", "--serve", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let response = loop {
        if let Ok(mut s) = TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /sessions/0123 HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(100));
    };
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 404"), "{response}");
}
